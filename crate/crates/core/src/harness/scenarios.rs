//! Scenario runners. Each sweep point owns the random stream
//! `(base_seed, point index)`, points run in parallel, and rows come out in
//! sweep order.

use rayon::prelude::*;

use super::config::{ExperimentConfig, SweepAxis};
use super::table::{Cell, ResultTable};
use crate::error::{Error, Result};
use crate::mathkit::SimRng;
use crate::sensing::{channel_dof, pf_analytic, run_detection_pipeline, PipelineConfig};
use crate::throughput::{grid_search, local_search, random_sampling, random_starts, OptResult, ProblemSpec, Variant};
use crate::units::{dbm_to_watts, watts_to_dbm};
use crate::wpt::{
    css_outage_profile, mu_coefficient, outage_closed_form, outage_monte_carlo, system_outage, OutageKind,
};

pub const SCENARIOS: [&str; 7] = ["fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8"];

/// Sweep axes of `scenario` with their default values.
pub fn default_axes(scenario: &str) -> Result<Vec<SweepAxis>> {
    let axis = |name: &str, values: Vec<f64>| SweepAxis { name: name.into(), values };
    let alpha2 = || vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3];
    let kappas = || vec![0.25, 0.5, 0.75, 1.0];
    Ok(match scenario {
        "fig2" => vec![
            axis("lambda_p", log_space(1e-4, 1e-2, 10)),
            axis("ps_dbm", vec![0.0, 10.0]),
            axis("d0_m", vec![1.0, 1.5]),
        ],
        "fig3" => vec![
            axis("snr_db", (0..7).map(|i| -14.0 + 2.0 * i as f64).collect()),
            axis("kappa", vec![1.0, 0.5, 0.25]),
        ],
        "fig4" => vec![axis("alpha2_min", alpha2())],
        "fig5" => vec![axis("alpha2_min", alpha2()), axis("kappa", kappas())],
        "fig6" => vec![axis("lambda_p", log_space(1e-4, 1e-2, 10)), axis("ps_dbm", vec![0.0])],
        "fig7" => vec![
            axis("j1", vec![4.0, 5.0, 8.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0]),
            axis("kappa", kappas()),
        ],
        "fig8" => vec![axis("alpha2_min", alpha2()), axis("kappa", kappas())],
        other => return Err(Error::UnknownScenario(other.into())),
    })
}

/// `count` log-spaced points from `lo` to `hi`, both included.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| {
            if i == count - 1 {
                hi
            } else {
                10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64)
            }
        })
        .collect()
}

/// Checks the scenario id and sweep axes and fills in missing axes, giving
/// the config that is echoed next to the output.
pub fn resolve(cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
    let scenario = cfg.experiment.scenario.as_str();
    let defaults = default_axes(scenario)?;
    for (i, a) in cfg.sweep.iter().enumerate() {
        if !defaults.iter().any(|d| d.name == a.name) {
            let names: Vec<_> = defaults.iter().map(|d| d.name.as_str()).collect();
            return Err(Error::InvalidSweep(format!(
                "sweep[{i}]: scenario {scenario} has no axis `{}` (expected one of {})",
                a.name,
                names.join(", ")
            )));
        }
        if cfg.sweep[..i].iter().any(|b| b.name == a.name) {
            return Err(Error::InvalidSweep(format!("sweep[{i}]: axis `{}` given twice", a.name)));
        }
        if a.values.is_empty() {
            return Err(Error::InvalidSweep(format!("sweep[{i}]: axis `{}` has no values", a.name)));
        }
        for &v in &a.values {
            check_axis_value(cfg, &a.name, v).map_err(|m| Error::InvalidSweep(format!("sweep[{i}] `{}`: {m}", a.name)))?;
        }
    }
    let mut out = cfg.clone();
    out.sweep = defaults
        .into_iter()
        .map(|d| cfg.sweep.iter().find(|a| a.name == d.name).cloned().unwrap_or(d))
        .collect();
    out.validate()?;
    Ok(out)
}

fn check_axis_value(cfg: &ExperimentConfig, name: &str, v: f64) -> std::result::Result<(), String> {
    let ok = match name {
        "lambda_p" => v >= 0.0 && v.is_finite(),
        "ps_dbm" | "snr_db" => v.is_finite(),
        "d0_m" => v >= 1.0 && v.is_finite(),
        "kappa" => v > 0.0 && v <= 1.0,
        "alpha2_min" => (0.0..1.0).contains(&v),
        "j1" => v.fract() == 0.0 && v >= 1.0 && v <= cfg.css.j as f64,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("value {v} out of range"))
    }
}

fn axis<'a>(cfg: &'a ExperimentConfig, name: &str) -> &'a [f64] {
    cfg.axis(name).expect("resolved config carries every axis")
}

/// Runs the scenario named in `cfg`. Metadata records the resolved config's
/// hash, the base seed and the tool version.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let cfg = resolve(cfg)?;
    let mut table = match cfg.experiment.scenario.as_str() {
        "fig2" => fig2(&cfg)?,
        "fig3" => fig3(&cfg)?,
        "fig4" => compare_optimizers(&cfg)?,
        "fig5" => fig5(&cfg)?,
        "fig6" => fig6(&cfg)?,
        "fig7" => fig7(&cfg)?,
        "fig8" => fig8(&cfg)?,
        other => return Err(Error::UnknownScenario(other.into())),
    };
    stamp(&mut table, &cfg);
    Ok(table)
}

fn stamp(table: &mut ResultTable, cfg: &ExperimentConfig) {
    table.set_meta("scenario", cfg.experiment.scenario.clone());
    table.set_meta("config_sha256", cfg.hash());
    table.set_meta("base_seed", cfg.experiment.base_seed.to_string());
    table.set_meta("version", crate::VERSION);
}

fn fill(table: &mut ResultTable, rows: Vec<Vec<Cell>>) -> Result<()> {
    rows.into_iter().try_for_each(|r| table.push(r))
}

fn par_rows<P, F>(points: &[P], f: F) -> Result<Vec<Vec<Cell>>>
where
    P: Sync,
    F: Fn(usize, &P) -> Result<Vec<Cell>> + Sync,
{
    points.par_iter().enumerate().map(|(i, p)| f(i, p)).collect()
}

fn fig2(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut points = Vec::new();
    for &ps in axis(cfg, "ps_dbm") {
        for &d0 in axis(cfg, "d0_m") {
            for &lp in axis(cfg, "lambda_p") {
                points.push((lp, ps, d0));
            }
        }
    }
    let frame = cfg.frame_split()?;
    let rows = par_rows(&points, |i, &(lp, ps, d0)| {
        let mut params = cfg.wpt_params();
        params.lambda_p = lp;
        params.d0 = d0;
        let mut thr = cfg.thresholds();
        thr.ps = dbm_to_watts(ps);
        let mu = mu_coefficient(OutageKind::S, &params, &frame, &thr)?;
        let analytic = outage_closed_form(mu, &params)?;
        let rng = SimRng::new(cfg.experiment.base_seed, i as u64);
        let mc = outage_monte_carlo(OutageKind::S, &params, &frame, &thr, cfg.experiment.trials, None, &rng)?;
        Ok(vec![lp.into(), ps.into(), d0.into(), analytic.into(), mc.p.into(), mc.stderr.into()])
    })?;
    let mut t = ResultTable::new(["lambda_p", "Ps_dBm", "d0", "p_out_analytic", "p_out_mc", "mc_stderr"]);
    fill(&mut t, rows)?;
    Ok(t)
}

fn fig3(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let s = &cfg.sensing;
    // Full geometry: one decision per channel over the n Nyquist samples.
    let full_bins = (s.n / 2).max(1);
    let mut points = Vec::new();
    for &snr_db in axis(cfg, "snr_db") {
        for &kappa in axis(cfg, "kappa") {
            if kappa >= 1.0 {
                points.push((snr_db, 1.0, "full", full_bins, cfg.experiment.detection_trials));
            }
            points.push((snr_db, kappa, "compressed", s.cs_bins_per_channel, cfg.experiment.cs_trials));
        }
    }
    let rows = par_rows(&points, |i, &(snr_db, kappa, geometry, bins, trials)| {
        let snr = 10f64.powf(snr_db / 10.0);
        let pc = PipelineConfig {
            channels: s.channels,
            occupied: s.occupied,
            bins_per_channel: bins,
            snr,
            sigma2: s.sigma2,
            kappa,
            pd_target: s.pd_target,
            trials,
        };
        let n_eff = channel_dof(bins);
        let analytic = pf_analytic(s.pd_target, snr, n_eff)?;
        let out = run_detection_pipeline(&pc, &SimRng::new(cfg.experiment.base_seed, i as u64))?;
        Ok(vec![
            snr_db.into(),
            kappa.into(),
            geometry.into(),
            bins.into(),
            n_eff.into(),
            analytic.into(),
            out.pf().into(),
            out.pd().into(),
            trials.into(),
            out.nonconverged.into(),
        ])
    })?;
    let mut t = ResultTable::new([
        "snr_db",
        "kappa",
        "geometry",
        "bins_per_channel",
        "n_eff",
        "pf_analytic",
        "pf_empirical",
        "pd_empirical",
        "trials",
        "nonconverged",
    ]);
    fill(&mut t, rows)?;
    Ok(t)
}

fn opt_cells(r: &OptResult) -> Vec<Cell> {
    if r.feasible {
        vec![
            r.value.into(),
            r.best.alpha1.into(),
            r.best.beta.into(),
            r.best.alpha2.into(),
            watts_to_dbm(r.best.pt).into(),
        ]
    } else {
        vec![f64::NAN.into(); 5]
    }
}

const OPT_COLUMNS: [&str; 5] = ["tau_opt", "alpha1", "beta", "alpha2", "pt_dbm"];

/// Runs the three optimizers on `spec`; `stream` seeds the stochastic ones.
fn all_methods(cfg: &ExperimentConfig, spec: &ProblemSpec, stream: u64) -> Result<[OptResult; 3]> {
    let rng = SimRng::new(cfg.experiment.base_seed, stream);
    let grid = grid_search(spec, &cfg.grid_steps())?;
    let random = random_sampling(spec, cfg.optimizer.random_z, &rng.child(0))?;
    let lc = cfg.local_config();
    let starts = random_starts(spec, lc.starts, &rng.child(1))?;
    let local = local_search(spec, &starts, lc.budget)?;
    Ok([grid, random, local])
}

fn method_rows(lead: &[Cell], results: &[OptResult]) -> Vec<Vec<Cell>> {
    results
        .iter()
        .map(|r| {
            let mut row = lead.to_vec();
            row.push(r.method.to_string().into());
            row.extend(opt_cells(r));
            row.push(r.evaluations.into());
            row.push(r.feasible.into());
            row
        })
        .collect()
}

fn method_table(lead: &[&str]) -> ResultTable {
    let mut cols: Vec<&str> = lead.to_vec();
    cols.push("method");
    cols.extend(OPT_COLUMNS);
    cols.extend(["evaluations", "feasible"]);
    ResultTable::new(cols)
}

/// Grid, random and local optimizers for P0 across the `alpha2_min` axis.
pub fn compare_optimizers(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let points = axis(cfg, "alpha2_min").to_vec();
    let per_point: Vec<Vec<Vec<Cell>>> = points
        .par_iter()
        .enumerate()
        .map(|(i, &a2)| {
            let spec = ProblemSpec { alpha2_min: a2, ..cfg.problem_spec(Variant::P0) };
            let res = all_methods(cfg, &spec, i as u64)?;
            Ok(method_rows(&[a2.into()], &res))
        })
        .collect::<Result<_>>()?;
    let mut t = method_table(&["alpha2_min"]);
    fill(&mut t, per_point.into_iter().flatten().collect())?;
    Ok(t)
}

/// Solves `variant` for the config with all three methods.
pub fn optimize(cfg: &ExperimentConfig, variant: Variant) -> Result<ResultTable> {
    let spec = cfg.problem_spec(variant);
    spec.validate()?;
    let res = all_methods(cfg, &spec, 0)?;
    let mut t = method_table(&["variant", "kappa", "alpha2_min"]);
    let name = match variant {
        Variant::P0 => "p0",
        Variant::P1 => "p1",
    };
    fill(&mut t, method_rows(&[name.into(), spec.kappa.into(), spec.alpha2_min.into()], &res))?;
    stamp(&mut t, cfg);
    t.set_meta("scenario", format!("optimize-{name}"));
    Ok(t)
}

fn grid_surface(cfg: &ExperimentConfig, variant: Variant, points: &[(f64, f64, usize)]) -> Result<Vec<Vec<Cell>>> {
    par_rows(points, |_, &(a2, kappa, j1)| {
        let spec = ProblemSpec { alpha2_min: a2, kappa, j1, ..cfg.problem_spec(variant) };
        let r = grid_search(&spec, &cfg.grid_steps())?;
        let mut row: Vec<Cell> = Vec::new();
        if variant == Variant::P1 {
            row.push(j1.into());
        }
        row.extend([a2.into(), kappa.into(), r.feasible.into()]);
        row.extend(opt_cells(&r));
        row.push(r.evaluations.into());
        Ok(row)
    })
}

fn surface_table(variant: Variant) -> ResultTable {
    let mut cols = Vec::new();
    if variant == Variant::P1 {
        cols.push("j1");
    }
    cols.extend(["alpha2_min", "kappa", "feasible"]);
    cols.extend(OPT_COLUMNS);
    cols.push("evaluations");
    ResultTable::new(cols)
}

fn fig5(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut points = Vec::new();
    for &a2 in axis(cfg, "alpha2_min") {
        for &k in axis(cfg, "kappa") {
            points.push((a2, k, 1));
        }
    }
    let mut t = surface_table(Variant::P0);
    fill(&mut t, grid_surface(cfg, Variant::P0, &points)?)?;
    Ok(t)
}

fn fig6(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut points = Vec::new();
    for &ps in axis(cfg, "ps_dbm") {
        for &lp in axis(cfg, "lambda_p") {
            points.push((lp, ps));
        }
    }
    let frame = cfg.frame_split()?;
    let rows = par_rows(&points, |_, &(lp, ps)| {
        let mut params = cfg.wpt_params();
        params.lambda_p = lp;
        let mut thr = cfg.thresholds();
        thr.ps = dbm_to_watts(ps);
        let p_s = outage_closed_form(mu_coefficient(OutageKind::S, &params, &frame, &thr)?, &params)?;
        let p_t = outage_closed_form(mu_coefficient(OutageKind::T, &params, &frame, &thr)?, &params)?;
        let single = system_outage(p_s, p_t)?;
        let css = css_outage_profile(&params, &frame, &thr, cfg.css.j, cfg.css.j1)?;
        Ok(vec![
            lp.into(),
            ps.into(),
            p_s.into(),
            p_t.into(),
            single.into(),
            css.active.into(),
            css.inactive.into(),
            css.average.into(),
        ])
    })?;
    let mut t = ResultTable::new([
        "lambda_p",
        "Ps_dBm",
        "p_out_sensing",
        "p_out_transmit",
        "p_out_single",
        "p_out_active",
        "p_out_inactive",
        "p_out_average",
    ]);
    fill(&mut t, rows)?;
    Ok(t)
}

fn fig7(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let a2 = cfg.optimizer.alpha2_min;
    let mut points = Vec::new();
    for &j1 in axis(cfg, "j1") {
        for &k in axis(cfg, "kappa") {
            points.push((a2, k, j1 as usize));
        }
    }
    let mut t = surface_table(Variant::P1);
    fill(&mut t, grid_surface(cfg, Variant::P1, &points)?)?;
    Ok(t)
}

fn fig8(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut points = Vec::new();
    for &a2 in axis(cfg, "alpha2_min") {
        for &k in axis(cfg, "kappa") {
            points.push((a2, k, cfg.css.j1));
        }
    }
    let mut t = surface_table(Variant::P1);
    fill(&mut t, grid_surface(cfg, Variant::P1, &points)?)?;
    Ok(t)
}
