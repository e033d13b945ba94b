//! Experiment configuration (TOML).
//!
//! Every section and key is optional; missing values take the defaults
//! below. Powers are in dBm, densities in PB/m² and distances in m, as the
//! key names say. Unknown keys are rejected and every error names the
//! dotted key path it refers to.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::completion::McBoundMode;
use crate::error::{Error, Result};
use crate::sensing::SensingParams;
use crate::throughput::{GridSteps, LocalConfig, ProblemSpec, Variant};
use crate::units::{db_to_linear, dbm_to_watts, free_space_constant};
use crate::wpt::{FrameSplit, PowerThresholds, WptParams};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub wpt: WptSection,
    pub frame: FrameSection,
    pub power: PowerSection,
    pub sensing: SensingSection,
    pub css: CssSection,
    pub optimizer: OptimizerSection,
    pub sweep: Vec<SweepAxis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub scenario: String,
    /// Monte Carlo trials per outage point.
    pub trials: u64,
    /// Scenes per detection point at the full sensing geometry.
    pub detection_trials: u64,
    /// Scenes per detection point at the compressed geometry.
    pub cs_trials: u64,
    pub base_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            scenario: "fig2".into(),
            trials: 100_000,
            detection_trials: 10_000,
            cs_trials: 300,
            base_seed: 1,
            output: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WptSection {
    pub lambda_p_per_m2: f64,
    pub antennas: u32,
    pub pp_dbm: f64,
    pub eta: f64,
    pub carrier_hz: f64,
    /// Overrides the free-space constant derived from `carrier_hz`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_loss_a: Option<f64>,
    pub xi: f64,
    pub d0_m: f64,
}

impl Default for WptSection {
    fn default() -> Self {
        Self {
            lambda_p_per_m2: 1e-3,
            antennas: 32,
            pp_dbm: 43.0,
            eta: 0.8,
            carrier_hz: 900e6,
            path_loss_a: None,
            xi: 2.0,
            d0_m: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSection {
    pub alpha1: f64,
    pub beta: f64,
    pub alpha2: f64,
    pub kappa: f64,
    pub t_s: f64,
}

impl Default for FrameSection {
    fn default() -> Self {
        Self { alpha1: 0.25, beta: 0.25, alpha2: 0.2, kappa: 1.0, t_s: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerSection {
    pub ps_dbm: f64,
    pub pt_dbm: f64,
    pub pt_min_dbm: f64,
    pub pt_max_dbm: f64,
    pub n0_dbm: f64,
}

impl Default for PowerSection {
    fn default() -> Self {
        Self { ps_dbm: 0.0, pt_dbm: 0.0, pt_min_dbm: 0.0, pt_max_dbm: 20.0, n0_dbm: -90.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingSection {
    pub channels: usize,
    pub occupied: usize,
    /// Nyquist samples per sensing decision.
    pub n: usize,
    pub snr_db: f64,
    pub sigma2: f64,
    pub pd_target: f64,
    pub e_s_j: f64,
    pub c_cs: f64,
    /// Bins per channel in the compressed detection experiments.
    pub cs_bins_per_channel: usize,
}

impl Default for SensingSection {
    fn default() -> Self {
        Self {
            channels: 32,
            occupied: 4,
            n: 1000,
            snr_db: -10.0,
            sigma2: 1.0,
            pd_target: 0.9,
            e_s_j: 2.5e-7,
            c_cs: 2.0,
            cs_bins_per_channel: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CssSection {
    pub j: usize,
    pub j1: usize,
    /// `practical` or `theoretical`.
    pub mc_bound: String,
    pub mc_ratio: f64,
    pub c_mc: f64,
}

impl Default for CssSection {
    fn default() -> Self {
        Self { j: 50, j1: 30, mc_bound: "practical".into(), mc_ratio: 0.3, c_mc: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub alpha2_min: f64,
    /// `kappa` used by the cooperative problem when not swept.
    pub p1_kappa: f64,
    pub d_alpha1: f64,
    pub d_beta: f64,
    pub d_alpha2: f64,
    pub d_pt_db: f64,
    pub random_z: u64,
    pub local_starts: usize,
    pub local_budget: u64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            alpha2_min: 0.05,
            p1_kappa: 0.5,
            d_alpha1: 0.02,
            d_beta: 0.02,
            d_alpha2: 0.02,
            d_pt_db: 1.0,
            random_z: 10_000,
            local_starts: 20,
            local_budget: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub name: String,
    pub values: Vec<f64>,
}

fn cfg_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config { key: key.into(), msg: msg.into() }
}

/// Parses a config document. Defaults fill anything not given.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| {
        let key = e.span().map(|s| key_at(text, s.start)).unwrap_or_default();
        cfg_err(&key, e.message().to_string())
    })?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let msg = e.inner().message().to_string();
        cfg_err(&key, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Dotted key of the assignment on the line containing byte `pos`.
fn key_at(text: &str, pos: usize) -> String {
    let pos = pos.min(text.len());
    let line_start = text[..pos].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let key = line.split('=').next().unwrap_or("").trim();
    let section = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    match (section, line.contains('=')) {
        (Some(s), true) if !key.is_empty() => format!("{s}.{key}"),
        (None, true) if !key.is_empty() => key.to_string(),
        (Some(s), _) => s,
        _ => String::new(),
    }
}

impl ExperimentConfig {
    pub fn with_scenario(scenario: &str) -> Self {
        let mut c = Self::default();
        c.experiment.scenario = scenario.into();
        c
    }

    /// Canonical TOML of this config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the canonical TOML, ignoring the output path.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.experiment.output = None;
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.trials < 1 {
            return Err(cfg_err("experiment.trials", "must be >= 1"));
        }
        if e.detection_trials < 1 {
            return Err(cfg_err("experiment.detection_trials", "must be >= 1"));
        }
        if e.cs_trials < 1 {
            return Err(cfg_err("experiment.cs_trials", "must be >= 1"));
        }
        let w = &self.wpt;
        check(w.lambda_p_per_m2 >= 0.0 && w.lambda_p_per_m2.is_finite(), "wpt.lambda_p_per_m2", "must be >= 0")?;
        check(w.antennas >= 1, "wpt.antennas", "must be >= 1")?;
        check(w.pp_dbm.is_finite(), "wpt.pp_dbm", "must be finite")?;
        check(w.eta > 0.0 && w.eta <= 1.0, "wpt.eta", "must lie in (0, 1]")?;
        check(w.carrier_hz > 0.0, "wpt.carrier_hz", "must be > 0")?;
        if let Some(a) = w.path_loss_a {
            check(a > 0.0 && a.is_finite(), "wpt.path_loss_a", "must be > 0")?;
        }
        check(w.xi >= 2.0 && w.xi.is_finite(), "wpt.xi", "must be >= 2")?;
        check(w.d0_m >= 1.0 && w.d0_m.is_finite(), "wpt.d0_m", "must be >= 1")?;
        let f = &self.frame;
        for (k, v) in [("frame.alpha1", f.alpha1), ("frame.beta", f.beta), ("frame.alpha2", f.alpha2)] {
            check((0.0..=1.0).contains(&v), k, "must lie in [0, 1]")?;
        }
        check(f.kappa > 0.0 && f.kappa <= 1.0, "frame.kappa", "must lie in (0, 1]")?;
        check(f.t_s > 0.0 && f.t_s.is_finite(), "frame.t_s", "must be > 0")?;
        let p = &self.power;
        for (k, v) in [
            ("power.ps_dbm", p.ps_dbm),
            ("power.pt_dbm", p.pt_dbm),
            ("power.pt_min_dbm", p.pt_min_dbm),
            ("power.pt_max_dbm", p.pt_max_dbm),
            ("power.n0_dbm", p.n0_dbm),
        ] {
            check(v.is_finite(), k, "must be finite")?;
        }
        check(p.pt_min_dbm <= p.pt_max_dbm, "power.pt_max_dbm", "must be >= pt_min_dbm")?;
        let s = &self.sensing;
        check(s.channels >= 1, "sensing.channels", "must be >= 1")?;
        check(s.occupied >= 1 && s.occupied <= s.channels, "sensing.occupied", "must lie in [1, channels]")?;
        check(s.n >= 2, "sensing.n", "must be >= 2")?;
        check(s.snr_db.is_finite(), "sensing.snr_db", "must be finite")?;
        check(s.sigma2 > 0.0, "sensing.sigma2", "must be > 0")?;
        check(s.pd_target > 0.5 && s.pd_target < 1.0, "sensing.pd_target", "must lie in (0.5, 1)")?;
        check(s.e_s_j > 0.0, "sensing.e_s_j", "must be > 0")?;
        check(s.c_cs > 0.0, "sensing.c_cs", "must be > 0")?;
        check(s.cs_bins_per_channel >= 1, "sensing.cs_bins_per_channel", "must be >= 1")?;
        let c = &self.css;
        check(c.j >= 1, "css.j", "must be >= 1")?;
        check(c.j1 >= 1 && c.j1 <= c.j, "css.j1", "must lie in [1, j]")?;
        check(c.mc_bound == "practical" || c.mc_bound == "theoretical", "css.mc_bound", "must be `practical` or `theoretical`")?;
        check(c.mc_ratio > 0.0, "css.mc_ratio", "must be > 0")?;
        check(c.c_mc > 0.0, "css.c_mc", "must be > 0")?;
        let o = &self.optimizer;
        check(o.alpha2_min >= 0.0 && o.alpha2_min < 1.0, "optimizer.alpha2_min", "must lie in [0, 1)")?;
        check(o.p1_kappa > 0.0 && o.p1_kappa <= 1.0, "optimizer.p1_kappa", "must lie in (0, 1]")?;
        for (k, v) in [
            ("optimizer.d_alpha1", o.d_alpha1),
            ("optimizer.d_beta", o.d_beta),
            ("optimizer.d_alpha2", o.d_alpha2),
            ("optimizer.d_pt_db", o.d_pt_db),
        ] {
            check(v > 0.0, k, "must be > 0")?;
        }
        check(o.random_z >= 1, "optimizer.random_z", "must be >= 1")?;
        check(o.local_starts >= 1, "optimizer.local_starts", "must be >= 1")?;
        check(o.local_budget >= 1, "optimizer.local_budget", "must be >= 1")?;
        for (i, axis) in self.sweep.iter().enumerate() {
            if axis.values.is_empty() {
                return Err(cfg_err(&format!("sweep[{i}].values"), "must not be empty"));
            }
            if axis.values.iter().any(|v| !v.is_finite()) {
                return Err(cfg_err(&format!("sweep[{i}].values"), "must be finite"));
            }
        }
        Ok(())
    }

    pub fn wpt_params(&self) -> WptParams {
        let w = &self.wpt;
        WptParams {
            lambda_p: w.lambda_p_per_m2,
            antennas: w.antennas,
            pp: dbm_to_watts(w.pp_dbm),
            eta: w.eta,
            a: w.path_loss_a.unwrap_or_else(|| free_space_constant(w.carrier_hz)),
            xi: w.xi,
            d0: w.d0_m,
        }
    }

    pub fn frame_split(&self) -> Result<FrameSplit> {
        let f = &self.frame;
        FrameSplit::new(f.alpha1, f.beta, f.alpha2, f.kappa, f.t_s).map_err(|e| cfg_err("frame", e.to_string()))
    }

    pub fn thresholds(&self) -> PowerThresholds {
        let p = &self.power;
        PowerThresholds {
            ps: dbm_to_watts(p.ps_dbm),
            pt: dbm_to_watts(p.pt_dbm),
            pt_min: dbm_to_watts(p.pt_min_dbm),
            pt_max: dbm_to_watts(p.pt_max_dbm),
            n0: dbm_to_watts(p.n0_dbm),
        }
    }

    pub fn sensing_params(&self) -> SensingParams {
        SensingParams { e_s: self.sensing.e_s_j, pd_target: self.sensing.pd_target, c_cs: self.sensing.c_cs }
    }

    pub fn snr(&self) -> f64 {
        db_to_linear(self.sensing.snr_db)
    }

    pub fn mc_bound_mode(&self) -> McBoundMode {
        if self.css.mc_bound == "theoretical" {
            McBoundMode::Theoretical
        } else {
            McBoundMode::Practical { ratio: self.css.mc_ratio }
        }
    }

    /// Optimization problem of `variant`; P1 uses `optimizer.p1_kappa`.
    pub fn problem_spec(&self, variant: Variant) -> ProblemSpec {
        ProblemSpec {
            variant,
            wpt: self.wpt_params(),
            kappa: match variant {
                Variant::P0 => self.frame.kappa,
                Variant::P1 => self.optimizer.p1_kappa,
            },
            t: self.frame.t_s,
            power: self.thresholds(),
            sensing: self.sensing_params(),
            snr: self.snr(),
            channels: self.sensing.channels,
            occupied: self.sensing.occupied,
            n: self.sensing.n,
            j: match variant {
                Variant::P0 => 1,
                Variant::P1 => self.css.j,
            },
            j1: match variant {
                Variant::P0 => 1,
                Variant::P1 => self.css.j1,
            },
            alpha2_min: self.optimizer.alpha2_min,
            mc_bound: self.mc_bound_mode(),
            c_mc: self.css.c_mc,
        }
    }

    pub fn grid_steps(&self) -> GridSteps {
        let o = &self.optimizer;
        GridSteps { alpha1: o.d_alpha1, beta: o.d_beta, alpha2: o.d_alpha2, pt_db: o.d_pt_db }
    }

    pub fn local_config(&self) -> LocalConfig {
        LocalConfig { starts: self.optimizer.local_starts, budget: self.optimizer.local_budget }
    }

    pub fn axis(&self, name: &str) -> Option<&[f64]> {
        self.sweep.iter().find(|a| a.name == name).map(|a| a.values.as_slice())
    }
}

fn check(ok: bool, key: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(cfg_err(key, msg))
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn resolved_config_round_trips(pp in 20.0f64..50.0, lp in 0.0f64..0.1, kappa in 0.01f64..=1.0,
                                       seed: u64, trials in 1u64..1_000_000, values in proptest::collection::vec(-30.0f64..0.0, 1..6)) {
            let mut c = ExperimentConfig::with_scenario("fig3");
            c.wpt.pp_dbm = pp;
            c.wpt.lambda_p_per_m2 = lp;
            c.frame.kappa = kappa;
            c.experiment.base_seed = seed;
            c.experiment.trials = trials;
            c.sweep.push(SweepAxis { name: "snr_db".into(), values });
            let back = parse_config(&c.to_toml()).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.hash(), c.hash());
        }
    }
}
