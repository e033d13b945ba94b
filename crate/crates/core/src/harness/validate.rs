//! Invariant suite behind the `validate` subcommand.

use std::fmt;

use crate::completion::{CompletionConfig, SyntheticInstance};
use crate::error::Result;
use crate::mathkit::{
    q_function, q_inverse, regularized_upper_gamma, svd, upper_incomplete_gamma, CMatrix, Dft, ErlangSampler, SimRng,
};
use crate::sensing::pf_analytic;
use crate::wpt::{outage_closed_form, outage_monte_carlo_mu, WptParams};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// `Γ(a+1, z) = aΓ(a, z) + z^a e^-z` over a grid, worst relative error.
pub fn gamma_recurrence_error() -> Result<f64> {
    let mut worst = 0.0f64;
    for &a in &[0.1, 0.5, 1.0, 1.7, 3.0, 7.5, 15.0, 31.0] {
        for &z in &[1e-3, 0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 20.0, 40.0] {
            let lhs = upper_incomplete_gamma(a + 1.0, z)?;
            let rhs = a * upper_incomplete_gamma(a, z)? + (a * f64::ln(z) - z).exp();
            worst = worst.max((lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok(worst)
}

/// Worst `|Q(Q⁻¹(p)) − p|/p` over `p` in `[1e-12, 1 − 1e-12]`.
pub fn q_roundtrip_error() -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..=400 {
        // log-spaced toward both tails
        let t = -12.0 + 12.0 * k as f64 / 400.0;
        for p in [10f64.powf(t) * 0.5, 1.0 - 10f64.powf(t) * 0.5] {
            if p <= 0.0 || p >= 1.0 {
                continue;
            }
            let back = q_function(q_inverse(p)?)?;
            worst = worst.max((back - p).abs() / p.min(1.0 - p));
        }
    }
    Ok(worst)
}

/// Kolmogorov–Smirnov distance between `samples` Erlang-`m` draws and the
/// exact CDF `1 − Q(m, x)`.
pub fn erlang_ks_statistic(m: u32, samples: usize, seed: u64) -> Result<f64> {
    let erlang = ErlangSampler::new(m)?;
    let mut rng = SimRng::new(seed, m as u64);
    let mut xs: Vec<f64> = (0..samples).map(|_| erlang.sample(&mut rng)).collect();
    xs.sort_by(f64::total_cmp);
    let n = samples as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let cdf = 1.0 - regularized_upper_gamma(m as f64, x)?;
        d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
    }
    Ok(d)
}

/// KS distance allowed for the Erlang check at 10⁵ draws.
pub const KS_TOL: f64 = 0.01;

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical(samples: usize) -> f64 {
    1.628 / (samples as f64).sqrt()
}

/// Runs the invariant suite.
pub fn run_validation(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let e = gamma_recurrence_error()?;
    out.push(check("incomplete-gamma recurrence", e <= 1e-10, format!("max rel err {e:.3e} (tol 1e-10)")));

    let e = q_roundtrip_error()?;
    out.push(check("Q/Q^-1 roundtrip", e <= 1e-9, format!("max rel err {e:.3e} (tol 1e-9)")));

    let samples = 100_000;
    for m in [1, 8, 32] {
        let d = erlang_ks_statistic(m, samples, seed)?;
        out.push(check("Erlang CDF KS", d <= KS_TOL, format!("M = {m}: D = {d:.4} over {samples} draws (tol {KS_TOL})")));
    }

    let spot = WptParams { lambda_p: 1e-3, antennas: 1, xi: 2.0, d0: 1.0, ..WptParams::default() };
    let p = outage_closed_form(0.01, &spot)?;
    out.push(check("outage closed-form spot value", (p - 0.7327).abs() <= 5e-4, format!("{p:.5} (expect 0.7327 +- 5e-4)")));
    let mc = outage_monte_carlo_mu(0.01, &spot, 100_000, None, &SimRng::new(seed, 1))?;
    let diff = (mc.p - p).abs();
    out.push(check(
        "outage Monte Carlo agreement",
        diff <= 3.0 * mc.stderr,
        format!("MC {:.5} +- {:.5}, |diff| = {diff:.5}", mc.p, mc.stderr),
    ));

    let half = outage_monte_carlo_mu(0.01, &spot, 50_000, None, &SimRng::new(seed, 2))?;
    let ratio = mc.stderr / half.stderr;
    let expect = std::f64::consts::FRAC_1_SQRT_2;
    out.push(check(
        "Monte Carlo standard-error scaling",
        (ratio / expect - 1.0).abs() <= 0.2,
        format!("2x trials scale SE by {ratio:.4} (expect {expect:.4} +- 20%)"),
    ));

    let pf = pf_analytic(0.9, 0.1, 1000.0)?;
    out.push(check("analytic false alarm", (pf - 0.186).abs() <= 1e-3, format!("{pf:.5} (expect 0.186 +- 1e-3)")));

    let dft = Dft::new(256);
    let mut rng = SimRng::new(seed, 3);
    let x: Vec<_> = (0..256).map(|_| rng.complex_normal(1.0)).collect();
    let mut y = x.clone();
    dft.forward(&mut y);
    let energy = (y.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.iter().map(|v| v.norm_sqr()).sum::<f64>() - 1.0).abs();
    dft.inverse(&mut y);
    let back = x.iter().zip(&y).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    out.push(check("unitary DFT", energy <= 1e-12 && back <= 1e-12, format!("energy err {energy:.2e}, roundtrip {back:.2e}")));

    let a = CMatrix::from_fn(40, 24, |_, _| rng.complex_normal(1.0));
    let s = svd(&a)?;
    let e = (s.reconstruct() - &a).norm() / a.norm();
    out.push(check("SVD reconstruction", e <= 1e-12, format!("rel err {e:.2e}")));

    let full = SyntheticInstance::rank_one(128, 16, 16, 1.0, seed)?;
    let (_, e) = full.solve(&CompletionConfig::default())?;
    out.push(check("completion, fully observed", e <= 1e-6, format!("rel err {e:.2e} (tol 1e-6)")));

    let part = SyntheticInstance::rank_one(128, 16, 8, 0.5, seed.wrapping_add(1))?;
    let (_, e) = part.solve(&CompletionConfig::default())?;
    out.push(check("completion, rank one at kappa 0.5", e <= 1e-3, format!("rel err {e:.2e} (tol 1e-3)")));

    Ok(out)
}
