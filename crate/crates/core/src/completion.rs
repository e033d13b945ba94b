//! Fusion-center matrix completion.
//!
//! Active SUs report compressed columns `x_j = Θ_j s_j`; the FC stacks them
//! and recovers the low-rank spectrum matrix `S = [s_1 … s_J]` by
//! nuclear-norm regularized least squares,
//! `min τ‖S‖_* + ½ Σ_{j∈Ω} ‖Θ_j s_j − x_j‖²`,
//! solved with accelerated proximal gradient and singular-value
//! thresholding. The threshold starts near `‖A*(X)‖₂` and shrinks
//! geometrically to its final value.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathkit::{svd, CMatrix, Dft, SimRng};
use crate::sensing::{cs_recover, least_squares, MeasurementOp};

/// Compressed columns received at the FC, keyed by SU index.
#[derive(Clone, Debug)]
pub struct FcMatrix {
    /// `Λ × J1`, column `k` belongs to SU `observed[k]`.
    pub x: CMatrix,
    /// Sorted SU indices of the observed columns.
    pub observed: Vec<usize>,
    /// Total number of SUs.
    pub j: usize,
    pub ground_truth: Option<CMatrix>,
}

impl FcMatrix {
    pub fn j1(&self) -> usize {
        self.observed.len()
    }

    pub fn is_observed(&self, su: usize) -> bool {
        self.observed.binary_search(&su).is_ok()
    }
}

pub fn assemble_fc_matrix(views: &[(usize, Vec<Complex64>)], j: usize) -> Result<FcMatrix> {
    let Some((_, first)) = views.first() else {
        return Err(Error::domain("at least one observed column is required"));
    };
    let rows = first.len();
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by_key(|&k| views[k].0);
    let mut observed = Vec::with_capacity(views.len());
    let mut x = CMatrix::zeros(rows, views.len());
    for (col, &k) in order.iter().enumerate() {
        let (su, ref data) = views[k];
        if su >= j {
            return Err(Error::domain(format!("SU index {su} out of range for J = {j}")));
        }
        if observed.last() == Some(&su) {
            return Err(Error::DuplicateIndex(su));
        }
        if data.len() != rows {
            return Err(Error::DimensionMismatch { expected: rows.to_string(), got: data.len().to_string() });
        }
        x.set_column(col, &DVector::from_column_slice(data));
        observed.push(su);
    }
    Ok(FcMatrix { x, observed, j, ground_truth: None })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionConfig {
    /// Final singular-value threshold. `None` picks `1e-8` of the initial one.
    pub threshold_tau: Option<f64>,
    /// Step size in units of `1/L`, `L = max_j ‖Θ_j‖₂²`.
    pub step: f64,
    pub max_iter: usize,
    /// Relative-change stopping tolerance.
    pub tol: f64,
    /// Per-column residual targets; empty means none.
    #[serde(default)]
    pub eps_vec: Vec<f64>,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self { threshold_tau: None, step: 1.0, max_iter: 3000, tol: 1e-5, eps_vec: Vec::new() }
    }
}

impl CompletionConfig {
    /// Threshold `5·√(nJ)·σ` for noisy data.
    pub fn for_noise(n: usize, j: usize, sigma: f64) -> Self {
        Self { threshold_tau: Some(5.0 * ((n * j) as f64).sqrt() * sigma), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.threshold_tau {
            if !(t > 0.0) {
                return Err(Error::domain("threshold_tau must be > 0"));
            }
        }
        if !(self.step > 0.0 && self.step <= 2.0) {
            return Err(Error::domain("step must lie in (0, 2]"));
        }
        if self.max_iter == 0 || !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::domain("need max_iter >= 1 and 0 < tol < 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompletionStatus {
    Converged,
    MaxIter,
    Diverged,
}

#[derive(Clone, Debug)]
pub struct CompletionResult {
    /// `n × J` estimate. Unobserved columns hold the mean of the observed
    /// ones (all SUs see the same occupancy).
    pub estimate: CMatrix,
    /// `‖Θ_j ŝ_j − x_j‖` per observed column, in `observed` order.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub status: CompletionStatus,
}

impl CompletionResult {
    pub fn converged(&self) -> bool {
        self.status == CompletionStatus::Converged
    }
}

/// Completes the spectrum matrix from the observed columns. `ops[j]` is the
/// operator of SU `j`; only observed SUs' operators are used.
pub fn complete_matrix(fc: &FcMatrix, ops: &[MeasurementOp], cfg: &CompletionConfig, dft: &Dft) -> Result<CompletionResult> {
    cfg.validate()?;
    if fc.observed.is_empty() {
        return Err(Error::domain("no observed columns"));
    }
    if ops.len() != fc.j {
        return Err(Error::DimensionMismatch { expected: fc.j.to_string(), got: ops.len().to_string() });
    }
    let n = dft.len();
    for &su in &fc.observed {
        if ops[su].n() != n || ops[su].lambda() != fc.x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{n}", fc.x.nrows()),
                got: format!("{}x{}", ops[su].lambda(), ops[su].n()),
            });
        }
    }
    let j1 = fc.j1();

    if fc.x.iter().all(|v| v.norm_sqr() == 0.0) {
        return Ok(CompletionResult {
            estimate: CMatrix::zeros(n, fc.j),
            residuals: vec![0.0; j1],
            iterations: 0,
            status: CompletionStatus::Converged,
        });
    }

    // Invertible columns need no completion.
    if fc.observed.iter().all(|&su| ops[su].is_identity()) {
        let mut s = CMatrix::zeros(n, j1);
        for (k, &su) in fc.observed.iter().enumerate() {
            let col: Vec<Complex64> = fc.x.column(k).iter().copied().collect();
            let rec = cs_recover(&col, &ops[su], n, 0.0, dft)?;
            s.set_column(k, &DVector::from_vec(rec.spectrum));
        }
        return Ok(finish(fc, ops, s, 0, CompletionStatus::Converged, dft));
    }

    let thetas: Vec<CMatrix> = fc.observed.iter().map(|&su| ops[su].theta(dft)).collect();
    let lip = thetas
        .iter()
        .map(|t| svd(t).map(|d| d.s[0] * d.s[0]))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let step = cfg.step / lip;

    let grad = |s: &CMatrix| -> (CMatrix, f64) {
        let mut g = CMatrix::zeros(n, j1);
        let mut r2 = 0.0;
        for (k, theta) in thetas.iter().enumerate() {
            let r = theta * s.column(k) - fc.x.column(k);
            r2 += r.norm_squared();
            g.set_column(k, &(theta.adjoint() * r));
        }
        (g, r2.sqrt())
    };

    let (g0, _) = grad(&CMatrix::zeros(n, j1));
    let tau0 = 0.9 * svd(&g0)?.s[0];
    let tau_final = cfg.threshold_tau.unwrap_or(1e-8 * tau0).min(tau0);

    let mut s = CMatrix::zeros(n, j1);
    let mut tau = tau0;
    let mut prev_res = f64::INFINITY;
    let x_norm = fc.x.norm();
    let mut growth = 0;
    let mut window_start = f64::INFINITY;
    let mut status = CompletionStatus::MaxIter;
    let mut iterations = 0;

    // Each threshold level is solved to `LEVEL_TOL` before halving; the
    // last level runs to `cfg.tol`.
    'levels: loop {
        let last = tau <= tau_final;
        let level_tol = if last { cfg.tol } else { LEVEL_TOL.max(cfg.tol) };
        let mut y = s.clone();
        let mut t = 1.0f64;
        loop {
            if iterations == cfg.max_iter {
                break 'levels;
            }
            iterations += 1;
            let (g, res) = grad(&y);
            if !res.is_finite() {
                status = CompletionStatus::Diverged;
                break 'levels;
            }
            // sustained growth of more than 1% over the window; round-off
            // wobble near convergence does not count
            if res > prev_res && last {
                if growth == 0 {
                    window_start = prev_res;
                }
                growth += 1;
                if growth >= DIVERGENCE_WINDOW && res > 1.01 * window_start && res > 1e-6 * x_norm {
                    status = CompletionStatus::Diverged;
                    break 'levels;
                }
            } else {
                growth = 0;
            }
            prev_res = res;

            let next = shrink(&(&y - g * Complex64::new(step, 0.0)), tau * step)?;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let change = (&next - &s).norm() / next.norm().max(f64::MIN_POSITIVE);
            y = &next + (&next - &s) * Complex64::new((t - 1.0) / t_next, 0.0);
            s = next;
            t = t_next;
            if change <= level_tol && (!last || eps_met(&s, &thetas, fc, &cfg.eps_vec)) {
                break;
            }
        }
        if last {
            status = CompletionStatus::Converged;
            break;
        }
        tau = (tau * 0.5).max(tau_final);
    }
    Ok(finish(fc, ops, s, iterations, status, dft))
}

fn eps_met(s: &CMatrix, thetas: &[CMatrix], fc: &FcMatrix, eps: &[f64]) -> bool {
    eps.is_empty()
        || thetas
            .iter()
            .enumerate()
            .all(|(k, t)| (t * s.column(k) - fc.x.column(k)).norm() <= eps.get(k).copied().unwrap_or(f64::INFINITY))
}

const LEVEL_TOL: f64 = 1e-5;
const DIVERGENCE_WINDOW: usize = 10;

/// Singular-value soft thresholding.
fn shrink(m: &CMatrix, tau: f64) -> Result<CMatrix> {
    let d = svd(m)?;
    let mut out = CMatrix::zeros(m.nrows(), m.ncols());
    for (k, sv) in d.s.iter().enumerate() {
        let v = sv - tau;
        if v <= 0.0 {
            break;
        }
        out += d.u.column(k) * d.v.column(k).adjoint() * Complex64::new(v, 0.0);
    }
    Ok(out)
}

fn finish(fc: &FcMatrix, ops: &[MeasurementOp], s: CMatrix, iterations: usize, status: CompletionStatus, dft: &Dft) -> CompletionResult {
    let n = s.nrows();
    let residuals = fc
        .observed
        .iter()
        .enumerate()
        .map(|(k, &su)| {
            let col: Vec<Complex64> = s.column(k).iter().copied().collect();
            let y = ops[su].apply_spectrum(&col, dft).expect("dimensions checked");
            y.iter().zip(fc.x.column(k).iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
        })
        .collect();
    let mean = s.column_mean();
    let mut estimate = CMatrix::zeros(n, fc.j);
    for su in 0..fc.j {
        match fc.observed.binary_search(&su) {
            Ok(k) => estimate.set_column(su, &s.column(k)),
            Err(_) => estimate.set_column(su, &mean),
        }
    }
    CompletionResult { estimate, residuals, iterations, status }
}

/// Per-column minimum-norm least squares on the observed columns,
/// unobserved columns left at zero.
pub fn least_squares_baseline(fc: &FcMatrix, ops: &[MeasurementOp], dft: &Dft) -> CMatrix {
    let n = dft.len();
    let mut out = CMatrix::zeros(n, fc.j);
    for (k, &su) in fc.observed.iter().enumerate() {
        let theta = ops[su].theta(dft);
        let x: DVector<Complex64> = fc.x.column(k).into_owned();
        let col = if theta.nrows() >= n {
            let all: Vec<usize> = (0..n).collect();
            least_squares(&theta, &all, &x)
        } else {
            // Θ has full row rank: Θ^H (ΘΘ^H)⁻¹ x
            let g = &theta * theta.adjoint();
            match g.clone().cholesky() {
                Some(ch) => theta.adjoint() * ch.solve(&x),
                None => DVector::zeros(n),
            }
        };
        out.set_column(su, &col);
    }
    out
}

/// Minimum CS measurements `⌈C·K·ln(n/K)⌉`.
pub fn cs_sample_bound(n: f64, k_eff: f64, c_cs: f64) -> Result<u64> {
    if !(k_eff >= 1.0 && n > k_eff) {
        return Err(Error::domain(format!("need 1 <= K_eff < n, got K_eff = {k_eff}, n = {n}")));
    }
    // guard against ln e evaluating a hair above 1
    let v = c_cs * k_eff * (n / k_eff).ln();
    Ok((v * (1.0 - 1e-12)).ceil().max(0.0) as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum McBoundMode {
    /// `C·μ²·ν·K·ln⁶ν` with `ν = max(n, J)` and `μ² = ln ν`.
    Theoretical,
    /// `⌈ratio·n·J⌉`.
    Practical { ratio: f64 },
}

impl Default for McBoundMode {
    fn default() -> Self {
        McBoundMode::Practical { ratio: 0.3 }
    }
}

/// Minimum number of observed measurements at the FC.
pub fn mc_sample_bound(n: usize, j: usize, k_eff: f64, c_mc: f64, mode: McBoundMode) -> f64 {
    match mode {
        McBoundMode::Theoretical => {
            let nu = n.max(j) as f64;
            let l = nu.ln();
            c_mc * l * nu * k_eff * l.powi(6)
        }
        McBoundMode::Practical { ratio } => (ratio * (n * j) as f64).ceil(),
    }
}

/// A synthetic FC instance with a known rank-one spectrum matrix.
#[derive(Clone, Debug)]
pub struct SyntheticInstance {
    pub truth: CMatrix,
    pub fc: FcMatrix,
    pub ops: Vec<MeasurementOp>,
    pub dft: Dft,
}

impl SyntheticInstance {
    /// Every SU sees the same block-sparse spectrum (16 nonzero bins), so
    /// `S = s·1ᵀ` has rank one. `j1` active SUs are spread evenly over the
    /// network; `kappa < 1` gives each SU its own Gaussian operator.
    pub fn rank_one(n: usize, j: usize, j1: usize, kappa: f64, seed: u64) -> Result<Self> {
        if n < 32 || j1 < 1 || j1 > j {
            return Err(Error::domain(format!("need n >= 32 and 1 <= J1 <= J, got n = {n}, J1 = {j1}, J = {j}")));
        }
        let dft = Dft::new(n);
        let mut r = SimRng::new(seed, 0);
        let mut s = vec![Complex64::new(0.0, 0.0); n];
        for v in &mut s[16..32] {
            *v = r.complex_normal(1.0);
        }
        let truth = CMatrix::from_fn(n, j, |i, _| s[i]);
        let ops = (0..j)
            .map(|_| {
                if kappa >= 1.0 {
                    Ok(MeasurementOp::identity(n))
                } else {
                    MeasurementOp::gaussian(n, kappa, &dft, &mut r)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let step = j as f64 / j1 as f64;
        let views = (0..j1)
            .map(|k| {
                let su = (k as f64 * step) as usize;
                Ok((su, ops[su].apply_spectrum(&s, &dft)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut fc = assemble_fc_matrix(&views, j)?;
        fc.ground_truth = Some(truth.clone());
        Ok(Self { truth, fc, ops, dft })
    }

    /// Completes with `cfg` and returns the result and its relative
    /// Frobenius error against the truth.
    pub fn solve(&self, cfg: &CompletionConfig) -> Result<(CompletionResult, f64)> {
        let out = complete_matrix(&self.fc, &self.ops, cfg, &self.dft)?;
        let err = (&out.estimate - &self.truth).norm() / self.truth.norm();
        Ok((out, err))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathkit::nuclear_norm;

    fn c0() -> Complex64 {
        Complex64::new(0.0, 0.0)
    }

    fn rel_err(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn assemble_masks() {
        let cols: Vec<(usize, Vec<Complex64>)> = (0..50).map(|k| (k, vec![Complex64::new(k as f64, 0.0); 4])).collect();
        let full = assemble_fc_matrix(&cols, 50).unwrap();
        assert_eq!(full.j1(), 50);
        let part = assemble_fc_matrix(&cols[..30], 50).unwrap();
        assert_eq!(part.observed, (0..30).collect::<Vec<_>>());
        assert!(!part.is_observed(30));
        let one = assemble_fc_matrix(&cols[3..4], 50).unwrap();
        assert_eq!(svd(&one.x).unwrap().s.len(), 1);
        let dup = vec![cols[1].clone(), cols[1].clone()];
        assert!(matches!(assemble_fc_matrix(&dup, 50), Err(Error::DuplicateIndex(1))));
        assert!(assemble_fc_matrix(&cols, 10).is_err());
        assert!(assemble_fc_matrix(&[(0, vec![c0(); 3]), (1, vec![c0(); 4])], 2).is_err());
    }

    #[test]
    fn assemble_sorts_by_su_index() {
        let views = vec![(5, vec![Complex64::new(5.0, 0.0)]), (2, vec![Complex64::new(2.0, 0.0)])];
        let fc = assemble_fc_matrix(&views, 8).unwrap();
        assert_eq!(fc.observed, vec![2, 5]);
        assert_eq!(fc.x[(0, 1)].re, 5.0);
    }

    #[test]
    fn fully_observed_identity_inverts() {
        let inst = SyntheticInstance::rank_one(128, 16, 16, 1.0, 1).unwrap();
        let out = complete_matrix(&inst.fc, &inst.ops, &CompletionConfig::default(), &inst.dft).unwrap();
        assert!(out.converged());
        assert!(rel_err(&out.estimate, &inst.truth) <= 1e-6);
    }

    #[test]
    fn rank_one_half_compressed_half_observed() {
        for seed in 2..7 {
            let inst = SyntheticInstance::rank_one(128, 16, 8, 0.5, seed).unwrap();
            let out = complete_matrix(&inst.fc, &inst.ops, &CompletionConfig::default(), &inst.dft).unwrap();
            let err = rel_err(&out.estimate, &inst.truth);
            assert!(out.converged(), "seed {seed}: {:?}", out.status);
            assert!(err <= 1e-3, "seed {seed}: {err} after {} iterations", out.iterations);
        }
    }

    #[test]
    fn error_shrinks_as_more_sus_report() {
        let errs: Vec<f64> = [4, 8, 12, 16]
            .iter()
            .map(|&j1| {
                let inst = SyntheticInstance::rank_one(64, 16, j1, 0.25, 21).unwrap();
                let out = complete_matrix(&inst.fc, &inst.ops, &CompletionConfig::default(), &inst.dft).unwrap();
                rel_err(&out.estimate, &inst.truth)
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] * 1.1 + 1e-9), "{errs:?}");
    }

    #[test]
    fn zero_observations_give_zero() {
        let mut inst = SyntheticInstance::rank_one(64, 8, 4, 0.5, 3).unwrap();
        inst.fc.x.fill(c0());
        let out = complete_matrix(&inst.fc, &inst.ops, &CompletionConfig::default(), &inst.dft).unwrap();
        assert!(out.estimate.iter().all(|v| *v == c0()));
    }

    #[test]
    fn shrinks_nuclear_norm_below_least_squares() {
        let inst = SyntheticInstance::rank_one(64, 8, 6, 0.5, 4).unwrap();
        let out = complete_matrix(&inst.fc, &inst.ops, &CompletionConfig::default(), &inst.dft).unwrap();
        let base = least_squares_baseline(&inst.fc, &inst.ops, &inst.dft);
        let cols: Vec<usize> = inst.fc.observed.clone();
        let a = nuclear_norm(&out.estimate.select_columns(&cols)).unwrap();
        let b = nuclear_norm(&base.select_columns(&cols)).unwrap();
        assert!(a <= b * (1.0 + 1e-6), "{a} > {b}");
    }

    #[test]
    fn residuals_reported_per_observed_column() {
        let inst = SyntheticInstance::rank_one(128, 16, 8, 0.5, 5).unwrap();
        let out = complete_matrix(&inst.fc, &inst.ops, &CompletionConfig::default(), &inst.dft).unwrap();
        assert_eq!(out.residuals.len(), 8);
        let scale = inst.fc.x.norm();
        assert!(out.residuals.iter().all(|r| *r <= 1e-4 * scale));
    }

    #[test]
    fn config_validation() {
        assert!(CompletionConfig { step: 0.0, ..Default::default() }.validate().is_err());
        assert!(CompletionConfig { tol: 1.0, ..Default::default() }.validate().is_err());
        assert!(CompletionConfig { threshold_tau: Some(-1.0), ..Default::default() }.validate().is_err());
        let c = CompletionConfig::for_noise(100, 4, 0.1);
        assert!((c.threshold_tau.unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn cs_bound_examples() {
        assert_eq!(cs_sample_bound(1000.0, 4.0, 2.0).unwrap(), 45);
        assert_eq!(cs_sample_bound(std::f64::consts::E, 1.0, 1.0).unwrap(), 1);
        assert!(cs_sample_bound(4.0, 4.0, 2.0).is_err());
        let v: Vec<u64> = [1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|&k| cs_sample_bound(1000.0, k, 2.0).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn mc_bound_examples() {
        let t = mc_sample_bound(1000, 50, 4.0, 2.0, McBoundMode::Theoretical);
        let oracle = 2.0 * 1000f64.ln().powi(7) * 1000.0 * 4.0;
        assert!((t - oracle).abs() < 1e-6 * oracle);
        assert!((t / 6.0e9 - 1.0).abs() < 0.01);
        assert!(t > 1000.0 * 50.0);
        assert_eq!(mc_sample_bound(1000, 50, 4.0, 2.0, McBoundMode::default()), 15000.0);
        assert_eq!(
            mc_sample_bound(50, 1000, 4.0, 2.0, McBoundMode::Theoretical),
            mc_sample_bound(1000, 50, 4.0, 2.0, McBoundMode::Theoretical)
        );
    }
}
