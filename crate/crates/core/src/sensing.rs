//! Wideband spectrum sensing with sub-Nyquist sampling.
//!
//! A scene is `I` equal-width channels, `K` of them occupied, observed as
//! `n` Nyquist-rate samples. An SU takes `Λ = round(κn)` random projections
//! `x = Φ·r`, recovers the spectrum with a greedy sparse solver and runs a
//! per-channel energy detector.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathkit::{q_function, q_inverse, CMatrix, Dft, RMatrix, SimRng};

/// Wideband occupancy ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumScene {
    pub channels: usize,
    pub occupied: Vec<usize>,
    pub n: usize,
    pub sigma_s2: f64,
    pub sigma2: f64,
}

impl SpectrumScene {
    pub fn new(channels: usize, mut occupied: Vec<usize>, n: usize, sigma_s2: f64, sigma2: f64) -> Result<Self> {
        if channels == 0 || n == 0 || !n.is_multiple_of(channels) {
            return Err(Error::domain(format!("n = {n} must be a positive multiple of I = {channels}")));
        }
        occupied.sort_unstable();
        if occupied.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain("occupied channel indices must be distinct"));
        }
        if occupied.iter().any(|&c| c >= channels) {
            return Err(Error::domain("occupied channel index out of range"));
        }
        if !(sigma_s2 >= 0.0 && sigma2 > 0.0) {
            return Err(Error::domain("need sigma_s2 >= 0 and sigma2 > 0"));
        }
        Ok(Self { channels, occupied, n, sigma_s2, sigma2 })
    }

    /// Scene with `k` occupied channels chosen uniformly at random.
    pub fn random(channels: usize, k: usize, n: usize, snr: f64, sigma2: f64, rng: &mut SimRng) -> Result<Self> {
        if k > channels {
            return Err(Error::domain(format!("K = {k} exceeds I = {channels}")));
        }
        // partial Fisher-Yates
        let mut idx: Vec<usize> = (0..channels).collect();
        for i in 0..k {
            let j = i + ((rng.uniform() * (channels - i) as f64) as usize).min(channels - i - 1);
            idx.swap(i, j);
        }
        idx.truncate(k);
        Self::new(channels, idx, n, snr * sigma2, sigma2)
    }

    pub fn snr(&self) -> f64 {
        self.sigma_s2 / self.sigma2
    }

    pub fn bins_per_channel(&self) -> usize {
        self.n / self.channels
    }

    /// Number of nonzero signal bins, `K·n/I`.
    pub fn sparsity(&self) -> usize {
        self.occupied.len() * self.bins_per_channel()
    }

    pub fn is_occupied(&self, channel: usize) -> bool {
        self.occupied.binary_search(&channel).is_ok()
    }
}

/// Per-SU sensing constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingParams {
    /// Energy per Nyquist sample (J).
    pub e_s: f64,
    pub pd_target: f64,
    /// Constant of the `Λ ≥ C·K·ln(n/K)` sample bound.
    pub c_cs: f64,
}

impl SensingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_s > 0.0 && self.e_s.is_finite()) {
            return Err(Error::domain(format!("e_s must be > 0, got {}", self.e_s)));
        }
        if !(self.pd_target > 0.5 && self.pd_target < 1.0) {
            return Err(Error::domain(format!("Pd target must lie in (0.5, 1), got {}", self.pd_target)));
        }
        if !(self.c_cs > 0.0) {
            return Err(Error::domain("C_cs must be > 0"));
        }
        Ok(())
    }
}

impl Default for SensingParams {
    fn default() -> Self {
        Self { e_s: 2.5e-7, pd_target: 0.9, c_cs: 2.0 }
    }
}

/// Draws `(r_time, s_freq)`: the received time samples and the noiseless
/// spectrum. Occupied bins carry complex Gaussian signal of power
/// `σ_s²·I/K`; every bin carries noise of power `σ²`.
pub fn synthesize_received(scene: &SpectrumScene, dft: &Dft, rng: &mut SimRng) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if dft.len() != scene.n {
        return Err(Error::DimensionMismatch { expected: scene.n.to_string(), got: dft.len().to_string() });
    }
    let b = scene.bins_per_channel();
    let k = scene.occupied.len();
    let per_bin = if k > 0 { scene.sigma_s2 * scene.channels as f64 / k as f64 } else { 0.0 };
    let mut s = vec![Complex64::new(0.0, 0.0); scene.n];
    for &c in &scene.occupied {
        for v in &mut s[c * b..(c + 1) * b] {
            *v = rng.complex_normal(per_bin);
        }
    }
    let mut r: Vec<Complex64> = s.iter().map(|v| v + rng.complex_normal(scene.sigma2)).collect();
    dft.inverse(&mut r);
    Ok((r, s))
}

/// Compressive measurement operator `x = Φ·r`, with `Θ = Φ·F⁻¹` acting on
/// spectra.
#[derive(Clone, Debug)]
pub struct MeasurementOp {
    n: usize,
    lambda: usize,
    /// `None` for the identity (uncompressed) operator.
    mats: Option<(RMatrix, CMatrix)>,
}

impl MeasurementOp {
    pub fn identity(n: usize) -> Self {
        Self { n, lambda: n, mats: None }
    }

    /// Gaussian operator with `Λ = round(κn)` rows and entries of variance
    /// `1/n`, so each row has unit expected norm.
    pub fn gaussian(n: usize, kappa: f64, dft: &Dft, rng: &mut SimRng) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(Error::domain(format!("kappa must lie in (0, 1], got {kappa}")));
        }
        if dft.len() != n {
            return Err(Error::DimensionMismatch { expected: n.to_string(), got: dft.len().to_string() });
        }
        let lambda = ((kappa * n as f64).round() as usize).clamp(1, n);
        let sd = 1.0 / (n as f64).sqrt();
        let phi = RMatrix::from_fn(lambda, n, |_, _| sd * rng.standard_normal());
        // Θ row = F⁻¹ applied to the Φ row (F⁻¹ is symmetric)
        let mut theta = CMatrix::zeros(lambda, n);
        let mut row = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..lambda {
            for (k, v) in row.iter_mut().enumerate() {
                *v = Complex64::new(phi[(i, k)], 0.0);
            }
            dft.inverse(&mut row);
            for (k, v) in row.iter().enumerate() {
                theta[(i, k)] = *v;
            }
        }
        Ok(Self { n, lambda, mats: Some((phi, theta)) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn is_identity(&self) -> bool {
        self.mats.is_none()
    }

    pub fn phi(&self) -> Option<&RMatrix> {
        self.mats.as_ref().map(|m| &m.0)
    }

    /// Dense `Θ`; for the identity operator this is the unitary `F⁻¹`.
    pub fn theta(&self, dft: &Dft) -> CMatrix {
        match &self.mats {
            Some((_, t)) => t.clone(),
            None => {
                let mut t = CMatrix::zeros(self.n, self.n);
                let mut col = vec![Complex64::new(0.0, 0.0); self.n];
                for k in 0..self.n {
                    col.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                    col[k] = Complex64::new(1.0, 0.0);
                    dft.inverse(&mut col);
                    t.set_column(k, &DVector::from_column_slice(&col));
                }
                t
            }
        }
    }

    /// `Θ·s` for a spectrum `s`.
    pub fn apply_spectrum(&self, s: &[Complex64], dft: &Dft) -> Result<Vec<Complex64>> {
        self.check_len(s.len())?;
        match &self.mats {
            Some((_, t)) => Ok((t * DVector::from_column_slice(s)).as_slice().to_vec()),
            None => {
                let mut r = s.to_vec();
                dft.inverse(&mut r);
                Ok(r)
            }
        }
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.n {
            return Err(Error::DimensionMismatch { expected: self.n.to_string(), got: got.to_string() });
        }
        Ok(())
    }
}

/// `x = Φ·r`.
pub fn compress(r_time: &[Complex64], op: &MeasurementOp) -> Result<Vec<Complex64>> {
    op.check_len(r_time.len())?;
    match &op.mats {
        None => Ok(r_time.to_vec()),
        Some((phi, _)) => Ok((0..op.lambda)
            .map(|i| {
                phi.row(i)
                    .iter()
                    .zip(r_time)
                    .map(|(p, r)| r * *p)
                    .sum::<Complex64>()
            })
            .collect()),
    }
}

/// Sparse recovery output.
#[derive(Clone, Debug)]
pub struct Recovery {
    pub spectrum: Vec<Complex64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Iteration cap of the greedy solver.
pub const CS_MAX_ITER: usize = 100;

/// Recovers the spectrum from `x`. The identity operator is inverted by an
/// FFT and a square operator by least squares; otherwise CoSaMP with
/// `sparsity` nonzeros runs until `‖Θŝ − x‖ ≤ eps`, stagnation, or
/// [`CS_MAX_ITER`] iterations. The best iterate seen is returned.
pub fn cs_recover(x: &[Complex64], op: &MeasurementOp, sparsity: usize, eps: f64, dft: &Dft) -> Result<Recovery> {
    if x.len() != op.lambda {
        return Err(Error::DimensionMismatch { expected: op.lambda.to_string(), got: x.len().to_string() });
    }
    if sparsity == 0 {
        return Err(Error::domain("sparsity budget must be >= 1"));
    }
    let n = op.n;
    let theta = match &op.mats {
        None => {
            let mut s = x.to_vec();
            dft.forward(&mut s);
            return Ok(Recovery { spectrum: s, residual: 0.0, iterations: 0, converged: true });
        }
        Some((_, t)) => t,
    };
    let xv = DVector::from_column_slice(x);
    let x_norm = xv.norm();
    if x_norm == 0.0 {
        return Ok(Recovery { spectrum: vec![Complex64::new(0.0, 0.0); n], residual: 0.0, iterations: 0, converged: true });
    }
    if op.lambda == n {
        let all: Vec<usize> = (0..n).collect();
        let coef = least_squares(theta, &all, &xv);
        let spectrum: Vec<Complex64> = coef.iter().copied().collect();
        let residual = (theta * DVector::from_column_slice(&spectrum) - &xv).norm();
        return Ok(Recovery { spectrum, residual, iterations: 1, converged: true });
    }

    let s = sparsity.min(op.lambda);
    let stop = eps.max(1e-12 * x_norm);
    let mut support: Vec<usize> = Vec::new();
    let mut est = DVector::<Complex64>::zeros(n);
    let mut resid = xv.clone();
    let mut best = (est.clone(), x_norm);
    let mut stalls = 0;
    let mut iterations = 0;
    let mut converged = false;

    for it in 1..=CS_MAX_ITER {
        iterations = it;
        let proxy = theta.adjoint() * &resid;
        let mut cand = top_k(proxy.as_slice(), 2 * s);
        for &j in &support {
            if !cand.contains(&j) {
                cand.push(j);
            }
        }
        if cand.len() > op.lambda {
            // keep the strongest by combined proxy and current estimate
            let score: Vec<f64> = (0..n).map(|j| proxy[j].norm() + est[j].norm()).collect();
            cand.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
            cand.truncate(op.lambda);
        }
        cand.sort_unstable();
        let coef = least_squares(theta, &cand, &xv);
        let mut full = vec![Complex64::new(0.0, 0.0); n];
        for (&j, c) in cand.iter().zip(coef.iter()) {
            full[j] = *c;
        }
        support = top_k(&full, s);
        support.sort_unstable();
        est = DVector::zeros(n);
        for &j in &support {
            est[j] = full[j];
        }
        resid = &xv - theta * &est;
        let r = resid.norm();
        if r < best.1 * (1.0 - 1e-9) {
            best = (est.clone(), r);
            stalls = 0;
        } else {
            stalls += 1;
        }
        if r <= stop {
            converged = true;
            break;
        }
        if stalls >= 3 {
            break;
        }
    }
    Ok(Recovery {
        spectrum: best.0.iter().copied().collect(),
        residual: best.1,
        iterations,
        converged: converged || best.1 <= stop,
    })
}

/// Indices of the `k` largest magnitudes, ties broken by lower index.
fn top_k(v: &[Complex64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    let k = k.min(v.len());
    idx.sort_by(|&a, &b| v[b].norm_sqr().total_cmp(&v[a].norm_sqr()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Least squares `min ‖Θ_T c − x‖` over the columns `cols`.
pub(crate) fn least_squares(theta: &CMatrix, cols: &[usize], x: &DVector<Complex64>) -> DVector<Complex64> {
    let a = theta.select_columns(cols);
    let gram = a.adjoint() * &a;
    let rhs = a.adjoint() * x;
    if let Some(ch) = gram.clone().cholesky() {
        let sol = ch.solve(&rhs);
        if sol.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return sol;
        }
    }
    let svd = DMatrix::svd(a, true, true);
    svd.solve(x, 1e-12).unwrap_or_else(|_| DVector::zeros(cols.len()))
}

/// Detection threshold `λ = (σ_s² + σ²)(1 + Q⁻¹(P̄d)/√(n/2))`.
pub fn detection_threshold(pd_target: f64, n_eff: f64, sigma_s2: f64, sigma2: f64) -> Result<f64> {
    if !(n_eff >= 2.0) {
        return Err(Error::domain(format!("n_eff must be >= 2, got {n_eff}")));
    }
    if !(pd_target > 0.5 && pd_target < 1.0) {
        return Err(Error::domain(format!("Pd target must lie in (0.5, 1), got {pd_target}")));
    }
    if !(sigma_s2 >= 0.0 && sigma2 > 0.0) {
        return Err(Error::domain("need sigma_s2 >= 0 and sigma2 > 0"));
    }
    Ok((sigma_s2 + sigma2) * (1.0 + q_inverse(pd_target)? / (n_eff / 2.0).sqrt()))
}

/// Real degrees of freedom behind one per-channel decision: each complex
/// bin contributes two.
pub fn channel_dof(bins_per_channel: usize) -> f64 {
    2.0 * bins_per_channel as f64
}

/// Flags channel `c` occupied when the mean recovered power over its bins
/// exceeds `lambda`.
pub fn energy_detect(spectrum: &[Complex64], channels: usize, lambda: f64) -> Result<Vec<bool>> {
    if channels == 0 || !spectrum.len().is_multiple_of(channels) {
        return Err(Error::DimensionMismatch {
            expected: format!("multiple of {channels}"),
            got: spectrum.len().to_string(),
        });
    }
    let b = spectrum.len() / channels;
    Ok(spectrum
        .chunks(b)
        .map(|ch| ch.iter().map(|v| v.norm_sqr()).sum::<f64>() / b as f64 > lambda)
        .collect())
}

/// Nyquist samples affordable in the sensing slot, `⌊βTPs/e_s⌋`.
pub fn sample_count(beta: f64, t: f64, ps: f64, e_s: f64) -> Result<usize> {
    if !(beta > 0.0 && t > 0.0 && ps > 0.0 && e_s > 0.0) {
        return Err(Error::domain("beta, T, Ps and e_s must all be > 0"));
    }
    let n = (sample_count_real(beta, t, ps, e_s) * (1.0 + 1e-12)).floor();
    if n < 1.0 {
        return Err(Error::InfeasibleSensing(format!("energy buys {n} samples")));
    }
    Ok(n as usize)
}

/// Continuous sample count `βTPs/e_s`, used inside the objectives.
pub fn sample_count_real(beta: f64, t: f64, ps: f64, e_s: f64) -> f64 {
    beta * t * ps / e_s
}

/// Single-SU false alarm `Q(Q⁻¹(P̄d)·√(1+snr) + √(n/2)·snr)`.
///
/// An alternative printed form wraps this in `1 − Q(·)` with `(1+snr)` in
/// place of its square root; that form is not exposed.
pub fn pf_analytic(pd_target: f64, snr: f64, n: f64) -> Result<f64> {
    qf_analytic(pd_target, snr, n, 1)
}

/// Cooperative false alarm over `J` equally weighted SUs,
/// `Q(Q⁻¹(P̄d)·√(1+snr) + √(nJ/2)·snr)`.
pub fn qf_analytic(pd_target: f64, snr: f64, n: f64, j: usize) -> Result<f64> {
    if !(snr >= 0.0 && snr.is_finite()) {
        return Err(Error::domain(format!("snr must be >= 0, got {snr}")));
    }
    if !(n >= 2.0 && n.is_finite()) {
        return Err(Error::domain(format!("n must be >= 2, got {n}")));
    }
    if j < 1 {
        return Err(Error::domain("J must be >= 1"));
    }
    let arg = q_inverse(pd_target)? * (1.0 + snr).sqrt() + (n * j as f64 / 2.0).sqrt() * snr;
    q_function(arg)
}

/// Geometry and statistics of a detection experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub channels: usize,
    pub occupied: usize,
    pub bins_per_channel: usize,
    pub snr: f64,
    pub sigma2: f64,
    pub kappa: f64,
    pub pd_target: f64,
    pub trials: u64,
}

/// Aggregate decision counts over all trials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PipelineOutcome {
    pub false_alarms: u64,
    pub idle_decisions: u64,
    pub detections: u64,
    pub busy_decisions: u64,
    pub nonconverged: u64,
}

impl PipelineOutcome {
    pub fn pf(&self) -> f64 {
        self.false_alarms as f64 / self.idle_decisions.max(1) as f64
    }

    pub fn pd(&self) -> f64 {
        self.detections as f64 / self.busy_decisions.max(1) as f64
    }

    fn merge(self, o: Self) -> Self {
        Self {
            false_alarms: self.false_alarms + o.false_alarms,
            idle_decisions: self.idle_decisions + o.idle_decisions,
            detections: self.detections + o.detections,
            busy_decisions: self.busy_decisions + o.busy_decisions,
            nonconverged: self.nonconverged + o.nonconverged,
        }
    }
}

/// Synthesize, compress, recover and detect, `trials` times. Trial `k`
/// draws its scene, operator and noise from child stream `k`; counts are
/// integers, so the outcome is independent of scheduling.
pub fn run_detection_pipeline(cfg: &PipelineConfig, rng: &SimRng) -> Result<PipelineOutcome> {
    let n = cfg.channels * cfg.bins_per_channel;
    let dft = Dft::new(n);
    let lambda = detection_threshold(cfg.pd_target, channel_dof(cfg.bins_per_channel), cfg.snr * cfg.sigma2, cfg.sigma2)?;
    let sparsity = (cfg.occupied * cfg.bins_per_channel).max(1);
    (0..cfg.trials)
        .into_par_iter()
        .map(|k| -> Result<PipelineOutcome> {
            let mut r = rng.child(k);
            let scene = SpectrumScene::random(cfg.channels, cfg.occupied, n, cfg.snr, cfg.sigma2, &mut r)?;
            let (rt, _) = synthesize_received(&scene, &dft, &mut r)?;
            let op = if cfg.kappa >= 1.0 {
                MeasurementOp::identity(n)
            } else {
                MeasurementOp::gaussian(n, cfg.kappa, &dft, &mut r)?
            };
            let x = compress(&rt, &op)?;
            let eps = (op.lambda() as f64).sqrt() * cfg.sigma2.sqrt();
            let rec = cs_recover(&x, &op, sparsity, eps, &dft)?;
            let flags = energy_detect(&rec.spectrum, cfg.channels, lambda)?;
            let mut out = PipelineOutcome { nonconverged: (!rec.converged) as u64, ..Default::default() };
            for (c, &f) in flags.iter().enumerate() {
                if scene.is_occupied(c) {
                    out.busy_decisions += 1;
                    out.detections += f as u64;
                } else {
                    out.idle_decisions += 1;
                    out.false_alarms += f as u64;
                }
            }
            Ok(out)
        })
        .try_reduce(PipelineOutcome::default, |a, b| Ok(a.merge(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathkit::upper_incomplete_gamma;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn scene_validation() {
        assert!(SpectrumScene::new(32, vec![1, 2], 100, 0.1, 1.0).is_err());
        assert!(SpectrumScene::new(4, vec![1, 1], 8, 0.1, 1.0).is_err());
        assert!(SpectrumScene::new(4, vec![4], 8, 0.1, 1.0).is_err());
        let s = SpectrumScene::new(32, vec![3, 0, 9, 31], 1024, 0.1, 1.0).unwrap();
        assert_eq!(s.occupied, vec![0, 3, 9, 31]);
        assert_eq!(s.sparsity(), 128);
        assert!((s.snr() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn random_scene_has_k_distinct_channels() {
        let mut r = SimRng::new(4, 0);
        for _ in 0..200 {
            let s = SpectrumScene::random(32, 4, 256, 0.1, 1.0, &mut r).unwrap();
            assert_eq!(s.occupied.len(), 4);
        }
    }

    #[test]
    fn synthesis_support_and_parseval() {
        let dft = Dft::new(1024);
        let mut r = SimRng::new(1, 0);
        let scene = SpectrumScene::new(32, vec![2, 7, 11, 30], 1024, 0.1, 1.0).unwrap();
        let (rt, s) = synthesize_received(&scene, &dft, &mut r).unwrap();
        assert_eq!(s.iter().filter(|v| v.norm() > 0.0).count(), 4 * 32);
        let mut back = rt.clone();
        dft.forward(&mut back);
        let et: f64 = rt.iter().map(|v| v.norm_sqr()).sum();
        let ef: f64 = back.iter().map(|v| v.norm_sqr()).sum();
        assert!((et - ef).abs() <= 1e-9 * et);
    }

    #[test]
    fn synthesis_powers() {
        let dft = Dft::new(256);
        let rng = SimRng::new(2, 0);
        let scene = SpectrumScene::new(32, vec![0, 5, 6, 20], 256, 0.1, 1.0).unwrap();
        let mut sig = 0.0;
        for k in 0..1000 {
            let (_, s) = synthesize_received(&scene, &dft, &mut rng.child(k)).unwrap();
            sig += s.iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        let mean = sig / 1000.0;
        assert!((mean - 0.1 * 256.0).abs() < 0.05 * 25.6, "{mean}");

        let quiet = SpectrumScene::new(32, vec![], 256, 0.0, 2.0).unwrap();
        let mut noise = 0.0;
        for k in 0..200 {
            let (rt, _) = synthesize_received(&quiet, &dft, &mut rng.child(k)).unwrap();
            noise += rt.iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        assert!((noise / (200.0 * 256.0) - 2.0).abs() < 0.05);
    }

    #[test]
    fn compress_identities() {
        let n = 64;
        let dft = Dft::new(n);
        let mut r = SimRng::new(3, 0);
        let rt: Vec<Complex64> = (0..n).map(|_| r.complex_normal(1.0)).collect();
        assert_eq!(compress(&rt, &MeasurementOp::identity(n)).unwrap(), rt);

        let op = MeasurementOp::gaussian(n, 0.5, &dft, &mut r).unwrap();
        assert_eq!(op.lambda(), 32);
        let zero = vec![c(0.0); n];
        assert!(compress(&zero, &op).unwrap().iter().all(|v| v.norm() == 0.0));
        assert!(compress(&rt[..10], &op).is_err());

        // Φr == Θ(Fr)
        let x = compress(&rt, &op).unwrap();
        let mut spec = rt.clone();
        dft.forward(&mut spec);
        let y = op.apply_spectrum(&spec, &dft).unwrap();
        let diff: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = rt.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(diff <= 1e-9 * norm);
    }

    #[test]
    fn phi_rows_have_unit_expected_norm() {
        let n = 512;
        let dft = Dft::new(n);
        let op = MeasurementOp::gaussian(n, 0.5, &dft, &mut SimRng::new(8, 0)).unwrap();
        let phi = op.phi().unwrap();
        let mean: f64 = (0..op.lambda()).map(|i| phi.row(i).norm_squared()).sum::<f64>() / op.lambda() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn identity_recovery_is_exact() {
        let n = 128;
        let dft = Dft::new(n);
        let mut r = SimRng::new(5, 0);
        let rt: Vec<Complex64> = (0..n).map(|_| r.complex_normal(1.0)).collect();
        let rec = cs_recover(&rt, &MeasurementOp::identity(n), 4, 0.0, &dft).unwrap();
        let mut want = rt.clone();
        dft.forward(&mut want);
        for (a, b) in rec.spectrum.iter().zip(&want) {
            assert!((a - b).norm() <= 1e-12);
        }
        // the dense Θ of the identity operator maps the spectrum back
        let back = MeasurementOp::identity(n).theta(&dft) * DVector::from_column_slice(&rec.spectrum);
        let err: f64 = back.iter().zip(&rt).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err <= 1e-9);
    }

    #[test]
    fn square_operator_least_squares() {
        let n = 32;
        let dft = Dft::new(n);
        let mut r = SimRng::new(6, 0);
        let op = MeasurementOp::gaussian(n, 1.0, &dft, &mut r).unwrap();
        let s: Vec<Complex64> = (0..n).map(|_| r.complex_normal(1.0)).collect();
        let x = op.apply_spectrum(&s, &dft).unwrap();
        let rec = cs_recover(&x, &op, 3, 0.0, &dft).unwrap();
        for (a, b) in rec.spectrum.iter().zip(&s) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn single_spike_recovered() {
        let n = 256;
        let dft = Dft::new(n);
        let mut r = SimRng::new(7, 0);
        for trial in 0..20 {
            let op = MeasurementOp::gaussian(n, 0.5, &dft, &mut r).unwrap();
            let pos = (r.uniform() * n as f64) as usize;
            let mut s = vec![c(0.0); n];
            s[pos] = r.complex_normal(1.0) + c(0.5);
            let x = op.apply_spectrum(&s, &dft).unwrap();
            let rec = cs_recover(&x, &op, 1, 0.0, &dft).unwrap();
            assert!(rec.converged, "trial {trial}");
            let support: Vec<usize> = (0..n).filter(|&k| rec.spectrum[k].norm() > 0.0).collect();
            assert_eq!(support, vec![pos]);
            assert!((rec.spectrum[pos] - s[pos]).norm() <= 1e-6 * s[pos].norm());
        }
    }

    #[test]
    fn block_sparse_recovery_noiseless() {
        let n = 256;
        let dft = Dft::new(n);
        let mut r = SimRng::new(9, 0);
        let op = MeasurementOp::gaussian(n, 0.5, &dft, &mut r).unwrap();
        let mut s = vec![c(0.0); n];
        for v in &mut s[40..48] {
            *v = r.complex_normal(1.0);
        }
        for v in &mut s[200..208] {
            *v = r.complex_normal(1.0);
        }
        let x = op.apply_spectrum(&s, &dft).unwrap();
        let rec = cs_recover(&x, &op, 16, 0.0, &dft).unwrap();
        let err: f64 = rec.spectrum.iter().zip(&s).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = s.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(rec.converged);
        assert!(err <= 1e-6 * norm, "{err}");
    }

    #[test]
    fn zero_measurements_give_zero() {
        let n = 64;
        let dft = Dft::new(n);
        let op = MeasurementOp::gaussian(n, 0.5, &dft, &mut SimRng::new(1, 0)).unwrap();
        let rec = cs_recover(&vec![c(0.0); 32], &op, 4, 0.0, &dft).unwrap();
        assert!(rec.spectrum.iter().all(|v| v.norm() == 0.0));
        assert!(cs_recover(&vec![c(0.0); 31], &op, 4, 0.0, &dft).is_err());
        assert!(cs_recover(&vec![c(0.0); 32], &op, 0, 0.0, &dft).is_err());
    }

    #[test]
    fn threshold_examples() {
        let l = detection_threshold(0.9, 1000.0, 0.1, 1.0).unwrap();
        let q = -1.2815515655446004;
        assert!((l - 1.1 * (1.0 + q / 500f64.sqrt())).abs() < 1e-12);
        assert!((l - 1.0369).abs() < 1e-4);
        let near = detection_threshold(0.5 + 1e-12, 1000.0, 0.1, 1.0).unwrap();
        assert!((near - 1.1).abs() < 1e-9);
        let ls: Vec<f64> = [10.0, 100.0, 1000.0, 1e4].iter().map(|&n| detection_threshold(0.9, n, 0.1, 1.0).unwrap()).collect();
        assert!(ls.windows(2).all(|w| w[1] > w[0]) && ls[3] < 1.1);
        assert!(detection_threshold(0.9, 1.0, 0.1, 1.0).is_err());
        assert!(detection_threshold(0.4, 100.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn energy_detect_basics() {
        let mut s = vec![c(0.0); 16];
        assert_eq!(energy_detect(&s, 4, 0.5).unwrap(), vec![false; 4]);
        for v in &mut s[4..8] {
            *v = c(10.0);
        }
        assert_eq!(energy_detect(&s, 4, 0.5).unwrap(), vec![false, true, false, false]);
        assert!(energy_detect(&s, 5, 0.5).is_err());
    }

    // Noise-only channels: the mean of b bins of |CN(0,1)|² is Gamma(b, 1/b),
    // so Pr{stat > λ} = Γ(b, bλ)/Γ(b).
    #[test]
    fn noise_only_flag_rate_matches_gamma_tail() {
        let b = 8;
        let cfg = PipelineConfig {
            channels: 32,
            occupied: 0,
            bins_per_channel: b,
            snr: 0.1,
            sigma2: 1.0,
            kappa: 1.0,
            pd_target: 0.9,
            trials: 10_000,
        };
        let out = run_detection_pipeline(&cfg, &SimRng::new(12, 0)).unwrap();
        let lam = detection_threshold(0.9, channel_dof(b), 0.1, 1.0).unwrap();
        let oracle = upper_incomplete_gamma(b as f64, b as f64 * lam).unwrap() / libm::tgamma(b as f64);
        assert!((out.pf() - oracle).abs() < 0.005, "{} vs {oracle}", out.pf());
        assert_eq!(out.idle_decisions, 320_000);
    }

    #[test]
    fn sample_count_examples() {
        assert_eq!(sample_count(0.25, 1.0, 1e-3, 2.5e-7).unwrap(), 1000);
        assert_eq!(sample_count(0.25, 1.0, 2e-3, 2.5e-7).unwrap(), 2000);
        assert!(matches!(sample_count(0.25, 1.0, 1e-3, 1.0), Err(Error::InfeasibleSensing(_))));
        assert!(sample_count(0.0, 1.0, 1e-3, 2.5e-7).is_err());
    }

    #[test]
    fn pf_examples() {
        let pf = pf_analytic(0.9, 0.1, 1000.0).unwrap();
        let arg = -1.2815515655446004 * 1.1f64.sqrt() + 500f64.sqrt() * 0.1;
        assert!((arg - 0.8920).abs() < 1e-4);
        assert!((pf - 0.5 * libm::erfc(arg / 2f64.sqrt())).abs() < 1e-14);
        assert!((pf - 0.186).abs() < 1e-3);
        assert!((pf_analytic(0.9, 0.0, 1000.0).unwrap() - 0.9).abs() < 1e-9);
        assert!(pf_analytic(0.9, 0.1, 1e9).unwrap() < 1e-12);
        assert!(pf_analytic(0.9, -0.1, 100.0).is_err());
        assert!(pf_analytic(0.9, 0.1, 1.0).is_err());
    }

    #[test]
    fn qf_examples() {
        for &n in &[10.0, 100.0, 1000.0] {
            assert_eq!(qf_analytic(0.9, 0.1, n, 1).unwrap(), pf_analytic(0.9, 0.1, n).unwrap());
        }
        let q = qf_analytic(0.9, 0.1, 100.0, 10).unwrap();
        assert!((q - pf_analytic(0.9, 0.1, 1000.0).unwrap()).abs() < 1e-12);
        assert!(qf_analytic(0.9, 0.1, 1000.0, 50).unwrap() <= 1e-10);
        assert!(qf_analytic(0.9, 0.1, 1000.0, 0).is_err());
    }

    #[test]
    fn pf_qf_monotone() {
        let snrs = [0.01, 0.05, 0.1, 0.3, 0.6];
        for &snr in &snrs {
            let v: Vec<f64> = [10.0, 100.0, 1000.0].iter().map(|&n| pf_analytic(0.9, snr, n).unwrap()).collect();
            assert!(v.windows(2).all(|w| w[1] < w[0]));
            let v: Vec<f64> = [1, 5, 50].iter().map(|&j| qf_analytic(0.9, snr, 100.0, j).unwrap()).collect();
            assert!(v.windows(2).all(|w| w[1] < w[0]));
        }
        let v: Vec<f64> = snrs.iter().map(|&s| pf_analytic(0.9, s, 200.0).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
    }
}
