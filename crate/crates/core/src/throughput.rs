//! Throughput objectives and frame/power optimizers.
//!
//! `P0` is a single SU with compressive sensing; `P1` is a cooperative
//! network of `J` SUs, `J1` of them active, with matrix completion at the
//! fusion center. Both maximize over `(α1, β, α2, Pt)`.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::completion::{cs_sample_bound, mc_sample_bound, McBoundMode};
use crate::error::{Error, Result};
use crate::mathkit::SimRng;
use crate::sensing::{pf_analytic, qf_analytic, sample_count_real, SensingParams};
use crate::units::{dbm_to_watts, watts_to_dbm};
use crate::wpt::{mu_coefficient, outage_closed_form, FrameSplit, OutageKind, PowerThresholds, WptParams, FRAME_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    P0,
    P1,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignTuple {
    pub alpha1: f64,
    pub beta: f64,
    pub alpha2: f64,
    /// Transmit power (W).
    pub pt: f64,
}

impl DesignTuple {
    pub fn new(alpha1: f64, beta: f64, alpha2: f64, pt: f64) -> Self {
        Self { alpha1, beta, alpha2, pt }
    }

    fn key(&self) -> [f64; 4] {
        [self.alpha1, self.beta, self.alpha2, self.pt]
    }
}

/// Everything the objectives and constraints depend on.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub variant: Variant,
    pub wpt: WptParams,
    pub kappa: f64,
    /// Frame length (s).
    pub t: f64,
    /// `Ps`, `N0` and the `Pt` bounds; the `pt` field is ignored.
    pub power: PowerThresholds,
    pub sensing: SensingParams,
    /// PU signal-to-noise ratio (linear).
    pub snr: f64,
    /// Channel count `I`.
    pub channels: usize,
    /// Occupied channel count `K`.
    pub occupied: usize,
    /// Nominal Nyquist sample count of the scene.
    pub n: usize,
    pub j: usize,
    pub j1: usize,
    pub alpha2_min: f64,
    pub mc_bound: McBoundMode,
    pub c_mc: f64,
}

impl ProblemSpec {
    pub fn p0() -> Self {
        Self {
            variant: Variant::P0,
            wpt: WptParams::default(),
            kappa: 1.0,
            t: 1.0,
            power: PowerThresholds::default(),
            sensing: SensingParams::default(),
            snr: 0.1,
            channels: 32,
            occupied: 4,
            n: 1000,
            j: 1,
            j1: 1,
            alpha2_min: 0.05,
            mc_bound: McBoundMode::default(),
            c_mc: 2.0,
        }
    }

    pub fn p1() -> Self {
        Self { variant: Variant::P1, kappa: 0.5, j: 50, j1: 30, ..Self::p0() }
    }

    pub fn validate(&self) -> Result<()> {
        self.wpt.validate()?;
        self.sensing.validate()?;
        self.power.with_pt(self.power.pt_min).validate()?;
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::domain(format!("kappa must lie in (0, 1], got {}", self.kappa)));
        }
        if !(self.t > 0.0) {
            return Err(Error::domain("T must be > 0"));
        }
        if !(self.alpha2_min >= 0.0 && self.alpha2_min < 1.0) {
            return Err(Error::domain(format!("alpha2_min must lie in [0, 1), got {}", self.alpha2_min)));
        }
        if !(self.snr >= 0.0) {
            return Err(Error::domain("snr must be >= 0"));
        }
        if self.channels == 0 || self.occupied == 0 || self.occupied > self.channels {
            return Err(Error::domain("need 1 <= K <= I"));
        }
        if self.variant == Variant::P1 && !(self.j1 >= 1 && self.j1 <= self.j) {
            return Err(Error::domain(format!("need 1 <= J1 <= J, got J1 = {}, J = {}", self.j1, self.j)));
        }
        Ok(())
    }

    /// Bin-level sparsity `K·n/I`.
    pub fn k_eff(&self) -> f64 {
        self.occupied as f64 * self.n as f64 / self.channels as f64
    }

    fn beta_scale(&self) -> f64 {
        self.sensing.e_s / (self.kappa * self.t * self.power.ps)
    }

    /// Lower bound on `β` from the CS sample bound.
    pub fn beta_min_cs(&self) -> Result<f64> {
        Ok(self.beta_scale() * cs_sample_bound(self.n as f64, self.k_eff(), self.sensing.c_cs)? as f64)
    }

    /// Lower bound on `β` from the matrix-completion sample bound.
    pub fn beta_min_mc(&self) -> f64 {
        let bound = mc_sample_bound(self.n, self.j, self.k_eff(), self.c_mc, self.mc_bound);
        self.beta_scale() * bound / self.j1 as f64
    }

    /// Lower bound on `β` for this variant.
    pub fn beta_min(&self) -> Result<f64> {
        match self.variant {
            Variant::P0 => self.beta_min_cs(),
            Variant::P1 => Ok(self.beta_min_mc()),
        }
    }

    /// Smallest `J1` satisfying the matrix-completion bound at `β = 1`.
    pub fn min_feasible_j1(&self) -> Option<usize> {
        (1..=self.j).find(|&j1| Self { j1, ..self.clone() }.beta_min_mc() <= 1.0)
    }

    fn frame(&self, d: &DesignTuple) -> FrameSplit {
        FrameSplit { alpha1: d.alpha1, beta: d.beta, alpha2: d.alpha2, kappa: self.kappa, t: self.t }
    }

    fn thresholds(&self, d: &DesignTuple) -> PowerThresholds {
        self.power.with_pt(d.pt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Constraint {
    /// `α1 ∈ [0, 1]`.
    C1,
    /// CS sample bound on `β`, and `β ≤ 1`.
    C2,
    /// `α2 ∈ [α2_min, 1]`.
    C3,
    /// `1 − α1 − κβ − α2 ∈ [0, 1]`.
    C4,
    /// `Pt ∈ [Pt_min, Pt_max]`.
    C5,
    /// Matrix-completion sample bound on `β`, and `β ≤ 1`.
    C6,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Feasibility {
    pub violated: Vec<Constraint>,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        self.violated.is_empty()
    }
}

const BOUND_TOL: f64 = 1e-12;

/// Checks C1–C5 (P0) or C1, C3–C6 (P1).
pub fn feasible(d: &DesignTuple, spec: &ProblemSpec) -> Feasibility {
    let mut v = Vec::new();
    let within = |x: f64, lo: f64, hi: f64| x.is_finite() && x >= lo - BOUND_TOL && x <= hi + BOUND_TOL;
    if !within(d.alpha1, 0.0, 1.0) {
        v.push(Constraint::C1);
    }
    let (beta_c, beta_lo) = match spec.variant {
        Variant::P0 => (Constraint::C2, spec.beta_min_cs().unwrap_or(f64::INFINITY)),
        Variant::P1 => (Constraint::C6, spec.beta_min_mc()),
    };
    if !within(d.beta, beta_lo, 1.0) {
        v.push(beta_c);
    }
    if !within(d.alpha2, spec.alpha2_min, 1.0) {
        v.push(Constraint::C3);
    }
    if !within(1.0 - d.alpha1 - spec.kappa * d.beta - d.alpha2, 0.0, 1.0) {
        v.push(Constraint::C4);
    }
    let p = &spec.power;
    let rel = |x: f64| x * 1e-12;
    if !(d.pt.is_finite() && d.pt >= p.pt_min - rel(p.pt_min) && d.pt <= p.pt_max + rel(p.pt_max)) {
        v.push(Constraint::C5);
    }
    v.sort_by_key(|c| *c as u8);
    Feasibility { violated: v }
}

/// `log₂(1 + Pt/N0)`.
pub fn tau_transmission(pt: f64, n0: f64) -> Result<f64> {
    if !(n0 > 0.0) {
        return Err(Error::domain(format!("N0 must be > 0, got {n0}")));
    }
    if !(pt >= 0.0) {
        return Err(Error::domain(format!("Pt must be >= 0, got {pt}")));
    }
    Ok((pt / n0).ln_1p() / std::f64::consts::LN_2)
}

/// Outage of `kind`, certain when its harvest window is empty.
fn outage(kind: OutageKind, spec: &ProblemSpec, d: &DesignTuple, cache: &mut OutageCache) -> Result<f64> {
    match mu_coefficient(kind, &spec.wpt, &spec.frame(d), &spec.thresholds(d)) {
        Ok(mu) => cache.get(mu, &spec.wpt),
        Err(Error::DegenerateFrame(_)) => Ok(1.0),
        Err(e) => Err(e),
    }
}

/// Memo of closed-form outage keyed by the exact bits of `μ`.
#[derive(Debug, Default)]
pub struct OutageCache {
    map: HashMap<u64, f64>,
}

impl OutageCache {
    fn get(&mut self, mu: f64, params: &WptParams) -> Result<f64> {
        if let Some(v) = self.map.get(&mu.to_bits()) {
            return Ok(*v);
        }
        let v = outage_closed_form(mu, params)?;
        if self.map.len() > 1 << 20 {
            self.map.clear();
        }
        self.map.insert(mu.to_bits(), v);
        Ok(v)
    }
}

/// The four factors of the single-SU throughput.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsFactors {
    pub p_s_out: f64,
    pub p_t_out: f64,
    pub pf: f64,
    pub tx: f64,
    pub tau_t: f64,
}

impl CsFactors {
    pub fn value(&self) -> f64 {
        (1.0 - self.p_s_out) * (1.0 - self.p_t_out) * (1.0 - self.pf) * self.tx * self.tau_t
    }
}

fn require_feasible(d: &DesignTuple, spec: &ProblemSpec) -> Result<()> {
    let f = feasible(d, spec);
    if f.is_feasible() {
        Ok(())
    } else {
        Err(Error::Infeasible(f.violated))
    }
}

fn cs_factors_cached(d: &DesignTuple, spec: &ProblemSpec, cache: &mut OutageCache) -> Result<CsFactors> {
    let n = sample_count_real(d.beta, spec.t, spec.power.ps, spec.sensing.e_s);
    Ok(CsFactors {
        p_s_out: outage(OutageKind::S, spec, d, cache)?,
        p_t_out: outage(OutageKind::T, spec, d, cache)?,
        pf: pf_analytic(spec.sensing.pd_target, spec.snr, n)?,
        tx: (1.0 - d.alpha1 - spec.kappa * d.beta - d.alpha2).max(0.0),
        tau_t: tau_transmission(d.pt, spec.power.n0)?,
    })
}

pub fn tau_cs_factors(d: &DesignTuple, spec: &ProblemSpec) -> Result<CsFactors> {
    require_feasible(d, &ProblemSpec { variant: Variant::P0, ..spec.clone() })?;
    cs_factors_cached(d, spec, &mut OutageCache::default())
}

/// Single-SU throughput with compressive sensing (bits/s/Hz).
pub fn tau_cs(d: &DesignTuple, spec: &ProblemSpec) -> Result<f64> {
    Ok(tau_cs_factors(d, spec)?.value())
}

/// Per-SU terms of the cooperative throughput.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McTerms {
    /// Throughput of one active SU.
    pub active: f64,
    /// Throughput of one inactive SU.
    pub inactive: f64,
    pub j: usize,
    pub j1: usize,
}

impl McTerms {
    /// Network sum `J1·active + (J − J1)·inactive`.
    pub fn total(&self) -> f64 {
        self.j1 as f64 * self.active + (self.j - self.j1) as f64 * self.inactive
    }

    pub fn per_su(&self) -> f64 {
        self.total() / self.j as f64
    }
}

fn mc_terms_cached(d: &DesignTuple, spec: &ProblemSpec, cache: &mut OutageCache) -> Result<McTerms> {
    let n = sample_count_real(d.beta, spec.t, spec.power.ps, spec.sensing.e_s);
    let qf = qf_analytic(spec.sensing.pd_target, spec.snr, n, spec.j)?;
    let tx = (1.0 - d.alpha1 - spec.kappa * d.beta - d.alpha2).max(0.0);
    let common = (1.0 - qf) * tx * tau_transmission(d.pt, spec.power.n0)?;
    Ok(McTerms {
        active: (1.0 - outage(OutageKind::A, spec, d, cache)?) * common,
        inactive: (1.0 - outage(OutageKind::I, spec, d, cache)?) * common,
        j: spec.j,
        j1: spec.j1,
    })
}

pub fn tau_mc_terms(d: &DesignTuple, spec: &ProblemSpec) -> Result<McTerms> {
    require_feasible(d, &ProblemSpec { variant: Variant::P1, ..spec.clone() })?;
    mc_terms_cached(d, spec, &mut OutageCache::default())
}

/// Network throughput of the cooperative system (sum over all `J` SUs).
pub fn tau_mc(d: &DesignTuple, spec: &ProblemSpec) -> Result<f64> {
    Ok(tau_mc_terms(d, spec)?.total())
}

/// Optimizer objective: `tau_cs` for P0, per-SU `tau_mc / J` for P1.
pub fn objective(d: &DesignTuple, spec: &ProblemSpec) -> Result<f64> {
    Evaluator::new(spec).eval(d)
}

/// Objective evaluator with an outage memo; one per thread.
#[derive(Debug)]
pub struct Evaluator<'a> {
    spec: &'a ProblemSpec,
    cache: OutageCache,
    pub evaluations: u64,
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Self {
        Self { spec, cache: OutageCache::default(), evaluations: 0 }
    }

    pub fn eval(&mut self, d: &DesignTuple) -> Result<f64> {
        require_feasible(d, self.spec)?;
        self.eval_unchecked(d)
    }

    fn eval_unchecked(&mut self, d: &DesignTuple) -> Result<f64> {
        self.evaluations += 1;
        match self.spec.variant {
            Variant::P0 => Ok(cs_factors_cached(d, self.spec, &mut self.cache)?.value()),
            Variant::P1 => Ok(mc_terms_cached(d, self.spec, &mut self.cache)?.per_su()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Grid,
    Random,
    Local,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Grid => "grid",
            Method::Random => "random",
            Method::Local => "local",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptResult {
    pub best: DesignTuple,
    pub value: f64,
    pub evaluations: u64,
    pub method: Method,
    pub feasible: bool,
}

impl OptResult {
    fn infeasible(method: Method, evaluations: u64) -> Self {
        Self {
            best: DesignTuple::default(),
            value: f64::NAN,
            evaluations,
            method,
            feasible: false,
        }
    }
}

/// Candidate ordering: higher value wins, ties go to the lexicographically
/// smallest tuple, so reductions are schedule-independent.
fn better(a: &(f64, DesignTuple), b: &(f64, DesignTuple)) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => {
            let (ka, kb) = (a.1.key(), b.1.key());
            ka.iter().zip(kb.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Less)
        }
    }
}

fn pick(a: Option<(f64, DesignTuple)>, b: Option<(f64, DesignTuple)>) -> Option<(f64, DesignTuple)> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if better(&y, &x) { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Lattice steps; `pt_db` is in dB on the `[Pt_min, Pt_max]` dBm interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSteps {
    pub alpha1: f64,
    pub beta: f64,
    pub alpha2: f64,
    pub pt_db: f64,
}

impl Default for GridSteps {
    fn default() -> Self {
        Self { alpha1: 0.02, beta: 0.02, alpha2: 0.02, pt_db: 1.0 }
    }
}

impl GridSteps {
    pub fn uniform(delta: f64, pt_db: f64) -> Self {
        Self { alpha1: delta, beta: delta, alpha2: delta, pt_db }
    }
}

/// `lo, lo+Δ, …` up to `hi` inclusive. Points are `lo + k·Δ`, so a lattice
/// with step `Δ/2` contains every point of the one with step `Δ`.
pub fn lattice(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if hi < lo {
        return Vec::new();
    }
    if step <= 0.0 || hi == lo {
        return vec![lo];
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=count).map(|k| lo + k as f64 * step).collect()
}

/// Exhaustive lattice search. The `α2` loop stops at the first C4
/// violation, and so does the `β` loop when even `α2_min` violates it.
pub fn grid_search(spec: &ProblemSpec, steps: &GridSteps) -> Result<OptResult> {
    spec.validate()?;
    for s in [steps.alpha1, steps.beta, steps.alpha2, steps.pt_db] {
        if !(s > 0.0) {
            return Err(Error::domain("grid steps must be > 0"));
        }
    }
    let beta_lo = spec.beta_min()?;
    let a1s = lattice(0.0, 1.0, steps.alpha1);
    let betas = lattice(beta_lo, 1.0, steps.beta);
    let a2s = lattice(spec.alpha2_min, 1.0, steps.alpha2);
    let pts: Vec<f64> = lattice(watts_to_dbm(spec.power.pt_min), watts_to_dbm(spec.power.pt_max), steps.pt_db)
        .into_iter()
        .map(dbm_to_watts)
        .map(|w| w.clamp(spec.power.pt_min, spec.power.pt_max))
        .collect();

    let slices: Vec<(Option<(f64, DesignTuple)>, u64)> = a1s
        .par_iter()
        .map(|&a1| -> Result<(Option<(f64, DesignTuple)>, u64)> {
            let mut ev = Evaluator::new(spec);
            let mut best = None;
            for &b in &betas {
                if 1.0 - a1 - spec.kappa * b - a2s[0] < -FRAME_TOL {
                    break;
                }
                for &a2 in &a2s {
                    if 1.0 - a1 - spec.kappa * b - a2 < -FRAME_TOL {
                        break;
                    }
                    for &pt in &pts {
                        let d = DesignTuple::new(a1, b, a2, pt);
                        if !feasible(&d, spec).is_feasible() {
                            continue;
                        }
                        let v = ev.eval_unchecked(&d)?;
                        best = pick(best, Some((v, d)));
                    }
                }
            }
            Ok((best, ev.evaluations))
        })
        .collect::<Result<_>>()?;
    let evaluations = slices.iter().map(|s| s.1).sum();
    let best = slices.into_iter().fold(None, |acc, s| pick(acc, s.0));
    Ok(finish(best, Method::Grid, evaluations))
}

fn finish(best: Option<(f64, DesignTuple)>, method: Method, evaluations: u64) -> OptResult {
    match best {
        Some((value, best)) => OptResult { best, value, evaluations, method, feasible: true },
        None => OptResult::infeasible(method, evaluations),
    }
}

/// Search box `[lo, hi]` per coordinate (`Pt` in W).
fn search_box(spec: &ProblemSpec) -> Result<[(f64, f64); 4]> {
    Ok([
        (0.0, 1.0),
        (spec.beta_min()?, 1.0),
        (spec.alpha2_min, 1.0),
        (spec.power.pt_min, spec.power.pt_max),
    ])
}

/// Draws `z` tuples uniformly from the box and keeps the best feasible one.
/// Sample `i` uses child stream `i`, so a larger `z` sees a superset of the
/// samples of a smaller one.
pub fn random_sampling(spec: &ProblemSpec, z: u64, rng: &SimRng) -> Result<OptResult> {
    spec.validate()?;
    if z == 0 {
        return Err(Error::domain("Z must be >= 1"));
    }
    let bx = search_box(spec)?;
    if bx[1].0 > 1.0 {
        return Ok(OptResult::infeasible(Method::Random, 0));
    }
    let chunks: Vec<(Option<(f64, DesignTuple)>, u64)> = (0..z)
        .into_par_iter()
        .fold(
            || (None, 0u64, Evaluator::new(spec)),
            |(best, _, mut ev), i| {
                let mut r = rng.child(i);
                let u: Vec<f64> = (0..4).map(|_| r.uniform()).collect();
                let d = DesignTuple::new(
                    bx[0].0 + u[0] * (bx[0].1 - bx[0].0),
                    bx[1].0 + u[1] * (bx[1].1 - bx[1].0),
                    bx[2].0 + u[2] * (bx[2].1 - bx[2].0),
                    bx[3].0 + u[3] * (bx[3].1 - bx[3].0),
                );
                let best = if feasible(&d, spec).is_feasible() {
                    // the closed forms cannot fail on a feasible tuple
                    let v = ev.eval_unchecked(&d).unwrap_or(f64::NEG_INFINITY);
                    pick(best, Some((v, d)))
                } else {
                    best
                };
                let n = ev.evaluations;
                (best, n, ev)
            },
        )
        .map(|(b, n, _)| (b, n))
        .collect();
    let evaluations = chunks.iter().map(|c| c.1).sum();
    let best = chunks.into_iter().fold(None, |acc, c| pick(acc, c.0));
    Ok(finish(best, Method::Random, evaluations))
}

/// Local-search tuning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalConfig {
    pub starts: usize,
    /// Objective evaluations per start.
    pub budget: u64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self { starts: 20, budget: 400 }
    }
}

/// Maps the unit cube onto the search box; `Pt` is interpolated in dBm.
struct Coords {
    bx: [(f64, f64); 4],
    pt_db: (f64, f64),
}

impl Coords {
    fn new(spec: &ProblemSpec) -> Result<Self> {
        let bx = search_box(spec)?;
        Ok(Self { bx, pt_db: (watts_to_dbm(bx[3].0), watts_to_dbm(bx[3].1)) })
    }

    fn to_tuple(&self, u: &[f64; 4]) -> DesignTuple {
        let lin = |k: usize| {
            let (lo, hi) = self.bx[k];
            if u[k] <= 0.0 {
                lo
            } else if u[k] >= 1.0 {
                hi
            } else {
                lo + u[k] * (hi - lo)
            }
        };
        let pt = if u[3] <= 0.0 {
            self.bx[3].0
        } else if u[3] >= 1.0 {
            self.bx[3].1
        } else {
            dbm_to_watts(self.pt_db.0 + u[3] * (self.pt_db.1 - self.pt_db.0))
        };
        DesignTuple::new(lin(0), lin(1), lin(2), pt)
    }

    fn to_unit(&self, d: &DesignTuple) -> [f64; 4] {
        let unit = |x: f64, (lo, hi): (f64, f64)| if hi > lo { ((x - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        [
            unit(d.alpha1, self.bx[0]),
            unit(d.beta, self.bx[1]),
            unit(d.alpha2, self.bx[2]),
            unit(watts_to_dbm(d.pt), self.pt_db),
        ]
    }
}

/// Folds a coordinate back into `[0, 1]` by reflection at the faces.
fn reflect(mut x: f64) -> f64 {
    if !x.is_finite() {
        return 0.5;
    }
    x = x.rem_euclid(2.0);
    if x > 1.0 {
        2.0 - x
    } else {
        x
    }
}

struct Local<'a, 'b> {
    spec: &'a ProblemSpec,
    coords: &'b Coords,
    ev: Evaluator<'a>,
    best: Option<(f64, DesignTuple)>,
    budget: u64,
}

impl Local<'_, '_> {
    /// Penalized cost `−τ`; C4 violations cost `PENALTY·(1 + overshoot)`.
    fn cost(&mut self, u: &[f64; 4]) -> f64 {
        let d = self.coords.to_tuple(u);
        if feasible(&d, self.spec).is_feasible() {
            let v = self.ev.eval_unchecked(&d).unwrap_or(f64::NEG_INFINITY);
            self.best = pick(self.best.take(), Some((v, d)));
            -v
        } else {
            let over = (d.alpha1 + self.spec.kappa * d.beta + d.alpha2 - 1.0).max(0.0);
            PENALTY * (1.0 + over)
        }
    }

    fn exhausted(&self) -> bool {
        self.ev.evaluations >= self.budget
    }

    fn nelder_mead(&mut self, start: [f64; 4]) -> [f64; 4] {
        let mut simplex: Vec<([f64; 4], f64)> = Vec::with_capacity(5);
        simplex.push((start, self.cost(&start)));
        for k in 0..4 {
            let mut p = start;
            p[k] = reflect(p[k] + if p[k] < 0.5 { 0.1 } else { -0.1 });
            let c = self.cost(&p);
            simplex.push((p, c));
        }
        while !self.exhausted() {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex
                .iter()
                .map(|(p, _)| (0..4).map(|k| (p[k] - simplex[0].0[k]).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if spread < 1e-9 {
                break;
            }
            let mut centroid = [0.0; 4];
            for (p, _) in &simplex[..4] {
                for k in 0..4 {
                    centroid[k] += p[k] / 4.0;
                }
            }
            let worst = simplex[4];
            let along = |t: f64| {
                let mut q = [0.0; 4];
                for k in 0..4 {
                    q[k] = reflect(centroid[k] + t * (worst.0[k] - centroid[k]));
                }
                q
            };
            let xr = along(-1.0);
            let fr = self.cost(&xr);
            if fr < simplex[0].1 {
                let xe = along(-2.0);
                let fe = self.cost(&xe);
                simplex[4] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[3].1 {
                simplex[4] = (xr, fr);
            } else {
                let (xc, fc) = if fr < worst.1 {
                    let x = along(-0.5);
                    (x, self.cost(&x))
                } else {
                    let x = along(0.5);
                    (x, self.cost(&x))
                };
                if fc < worst.1.min(fr) {
                    simplex[4] = (xc, fc);
                } else {
                    let b = simplex[0].0;
                    for v in simplex.iter_mut().skip(1) {
                        for (x, &bk) in v.0.iter_mut().zip(b.iter()) {
                            *x = bk + 0.5 * (*x - bk);
                        }
                        v.1 = self.cost(&v.0);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        simplex[0].0
    }

    /// Coordinate moves with shrinking steps, including jumps to the faces.
    fn polish(&mut self, mut u: [f64; 4], extra: u64) -> [f64; 4] {
        self.budget += extra;
        let mut fu = self.cost(&u);
        let mut h = 0.05;
        while h > 1e-7 && !self.exhausted() {
            let mut improved = false;
            for k in 0..4 {
                for cand in [u[k] + h, u[k] - h, 0.0, 1.0] {
                    let mut p = u;
                    p[k] = cand.clamp(0.0, 1.0);
                    let fp = self.cost(&p);
                    if fp < fu {
                        u = p;
                        fu = fp;
                        improved = true;
                    }
                }
            }
            if !improved {
                h *= 0.5;
            }
        }
        u
    }
}

const PENALTY: f64 = 1e3;

/// Multi-start derivative-free local search: Nelder–Mead in normalized
/// coordinates followed by a coordinate polish. Each start's best feasible
/// point (the start included) competes for the result.
pub fn local_search(spec: &ProblemSpec, starts: &[DesignTuple], budget: u64) -> Result<OptResult> {
    spec.validate()?;
    let coords = Coords::new(spec)?;
    let runs: Vec<(Option<(f64, DesignTuple)>, u64)> = starts
        .par_iter()
        .map(|s| {
            if !feasible(s, spec).is_feasible() {
                return (None, 0);
            }
            let mut loc = Local { spec, coords: &coords, ev: Evaluator::new(spec), best: None, budget };
            let v = loc.ev.eval_unchecked(s).unwrap_or(f64::NEG_INFINITY);
            loc.best = Some((v, *s));
            let u = loc.nelder_mead(coords.to_unit(s));
            let u = loc.polish(u, budget / 4);
            let _ = u;
            (loc.best, loc.ev.evaluations)
        })
        .collect();
    let evaluations = runs.iter().map(|r| r.1).sum();
    let best = runs.into_iter().fold(None, |acc, r| pick(acc, r.0));
    Ok(finish(best, Method::Local, evaluations))
}

/// Draws `count` feasible starting tuples by rejection from the box;
/// attempt `i` uses child stream `i`.
pub fn random_starts(spec: &ProblemSpec, count: usize, rng: &SimRng) -> Result<Vec<DesignTuple>> {
    let bx = search_box(spec)?;
    let mut out = Vec::with_capacity(count);
    if bx[1].0 > 1.0 {
        return Ok(out);
    }
    let coords = Coords::new(spec)?;
    let mut i = 0u64;
    while out.len() < count && i < 1000 * count as u64 + 1000 {
        let mut r = rng.child(i);
        i += 1;
        let u = [r.uniform(), r.uniform(), r.uniform(), r.uniform()];
        let d = coords.to_tuple(&u);
        if feasible(&d, spec).is_feasible() {
            out.push(d);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathkit::q_function;

    fn mw(dbm: f64) -> f64 {
        dbm_to_watts(dbm)
    }

    #[test]
    fn tau_t_examples() {
        assert_eq!(tau_transmission(0.0, 1.0).unwrap(), 0.0);
        assert!((tau_transmission(1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((tau_transmission(10.0, 1.0).unwrap() - 11f64.log2()).abs() < 1e-14);
        assert!((tau_transmission(10.0, 1.0).unwrap() - 3.4594).abs() < 1e-4);
        assert!(tau_transmission(1.0, 0.0).is_err());
    }

    #[test]
    fn feasibility_examples() {
        let spec = ProblemSpec::p0();
        let f = feasible(&DesignTuple::default(), &spec);
        assert!(f.violated.contains(&Constraint::C2) && f.violated.contains(&Constraint::C3));
        assert!(f.violated.contains(&Constraint::C5));
        assert!(feasible(&DesignTuple::new(0.25, 0.25, 0.2, spec.power.pt_min), &spec).is_feasible());
        // boundary of C4 is closed
        assert!(feasible(&DesignTuple::new(0.5, 0.3, 0.2, spec.power.pt_min), &spec).is_feasible());
        assert_eq!(
            feasible(&DesignTuple::new(0.6, 0.3, 0.2, spec.power.pt_min), &spec).violated,
            vec![Constraint::C4]
        );
        let p1 = ProblemSpec::p1();
        let f = feasible(&DesignTuple::new(0.25, 0.1, 0.2, p1.power.pt_min), &p1);
        assert_eq!(f.violated, vec![Constraint::C6]);
    }

    #[test]
    fn beta_bounds() {
        let spec = ProblemSpec::p0();
        assert_eq!(spec.k_eff(), 125.0);
        // ⌈2·125·ln 8⌉ = 520 samples at 2.5e-7 J over 1 mW
        assert!((spec.beta_min_cs().unwrap() - 0.13).abs() < 1e-12);
        let half = ProblemSpec { kappa: 0.5, ..spec.clone() };
        assert!((half.beta_min_cs().unwrap() - 0.26).abs() < 1e-12);
        let p1 = ProblemSpec::p1();
        assert!((p1.beta_min_mc() - 2.5e-7 * 15000.0 / (0.5 * 1e-3 * 30.0)).abs() < 1e-12);
        assert_eq!(p1.min_feasible_j1(), Some(8));
        let theo = ProblemSpec { mc_bound: McBoundMode::Theoretical, ..p1 };
        assert_eq!(theo.min_feasible_j1(), None);
    }

    #[test]
    fn tau_cs_edge_cases() {
        let spec = ProblemSpec::p0();
        let pt = spec.power.pt_min;
        assert_eq!(tau_cs(&DesignTuple::new(0.5, 0.3, 0.2, pt), &spec).unwrap(), 0.0);
        let dark = ProblemSpec { wpt: WptParams { lambda_p: 0.0, ..WptParams::default() }, ..spec.clone() };
        assert_eq!(tau_cs(&DesignTuple::new(0.25, 0.25, 0.2, pt), &dark).unwrap(), 0.0);
        assert!(matches!(tau_cs(&DesignTuple::new(0.6, 0.3, 0.2, pt), &spec), Err(Error::Infeasible(_))));
        let no_harvest = tau_cs(&DesignTuple::new(0.0, 0.25, 0.2, pt), &spec).unwrap();
        assert_eq!(no_harvest, 0.0);
    }

    // Factor-by-factor composition against formulas evaluated here directly.
    #[test]
    fn tau_cs_operating_point() {
        let n0 = mw(-90.0);
        let spec = ProblemSpec {
            power: PowerThresholds { pt_min: 10.0 * n0, ..PowerThresholds::default() },
            ..ProblemSpec::p0()
        };
        let d = DesignTuple::new(0.25, 0.25, 0.2, 10.0 * n0);
        let got = tau_cs(&d, &spec).unwrap();

        let w = &spec.wpt;
        let scale = w.eta * w.pp * w.a;
        let mu_s = 0.25 * 1e-3 / (scale * 0.25);
        let mu_t = (d.pt * 0.3 + 1e-3 * 0.25) / (scale * 0.45);
        let out = |mu: f64| {
            // M terms of Γ(m+1, μ)/m! = e^{-μ} Σ_{i≤m} μ^i/i! for δ = 1
            let s: f64 = (0..w.antennas)
                .map(|m| (0..=m).map(|i| mu.powi(i as i32) / libm::tgamma(i as f64 + 1.0)).sum::<f64>() * (-mu).exp())
                .sum();
            (-std::f64::consts::PI * w.lambda_p * s / mu).exp()
        };
        let pf = q_function(-1.2815515655446004 * 1.1f64.sqrt() + 500f64.sqrt() * 0.1).unwrap();
        let want = (1.0 - out(mu_s)) * (1.0 - out(mu_t)) * (1.0 - pf) * 0.3 * 11f64.log2();
        assert!((got - want).abs() < 1e-9 * want, "{got} vs {want}");
        let f = tau_cs_factors(&d, &spec).unwrap();
        assert!((f.value() - got).abs() == 0.0);
    }

    #[test]
    fn tau_mc_collapses_and_mixes() {
        let single = ProblemSpec { variant: Variant::P1, j: 1, j1: 1, mc_bound: McBoundMode::Practical { ratio: 0.01 }, ..ProblemSpec::p0() };
        let d = DesignTuple::new(0.3, 0.4, 0.1, mw(3.0));
        let a = tau_mc(&d, &single).unwrap();
        let f = tau_cs_factors(&d, &ProblemSpec { variant: Variant::P0, ..single.clone() }).unwrap();
        // one active SU: no sensing outage, same transmit outage and Qf = Pf
        let want = (1.0 - f.p_t_out) * (1.0 - f.pf) * f.tx * f.tau_t;
        assert!((a - want).abs() < 1e-12 * want);

        let p1 = ProblemSpec::p1();
        let d = DesignTuple::new(0.3, 0.5, 0.1, mw(3.0));
        let t = tau_mc_terms(&d, &p1).unwrap();
        assert!(t.inactive > t.active);
        let per = t.per_su();
        assert!(per > t.active && per < t.inactive);
        let all = ProblemSpec { j1: 50, ..p1.clone() };
        let ta = tau_mc_terms(&d, &all).unwrap();
        assert!((ta.total() - 50.0 * ta.active).abs() < 1e-12);
    }

    #[test]
    fn lattice_nesting() {
        let coarse = lattice(0.13, 1.0, 0.02);
        let fine = lattice(0.13, 1.0, 0.01);
        assert!(coarse.iter().all(|x| fine.contains(x)));
        assert_eq!(lattice(0.5, 0.5, 0.1), vec![0.5]);
        assert_eq!(lattice(0.0, 1.0, 0.25), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn grid_point_lattice() {
        let spec = ProblemSpec {
            power: PowerThresholds { pt_min: mw(5.0), pt_max: mw(5.0), ..PowerThresholds::default() },
            alpha2_min: 0.2,
            ..ProblemSpec::p0()
        };
        let steps = GridSteps { alpha1: 2.0, beta: 2.0, alpha2: 2.0, pt_db: 1.0 };
        let r = grid_search(&spec, &steps).unwrap();
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.best, DesignTuple::new(0.0, 0.13, 0.2, mw(5.0)));
    }

    // Independent brute force, loops in reverse order with no early exit.
    #[test]
    fn coarse_grid_matches_brute_force() {
        let spec = ProblemSpec::p0();
        let steps = GridSteps::uniform(0.25, 5.0);
        let r = grid_search(&spec, &steps).unwrap();
        let mut best: Option<(f64, DesignTuple)> = None;
        let pts: Vec<f64> = [20.0, 15.0, 10.0, 5.0, 0.0].iter().map(|&x| mw(x)).collect();
        for &pt in &pts {
            for k2 in (0..=3).rev() {
                let a2 = 0.05 + 0.25 * k2 as f64;
                for kb in (0..=3).rev() {
                    let b = 0.13 + 0.25 * kb as f64;
                    for k1 in (0..=4).rev() {
                        let d = DesignTuple::new(0.25 * k1 as f64, b, a2, pt);
                        if let Ok(v) = tau_cs(&d, &spec) {
                            if best.is_none_or(|(bv, _)| v > bv) {
                                best = Some((v, d));
                            }
                        }
                    }
                }
            }
        }
        let (bv, bd) = best.unwrap();
        assert_eq!(r.value, bv);
        assert_eq!(r.best, bd);
    }

    #[test]
    fn refinement_never_hurts_and_reevaluates() {
        let spec = ProblemSpec { alpha2_min: 0.1, ..ProblemSpec::p0() };
        let a = grid_search(&spec, &GridSteps::uniform(0.1, 4.0)).unwrap();
        let b = grid_search(&spec, &GridSteps::uniform(0.05, 2.0)).unwrap();
        assert!(b.value >= a.value);
        for r in [&a, &b] {
            assert!(feasible(&r.best, &spec).is_feasible());
            assert_eq!(objective(&r.best, &spec).unwrap(), r.value);
            assert_eq!(r.best.alpha2, spec.alpha2_min);
        }
    }

    #[test]
    fn random_sampling_behaviour() {
        let spec = ProblemSpec::p0();
        let rng = SimRng::new(3, 0);
        let vals: Vec<f64> = [10u64, 100, 1000].iter().map(|&z| random_sampling(&spec, z, &rng).unwrap().value).collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        let again = random_sampling(&spec, 1000, &rng).unwrap();
        assert_eq!(again.value, vals[2]);
        let r = random_sampling(&spec, 1000, &rng).unwrap();
        assert!(feasible(&r.best, &spec).is_feasible());
        assert_eq!(objective(&r.best, &spec).unwrap(), r.value);
    }

    #[test]
    fn random_single_feasible_sample() {
        let spec = ProblemSpec::p0();
        let rng = SimRng::new(1, 0);
        let seed = (0..)
            .find(|&s| random_sampling(&spec, 1, &SimRng::new(s, 0)).unwrap().feasible)
            .unwrap();
        let r = random_sampling(&spec, 1, &SimRng::new(seed, 0)).unwrap();
        assert_eq!(r.evaluations, 1);
        let _ = rng;
    }

    #[test]
    fn local_search_improves_and_handles_bad_starts() {
        let spec = ProblemSpec::p0();
        let start = DesignTuple::new(0.3, 0.3, 0.2, mw(10.0));
        let v0 = objective(&start, &spec).unwrap();
        let r = local_search(&spec, &[start], 400).unwrap();
        assert!(r.feasible && r.value >= v0);
        assert_eq!(objective(&r.best, &spec).unwrap(), r.value);
        let bad = local_search(&spec, &[DesignTuple::default()], 100).unwrap();
        assert!(!bad.feasible);
    }

    #[test]
    fn local_from_grid_optimum_never_regresses() {
        let spec = ProblemSpec::p0();
        let g = grid_search(&spec, &GridSteps::uniform(0.05, 2.0)).unwrap();
        let l = local_search(&spec, &[g.best], 400).unwrap();
        assert!(l.value >= g.value);
    }

    #[test]
    fn multi_start_takes_max() {
        let spec = ProblemSpec::p0();
        let a = DesignTuple::new(0.1, 0.14, 0.7, mw(20.0));
        let b = DesignTuple::new(0.4, 0.2, 0.06, mw(1.0));
        let ra = local_search(&spec, &[a], 60).unwrap();
        let rb = local_search(&spec, &[b], 60).unwrap();
        let both = local_search(&spec, &[a, b], 60).unwrap();
        assert_eq!(both.value, ra.value.max(rb.value));
    }

    #[test]
    fn random_starts_are_feasible() {
        let spec = ProblemSpec::p1();
        let s = random_starts(&spec, 20, &SimRng::new(2, 0)).unwrap();
        assert_eq!(s.len(), 20);
        assert!(s.iter().all(|d| feasible(d, &spec).is_feasible()));
    }

    #[test]
    fn reflect_folds_into_unit_interval() {
        for (x, want) in [(0.3, 0.3), (-0.2, 0.2), (1.25, 0.75), (2.5, 0.5), (-1.5, 0.5)] {
            assert!((reflect(x) - want).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn continuous_in_pt() {
        let spec = ProblemSpec::p0();
        let grid: Vec<f64> = (0..=2000).map(|k| spec.power.pt_min + k as f64 * (spec.power.pt_max - spec.power.pt_min) / 2000.0).collect();
        let vals: Vec<f64> = grid.iter().map(|&pt| tau_cs(&DesignTuple::new(0.4, 0.2, 0.1, pt), &spec).unwrap()).collect();
        let h = grid[1] - grid[0];
        let lip = vals.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0, f64::max);
        assert!(lip.is_finite() && lip < 1e4, "{lip}");
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn spec(variant: Variant, kappa: f64, a2: f64) -> ProblemSpec {
        let base = match variant {
            Variant::P0 => ProblemSpec::p0(),
            Variant::P1 => ProblemSpec::p1(),
        };
        ProblemSpec { kappa, alpha2_min: a2, ..base }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn random_optimum_is_feasible_and_reproducible(p1: bool, kappa in 0.5f64..=1.0, a2 in 0.0f64..0.3, seed: u64) {
            let s = spec(if p1 { Variant::P1 } else { Variant::P0 }, kappa, a2);
            let r = random_sampling(&s, 300, &SimRng::new(seed, 0)).unwrap();
            if r.feasible {
                prop_assert!(feasible(&r.best, &s).is_feasible());
                prop_assert_eq!(objective(&r.best, &s).unwrap().to_bits(), r.value.to_bits());
            }
        }

        #[test]
        fn objective_finite_on_feasible_points(p1: bool, seed: u64) {
            let s = spec(if p1 { Variant::P1 } else { Variant::P0 }, 0.75, 0.05);
            for d in random_starts(&s, 4, &SimRng::new(seed, 1)).unwrap() {
                prop_assert!(feasible(&d, &s).is_feasible());
                let v = objective(&d, &s).unwrap();
                prop_assert!(v.is_finite() && v >= 0.0);
            }
        }

        #[test]
        fn tau_mc_lipschitz_in_pt(a1 in 0.1f64..0.5, b in 0.26f64..0.4) {
            let s = ProblemSpec::p1();
            let (lo, hi) = (s.power.pt_min, s.power.pt_max);
            let h = (hi - lo) / 400.0;
            let vals: Vec<f64> = (0..=400)
                .map(|k| tau_mc(&DesignTuple::new(a1, b, 0.05, lo + k as f64 * h), &s).unwrap())
                .collect();
            let lip = vals.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0, f64::max);
            prop_assert!(lip.is_finite() && lip < 1e6, "{}", lip);
        }
    }
}
