//! Wireless power transfer from a Poisson field of power beacons.
//!
//! Each SU picks the beacon with the strongest effective gain
//! `g·A·d^-ξ`, where `g` is the Erlang(M) MRT gain and `d` the distance.
//! Harvested power over a slot of fraction `γ` of the frame is spent
//! over another slot, so every outage event reduces to
//! `max_p g_p·d_p^-ξ < μ` for a slot-specific coefficient `μ`.
//!
//! All quantities are SI (W, m, s). dBm conversion happens at the
//! configuration boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathkit::{ln_gamma, sample_poisson, upper_incomplete_gamma, ErlangSampler, SimRng};
use crate::units::{dbm_to_watts, free_space_constant};

/// Power-beacon field and path-loss constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WptParams {
    /// Beacon density (PB/m²).
    pub lambda_p: f64,
    /// Antennas per beacon.
    pub antennas: u32,
    /// Beacon transmit power (W).
    pub pp: f64,
    /// RF-to-DC conversion efficiency.
    pub eta: f64,
    /// Path-loss constant at the 1 m reference.
    pub a: f64,
    /// Path-loss exponent.
    pub xi: f64,
    /// Protection-zone radius (m).
    pub d0: f64,
}

impl WptParams {
    pub fn new(lambda_p: f64, antennas: u32, pp: f64, eta: f64, a: f64, xi: f64, d0: f64) -> Result<Self> {
        let p = Self { lambda_p, antennas, pp, eta, a, xi, d0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            return Err(Error::domain(format!("lambda_p must be >= 0, got {}", self.lambda_p)));
        }
        if self.antennas < 1 {
            return Err(Error::domain("antennas must be >= 1"));
        }
        if !(self.pp > 0.0 && self.pp.is_finite()) {
            return Err(Error::domain(format!("Pp must be > 0, got {}", self.pp)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::domain(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::domain(format!("A must be > 0, got {}", self.a)));
        }
        if !(self.xi >= 2.0 && self.xi.is_finite()) {
            return Err(Error::domain(format!("xi must be >= 2, got {}", self.xi)));
        }
        if !(self.d0 >= 1.0 && self.d0.is_finite()) {
            return Err(Error::domain(format!("d0 must be >= 1 m, got {}", self.d0)));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        2.0 / self.xi
    }

    /// Received-power scale `η·Pp·A`.
    fn harvest_scale(&self) -> f64 {
        self.eta * self.pp * self.a
    }
}

impl Default for WptParams {
    fn default() -> Self {
        Self {
            lambda_p: 1e-3,
            antennas: 32,
            pp: dbm_to_watts(43.0),
            eta: 0.8,
            a: free_space_constant(900e6),
            xi: 2.0,
            d0: 1.0,
        }
    }
}

/// Four-slot frame: harvest `α1`, sense `κβ`, harvest `α2`, transmit the rest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSplit {
    pub alpha1: f64,
    pub beta: f64,
    pub alpha2: f64,
    pub kappa: f64,
    /// Frame length (s).
    pub t: f64,
}

/// Slack allowed on `α1 + κβ + α2 ≤ 1` for lattice points that land on the
/// boundary up to rounding.
pub const FRAME_TOL: f64 = 1e-12;

impl FrameSplit {
    pub fn new(alpha1: f64, beta: f64, alpha2: f64, kappa: f64, t: f64) -> Result<Self> {
        let f = Self { alpha1, beta, alpha2, kappa, t };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha1", self.alpha1), ("beta", self.beta), ("alpha2", self.alpha2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::domain(format!("kappa must lie in (0, 1], got {}", self.kappa)));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::domain(format!("T must be > 0, got {}", self.t)));
        }
        if self.alpha1 + self.kappa * self.beta + self.alpha2 > 1.0 + FRAME_TOL {
            return Err(Error::domain("alpha1 + kappa*beta + alpha2 exceeds 1"));
        }
        Ok(())
    }

    /// Time fraction actually spent sensing.
    pub fn sensing_fraction(&self) -> f64 {
        self.kappa * self.beta
    }

    /// Time fraction left for data transmission, clamped at 0.
    pub fn transmit_fraction(&self) -> f64 {
        (1.0 - self.alpha1 - self.kappa * self.beta - self.alpha2).max(0.0)
    }
}

/// Power thresholds and bounds (W).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerThresholds {
    pub ps: f64,
    pub pt: f64,
    pub pt_min: f64,
    pub pt_max: f64,
    pub n0: f64,
}

impl PowerThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.ps > 0.0 && self.ps.is_finite()) {
            return Err(Error::domain(format!("Ps must be > 0, got {}", self.ps)));
        }
        if !(self.n0 > 0.0 && self.n0.is_finite()) {
            return Err(Error::domain(format!("N0 must be > 0, got {}", self.n0)));
        }
        if !(self.pt_min > 0.0 && self.pt_min <= self.pt_max && self.pt_max.is_finite()) {
            return Err(Error::domain("need 0 < Pt_min <= Pt_max"));
        }
        if !(self.pt >= self.pt_min && self.pt <= self.pt_max) {
            return Err(Error::domain(format!("Pt = {} outside [Pt_min, Pt_max]", self.pt)));
        }
        Ok(())
    }

    pub fn with_pt(self, pt: f64) -> Self {
        Self { pt, ..self }
    }
}

impl Default for PowerThresholds {
    fn default() -> Self {
        Self {
            ps: dbm_to_watts(0.0),
            pt: dbm_to_watts(0.0),
            pt_min: dbm_to_watts(0.0),
            pt_max: dbm_to_watts(20.0),
            n0: dbm_to_watts(-90.0),
        }
    }
}

/// One realisation of the beacon field as `(distance, gain)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PbDraw {
    pub pbs: Vec<(f64, f64)>,
}

/// Samples beacons in the annulus `d0 ≤ d ≤ r_max`.
pub fn sample_pb_field(params: &WptParams, r_max: f64, rng: &mut SimRng) -> Result<PbDraw> {
    let erlang = ErlangSampler::new(params.antennas)?;
    let mut draw = PbDraw::default();
    sample_pb_field_into(params, &erlang, r_max, rng, &mut draw.pbs)?;
    Ok(draw)
}

fn sample_pb_field_into(
    params: &WptParams,
    erlang: &ErlangSampler,
    r_max: f64,
    rng: &mut SimRng,
    out: &mut Vec<(f64, f64)>,
) -> Result<()> {
    if !(r_max > params.d0) {
        return Err(Error::domain(format!("r_max = {r_max} must exceed d0 = {}", params.d0)));
    }
    out.clear();
    let (lo, hi) = (params.d0 * params.d0, r_max * r_max);
    let count = sample_poisson(params.lambda_p * std::f64::consts::PI * (hi - lo), rng)?;
    for _ in 0..count {
        // area-uniform in the annulus: d² uniform on [d0², r_max²]
        let d = (lo + (hi - lo) * rng.uniform()).sqrt();
        out.push((d, erlang.sample(rng)));
    }
    Ok(())
}

/// `max_p g_p·A·d_p^-ξ`, or 0 for an empty field.
pub fn best_effective_gain(draw: &PbDraw, params: &WptParams) -> f64 {
    draw.pbs
        .iter()
        .map(|&(d, g)| g * params.a * d.powf(-params.xi))
        .fold(0.0, f64::max)
}

/// Instantaneous powers available in each slot for effective gain `G`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotPowers {
    /// Sensing power from the first harvest.
    pub sensing: f64,
    /// Transmit power of an active SU (after paying for sensing).
    pub transmit_active: f64,
    /// Transmit power of an inactive SU (harvests through the sensing slot).
    pub transmit_inactive: f64,
}

pub fn slot_powers(
    g: f64,
    params: &WptParams,
    frame: &FrameSplit,
    thr: &PowerThresholds,
) -> Result<SlotPowers> {
    let kb = frame.sensing_fraction();
    let tx = 1.0 - frame.alpha1 - kb - frame.alpha2;
    if tx <= 0.0 {
        return Err(Error::DegenerateFrame("no transmission slot".into()));
    }
    if kb <= 0.0 {
        return Err(Error::DegenerateFrame("no sensing slot".into()));
    }
    let h = g * params.eta * params.pp;
    Ok(SlotPowers {
        sensing: h * frame.alpha1 / kb,
        transmit_active: ((h * (frame.alpha1 + frame.alpha2) - thr.ps * kb) / tx).max(0.0),
        transmit_inactive: h * (frame.alpha1 + kb + frame.alpha2) / tx,
    })
}

/// Which power-outage event to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutageKind {
    /// Sensing power below `Ps`.
    S,
    /// Single-SU transmit power below `Pt`.
    T,
    /// Active cooperative SU transmit power below `Pt`.
    A,
    /// Inactive cooperative SU transmit power below `Pt`.
    I,
}

/// Threshold `μ` such that outage is `max g·d^-ξ < μ`.
pub fn mu_coefficient(
    kind: OutageKind,
    params: &WptParams,
    frame: &FrameSplit,
    thr: &PowerThresholds,
) -> Result<f64> {
    let kb = frame.sensing_fraction();
    let tx = (1.0 - frame.alpha1 - kb - frame.alpha2).max(0.0);
    let scale = params.harvest_scale();
    let (num, den) = match kind {
        OutageKind::S => (kb * thr.ps, frame.alpha1),
        OutageKind::T | OutageKind::A => (thr.pt * tx + thr.ps * kb, frame.alpha1 + frame.alpha2),
        OutageKind::I => (thr.pt * tx, frame.alpha1 + kb + frame.alpha2),
    };
    if den <= 0.0 {
        return Err(Error::DegenerateFrame(format!("zero harvest window for outage kind {kind:?}")));
    }
    Ok(num / (scale * den))
}

/// Closed-form outage `exp(-πλδ/μ^δ · Σ_{m<M} Γ(m+δ, μ·d0^ξ)/m!)`.
pub fn outage_closed_form(mu: f64, params: &WptParams) -> Result<f64> {
    if !(mu >= 0.0) || mu.is_infinite() {
        return Err(Error::domain(format!("mu must be finite and >= 0, got {mu}")));
    }
    if mu == 0.0 {
        return Ok(0.0);
    }
    if params.lambda_p == 0.0 {
        return Ok(1.0);
    }
    let delta = params.delta();
    let s = gamma_sum(params.antennas, delta, mu * params.d0.powf(params.xi))?;
    let exponent = std::f64::consts::PI * params.lambda_p * delta * s / mu.powf(delta);
    Ok((-exponent).exp())
}

/// `Σ_{m<M} Γ(m+δ, z)/m!` by the upward recurrence
/// `Γ(a+1, z) = aΓ(a, z) + z^a e^-z`, carried in the scaled form
/// `t_m = Γ(m+δ, z)/m!`.
fn gamma_sum(antennas: u32, delta: f64, z: f64) -> Result<f64> {
    let mut t = upper_incomplete_gamma(delta, z)?;
    let mut sum = t;
    let ln_z = z.ln();
    for m in 0..antennas.saturating_sub(1) {
        let a = m as f64 + delta;
        let tail = if z > 0.0 {
            (a * ln_z - z - ln_gamma(m as f64 + 1.0)).exp()
        } else {
            0.0
        };
        t = (a * t + tail) / (m as f64 + 1.0);
        sum += t;
    }
    Ok(sum)
}

/// Monte Carlo outage estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub p: f64,
    pub stderr: f64,
    pub trials: u64,
    pub outages: u64,
}

impl McEstimate {
    fn from_counts(outages: u64, trials: u64) -> Self {
        let p = outages as f64 / trials as f64;
        Self {
            p,
            stderr: (p * (1.0 - p) / trials as f64).sqrt(),
            trials,
            outages,
        }
    }
}

/// Default simulation radius for threshold `μ`: `10·(M/μ)^(1/ξ)` capped at 10 km.
pub fn default_r_max(mu: f64, params: &WptParams) -> f64 {
    let r = 10.0 * (params.antennas as f64 / mu).powf(1.0 / params.xi);
    if r.is_finite() {
        r.clamp(params.d0 * 2.0, 1e4)
    } else {
        1e4
    }
}

/// Simulates the slot-power outage of `kind` by drawing beacon fields.
/// Trial `k` uses child stream `k` of `rng`, so the estimate does not depend
/// on evaluation order.
pub fn outage_monte_carlo(
    kind: OutageKind,
    params: &WptParams,
    frame: &FrameSplit,
    thr: &PowerThresholds,
    trials: u64,
    r_max: Option<f64>,
    rng: &SimRng,
) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::domain("trials must be >= 1"));
    }
    let mu = mu_coefficient(kind, params, frame, thr)?;
    let r_max = r_max.unwrap_or_else(|| default_r_max(mu, params));
    // validate the frame once so per-trial errors cannot occur
    slot_powers(0.0, params, frame, thr)?;
    let erlang = ErlangSampler::new(params.antennas)?;
    let mut buf = Vec::new();
    let mut outages = 0u64;
    for k in 0..trials {
        let mut r = rng.child(k);
        sample_pb_field_into(params, &erlang, r_max, &mut r, &mut buf)?;
        let g = max_gain(&buf, params);
        let p = slot_powers(g, params, frame, thr)?;
        let short = match kind {
            OutageKind::S => p.sensing < thr.ps,
            OutageKind::T | OutageKind::A => p.transmit_active < thr.pt,
            OutageKind::I => p.transmit_inactive < thr.pt,
        };
        outages += short as u64;
    }
    Ok(McEstimate::from_counts(outages, trials))
}

/// Simulates `Pr{max g·d^-ξ < μ}` directly for a given `μ`.
pub fn outage_monte_carlo_mu(
    mu: f64,
    params: &WptParams,
    trials: u64,
    r_max: Option<f64>,
    rng: &SimRng,
) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::domain("trials must be >= 1"));
    }
    if !(mu >= 0.0) {
        return Err(Error::domain(format!("mu must be >= 0, got {mu}")));
    }
    let r_max = r_max.unwrap_or_else(|| default_r_max(mu, params));
    let erlang = ErlangSampler::new(params.antennas)?;
    let mut buf = Vec::new();
    let mut outages = 0u64;
    for k in 0..trials {
        let mut r = rng.child(k);
        sample_pb_field_into(params, &erlang, r_max, &mut r, &mut buf)?;
        outages += (max_gain(&buf, params) < mu * params.a) as u64;
    }
    Ok(McEstimate::from_counts(outages, trials))
}

fn max_gain(pbs: &[(f64, f64)], params: &WptParams) -> f64 {
    let best = if params.xi == 2.0 {
        pbs.iter().map(|&(d, g)| g / (d * d)).fold(0.0, f64::max)
    } else {
        pbs.iter().map(|&(d, g)| g * d.powf(-params.xi)).fold(0.0, f64::max)
    };
    best * params.a
}

/// `1 − (1 − p_s)(1 − p_t)`.
pub fn system_outage(p_s: f64, p_t: f64) -> Result<f64> {
    for p in [p_s, p_t] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("probability {p} outside [0, 1]")));
        }
    }
    Ok(1.0 - (1.0 - p_s) * (1.0 - p_t))
}

/// Outage of active, inactive, and the network-averaged SU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CssOutage {
    pub active: f64,
    pub inactive: f64,
    pub average: f64,
}

/// Outage profile of a cooperative network with `j1` of `j` SUs active.
/// Active SUs have enough energy to sense by definition, so only their
/// transmission can fail.
pub fn css_outage_profile(
    params: &WptParams,
    frame: &FrameSplit,
    thr: &PowerThresholds,
    j: usize,
    j1: usize,
) -> Result<CssOutage> {
    if j1 < 1 || j1 > j {
        return Err(Error::domain(format!("need 1 <= J1 <= J, got J1 = {j1}, J = {j}")));
    }
    let active = system_outage(0.0, outage_closed_form(mu_coefficient(OutageKind::A, params, frame, thr)?, params)?)?;
    let inactive = outage_closed_form(mu_coefficient(OutageKind::I, params, frame, thr)?, params)?;
    let average = (j1 as f64 * active + (j - j1) as f64 * inactive) / j as f64;
    Ok(CssOutage { active, inactive, average })
}

/// Draws how many of `j` SUs are active in one frame: an SU is active when
/// its first-slot harvest covers the sensing energy `Ps·κβ·T`.
pub fn sample_active_count(
    params: &WptParams,
    frame: &FrameSplit,
    thr: &PowerThresholds,
    j: usize,
    rng: &SimRng,
) -> Result<usize> {
    let mu = mu_coefficient(OutageKind::S, params, frame, thr)?;
    let r_max = default_r_max(mu, params);
    let erlang = ErlangSampler::new(params.antennas)?;
    let mut buf = Vec::new();
    let mut active = 0;
    for su in 0..j {
        let mut r = rng.child(su as u64);
        sample_pb_field_into(params, &erlang, r_max, &mut r, &mut buf)?;
        let p = slot_powers(max_gain(&buf, params), params, frame, thr)?;
        active += (p.sensing >= thr.ps) as usize;
    }
    Ok(active)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn params(lambda_p: f64, antennas: u32, d0: f64) -> WptParams {
        WptParams { lambda_p, antennas, d0, ..WptParams::default() }
    }

    proptest! {
        #[test]
        fn closed_form_is_probability(lp in 0.0f64..0.05, m in 1u32..48, mu in 0.0f64..10.0, d0 in 1.0f64..3.0) {
            let p = outage_closed_form(mu, &params(lp, m, d0)).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn closed_form_monotone(lp in 1e-5f64..1e-2, m in 1u32..40, mu in 1e-3f64..1.0, f in 1.05f64..2.0) {
            let base = outage_closed_form(mu, &params(lp, m, 1.0)).unwrap();
            prop_assume!(base > 1e-300 && base < 1.0);
            prop_assert!(outage_closed_form(mu, &params(lp * f, m, 1.0)).unwrap() < base);
            prop_assert!(outage_closed_form(mu * f, &params(lp, m, 1.0)).unwrap() > base);
            prop_assert!(outage_closed_form(mu, &params(lp, m, f)).unwrap() >= base);
        }

        #[test]
        fn inactive_never_worse(a1 in 0.05f64..0.4, b in 0.05f64..0.3, a2 in 0.0f64..0.2, kappa in 0.1f64..1.0,
                                ps_dbm in -10.0f64..10.0, pt_dbm in -10.0f64..20.0, lp in 1e-4f64..1e-2) {
            prop_assume!(a1 + kappa * b + a2 < 0.95);
            let f = FrameSplit::new(a1, b, a2, kappa, 1.0).unwrap();
            let thr = PowerThresholds { ps: dbm_to_watts(ps_dbm), pt: dbm_to_watts(pt_dbm), ..PowerThresholds::default() };
            let p = params(lp, 32, 1.0);
            let mu_a = mu_coefficient(OutageKind::A, &p, &f, &thr).unwrap();
            let mu_i = mu_coefficient(OutageKind::I, &p, &f, &thr).unwrap();
            prop_assert!(mu_i < mu_a);
            prop_assert!(outage_closed_form(mu_i, &p).unwrap() <= outage_closed_form(mu_a, &p).unwrap());
        }

        #[test]
        fn system_outage_dominates_parts(ps in 0.0f64..=1.0, pt in 0.0f64..=1.0) {
            let s = system_outage(ps, pt).unwrap();
            prop_assert!(s >= ps.max(pt) - 1e-15 && s <= 1.0);
        }

        #[test]
        fn slot_powers_linear(g in 0.0f64..1e-3, scale in 0.1f64..10.0) {
            let f = FrameSplit::new(0.25, 0.25, 0.2, 1.0, 1.0).unwrap();
            let thr = PowerThresholds { ps: 0.0, ..PowerThresholds::default() };
            let p = WptParams::default();
            let q = WptParams { pp: p.pp * scale, ..p.clone() };
            let (a, b) = (slot_powers(g, &p, &f, &thr).unwrap(), slot_powers(g, &q, &f, &thr).unwrap());
            prop_assert!((b.sensing - scale * a.sensing).abs() <= 1e-12 * b.sensing.max(1e-300));
            prop_assert!((b.transmit_inactive - scale * a.transmit_inactive).abs() <= 1e-12 * b.transmit_inactive.max(1e-300));
        }
    }
}
