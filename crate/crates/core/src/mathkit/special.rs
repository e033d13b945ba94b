use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

const MAX_ITER: usize = 500;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// Gaussian tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("Q(x) needs finite x, got {x}")));
    }
    Ok(0.5 * libm::erfc(x / SQRT_2))
}

/// Inverse of [`q_function`] on `(0, 1)`.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("Q^-1(p) needs p in (0,1), got {p}")));
    }
    // Q^-1(p) = Phi^-1(1 - p) = -Phi^-1(p)
    Ok(-normal_quantile(p))
}

// Acklam's rational approximation followed by one Halley step against erfc.
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    let e = 0.5 * libm::erfc(-x / SQRT_2) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

pub fn ln_gamma(a: f64) -> f64 {
    libm::lgamma(a)
}

/// Upper incomplete gamma `Gamma(a, z) = int_z^inf t^(a-1) e^(-t) dt`.
///
/// Lower series for `z < a + 1`, Lentz continued fraction otherwise.
pub fn upper_incomplete_gamma(a: f64, z: f64) -> Result<f64> {
    check_args(a, z)?;
    if z == 0.0 {
        return Ok(libm::tgamma(a));
    }
    if z < a + 1.0 {
        let lower = lower_series(a, z)?;
        Ok(libm::tgamma(a) - lower)
    } else {
        upper_continued_fraction(a, z)
    }
}

/// Regularized upper incomplete gamma `Q(a, z) = Gamma(a, z) / Gamma(a)`.
pub fn regularized_upper_gamma(a: f64, z: f64) -> Result<f64> {
    check_args(a, z)?;
    if z == 0.0 {
        return Ok(1.0);
    }
    let lg = ln_gamma(a);
    if z < a + 1.0 {
        let p = lower_series(a, z)? / lg.exp();
        Ok((1.0 - p).max(0.0))
    } else {
        Ok(upper_continued_fraction(a, z)? / lg.exp())
    }
}

fn check_args(a: f64, z: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::domain(format!("incomplete gamma needs a > 0, got {a}")));
    }
    if !(z >= 0.0) || z.is_nan() {
        return Err(Error::domain(format!("incomplete gamma needs z >= 0, got {z}")));
    }
    Ok(())
}

// gamma(a, z) = e^-z z^a sum_n z^n / (a (a+1) ... (a+n))
fn lower_series(a: f64, z: f64) -> Result<f64> {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= z / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            return Ok(sum * (a * z.ln() - z).exp());
        }
    }
    Err(Error::domain(format!("incomplete gamma series did not converge (a={a}, z={z})")))
}

// Gamma(a, z) = e^-z z^a / (z + 1 - a - 1(1-a)/(z + 3 - a - ...)), modified Lentz.
fn upper_continued_fraction(a: f64, z: f64) -> Result<f64> {
    let mut b = z + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            return Ok(h * (a * z.ln() - z).exp());
        }
    }
    Err(Error::domain(format!(
        "incomplete gamma continued fraction did not converge (a={a}, z={z})"
    )))
}
