//! Unit conversions applied at the configuration boundary.

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Free-space path-loss constant `(c / (4 pi f))^2` at a 1 m reference.
pub fn free_space_constant(carrier_hz: f64) -> f64 {
    let k = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * carrier_hz);
    k * k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_roundtrip() {
        assert!((dbm_to_watts(0.0) - 1e-3).abs() < 1e-18);
        assert!((dbm_to_watts(43.0) - 19.952_623_149_688_8).abs() < 1e-9);
        for &x in &[-90.0, 0.0, 10.0, 43.0] {
            assert!((watts_to_dbm(dbm_to_watts(x)) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn path_loss_constant_at_900_mhz() {
        let a = free_space_constant(900e6);
        assert!((a - 7.04e-4).abs() < 5e-6, "{a}");
    }
}
