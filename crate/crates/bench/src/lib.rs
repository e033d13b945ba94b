//! Fixtures shared by the benchmarks.

use num_complex::Complex64;
use wpcr_core::mathkit::{Dft, SimRng};
use wpcr_core::sensing::{compress, synthesize_received, MeasurementOp, SpectrumScene};
use wpcr_core::throughput::GridSteps;

/// A compressed measurement of a random block-sparse scene.
pub struct CsFixture {
    pub x: Vec<Complex64>,
    pub op: MeasurementOp,
    pub sparsity: usize,
    pub eps: f64,
    pub dft: Dft,
}

pub fn cs_fixture(channels: usize, bins: usize, kappa: f64, seed: u64) -> CsFixture {
    let n = channels * bins;
    let dft = Dft::new(n);
    let mut rng = SimRng::new(seed, 0);
    let scene = SpectrumScene::random(channels, 4, n, 0.1, 1.0, &mut rng).expect("valid scene");
    let (r, _) = synthesize_received(&scene, &dft, &mut rng).expect("synthesis");
    let op = MeasurementOp::gaussian(n, kappa, &dft, &mut rng).expect("operator");
    let x = compress(&r, &op).expect("compress");
    let eps = (op.lambda() as f64).sqrt();
    CsFixture { x, op, sparsity: 4 * bins, eps, dft }
}

/// Grid coarse enough for a benchmark iteration.
pub fn coarse_steps() -> GridSteps {
    GridSteps::uniform(0.05, 5.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes() {
        let f = cs_fixture(32, 8, 0.5, 1);
        assert_eq!(f.op.n(), 256);
        assert_eq!(f.x.len(), f.op.lambda());
        assert_eq!(f.sparsity, 32);
    }
}
