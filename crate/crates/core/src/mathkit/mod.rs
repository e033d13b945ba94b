//! Numerical kernels shared by every other module: Gaussian tail and
//! incomplete-gamma special functions, seeded per-stream random draws, and
//! dense linear algebra (SVD, unitary DFT).

mod linalg;
mod rng;
mod special;

pub use linalg::{frobenius_norm, nuclear_norm, svd, CMatrix, Dft, RMatrix, Svd};
pub use rng::{sample_channel_gain, sample_poisson, ErlangSampler, SimRng};
pub use special::{
    ln_gamma, q_function, q_inverse, regularized_upper_gamma, upper_incomplete_gamma,
};
