use std::sync::Arc;

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type RMatrix = DMatrix<f64>;

/// Thin SVD `A = U diag(s) V^H` with `s` sorted nonincreasing.
#[derive(Clone, Debug)]
pub struct Svd<T: ComplexField> {
    pub u: DMatrix<T>,
    pub s: DVector<f64>,
    pub v: DMatrix<T>,
}

impl<T: ComplexField<RealField = f64>> Svd<T> {
    pub fn reconstruct(&self) -> DMatrix<T> {
        let mut us = self.u.clone();
        for (j, sv) in self.s.iter().enumerate() {
            let mut col = us.column_mut(j);
            col *= T::from_real(*sv);
        }
        us * self.v.adjoint()
    }
}

pub fn svd<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> Result<Svd<T>> {
    if a.iter().any(|x| !x.clone().is_finite()) {
        return Err(Error::domain("svd input has non-finite entries"));
    }
    let (rows, cols) = a.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(rows, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(cols, 0),
        });
    }
    let dec = a
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::domain("svd did not converge"))?;
    let u = dec.u.expect("u requested");
    let v_t = dec.v_t.expect("v_t requested");
    let s = dec.singular_values;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut su = DMatrix::zeros(rows, k);
    let mut sv = DMatrix::zeros(cols, k);
    let mut ss = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &v_t.row(src).adjoint());
        ss[dst] = s[src];
    }
    Ok(Svd { u: su, s: ss, v: sv })
}

pub fn nuclear_norm<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> Result<f64> {
    Ok(svd(a)?.s.iter().sum())
}

pub fn frobenius_norm<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> f64 {
    a.norm()
}

/// Unitary DFT of a fixed length (`1/sqrt(n)` on both directions).
#[derive(Clone)]
pub struct Dft {
    n: usize,
    scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Dft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            scale: 1.0 / (n as f64).sqrt(),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place `F x`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n);
        self.forward.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }

    /// In-place `F^-1 x`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n);
        self.inverse.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }
}

impl std::fmt::Debug for Dft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft").field("n", &self.n).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathkit::SimRng;

    fn orthonormality_error<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> f64 {
        let g = m.adjoint() * m;
        let eye = DMatrix::<T>::identity(g.nrows(), g.ncols());
        (g - eye).norm()
    }

    #[test]
    fn identity_and_diagonal_spectra() {
        let s = svd(&RMatrix::identity(3, 3)).unwrap();
        assert!(s.s.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let d = RMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let s = svd(&d).unwrap();
        assert_eq!(s.s.len(), 3);
        for (got, want) in s.s.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_two_product() {
        let mut r = SimRng::new(3, 0);
        let a = RMatrix::from_fn(8, 2, |_, _| r.standard_normal());
        let b = RMatrix::from_fn(2, 5, |_, _| r.standard_normal());
        let s = svd(&(a * b)).unwrap();
        for k in 2..5 {
            assert!(s.s[k] <= 1e-9 * s.s[0], "s[{k}] = {}", s.s[k]);
        }
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        let mut r = SimRng::new(99, 0);
        for trial in 0..200u64 {
            let rows = 1 + (r.uniform() * 64.0) as usize;
            let cols = 1 + (r.uniform() * 64.0) as usize;
            let a = CMatrix::from_fn(rows, cols, |_, _| r.complex_normal(1.0));
            let dec = svd(&a).unwrap();
            let err = (&a - dec.reconstruct()).norm();
            assert!(err <= 1e-9 * a.norm(), "trial {trial}: {err}");
            assert!(orthonormality_error(&dec.u) < 1e-9);
            assert!(orthonormality_error(&dec.v) < 1e-9);
            assert!(dec.s.iter().all(|v| *v >= 0.0));
            assert!(dec.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rejects_nan() {
        let mut a = RMatrix::identity(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(svd(&a).is_err());
    }

    #[test]
    fn dft_is_unitary() {
        let mut r = SimRng::new(1, 1);
        let dft = Dft::new(48);
        let x: Vec<Complex64> = (0..48).map(|_| r.complex_normal(1.0)).collect();
        let mut y = x.clone();
        dft.forward(&mut y);
        let ex: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let ey: f64 = y.iter().map(|v| v.norm_sqr()).sum();
        assert!((ex - ey).abs() < 1e-12 * ex);
        dft.inverse(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
