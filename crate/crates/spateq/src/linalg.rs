//! Small dense linear-algebra helpers over f64 and Complex64.

use crate::ad::Scalar;
use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;

/// Numeric field a path can live in.
pub trait Field: ComplexField<RealField = f64> + Scalar<Base = Self> + Copy + Send + Sync {
    fn to_c64(self) -> Complex64;
    fn from_c64(z: Complex64) -> Self;
}

impl Field for f64 {
    fn to_c64(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn from_c64(z: Complex64) -> Self {
        z.re
    }
}

impl Field for Complex64 {
    fn to_c64(self) -> Complex64 {
        self
    }
    fn from_c64(z: Complex64) -> Self {
        z
    }
}

pub fn max_abs<T: Field>(v: &[T]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.modulus()))
}

pub fn solve<T: Field>(a: &DMatrix<T>, b: &[T]) -> Option<Vec<T>> {
    let x = a.clone().lu().solve(&DVector::from_column_slice(b))?;
    let out: Vec<T> = x.iter().copied().collect();
    out.iter().all(|v| v.modulus().is_finite()).then_some(out)
}

/// (smallest, largest) singular values.
pub fn sv_extremes<T: Field>(a: &DMatrix<T>) -> (f64, f64) {
    if a.is_empty() {
        return (1.0, 1.0);
    }
    let sv = a.clone().singular_values();
    (sv.min(), sv.max())
}

/// Phase and log-modulus of the determinant via LU.
pub fn log_det<T: Field>(a: &DMatrix<T>) -> (Complex64, f64) {
    if a.is_empty() {
        return (Complex64::new(1.0, 0.0), 0.0);
    }
    let lu = a.clone().lu();
    let mut phase = Complex64::new(lu.p().determinant::<f64>(), 0.0);
    let mut logabs = 0.0;
    for d in lu.u().diagonal().iter() {
        let z = d.to_c64();
        let m = z.norm();
        if m == 0.0 {
            return (Complex64::new(0.0, 0.0), f64::NEG_INFINITY);
        }
        logabs += m.ln();
        phase *= z / m;
    }
    (phase, logabs)
}

/// Adjugate through the SVD, finite at singular matrices.
pub fn adjugate(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let s = svd.singular_values;
    let sign = u.determinant() * vt.determinant();
    let prods = DVector::from_fn(n, |i, _| {
        (0..n).filter(|&k| k != i).map(|k| s[k]).product::<f64>()
    });
    // adj(A) = det(U) det(V) V diag(prod_{k != i} s_k) Uᵀ
    vt.transpose() * DMatrix::from_diagonal(&prods) * u.transpose() * sign
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logdet_identity() {
        let (ph, la) = log_det(&DMatrix::<f64>::identity(3, 3));
        assert_eq!(la, 0.0);
        assert_eq!(ph, Complex64::new(1.0, 0.0));
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 3.0, 0.0]);
        let (ph, la) = log_det(&m);
        assert!((ph.re + 1.0).abs() < 1e-15 && (la - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn adjugate_matches_inverse() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, -1.0, 3.0, 0.2, 0.3, 0.1, 1.5]);
        let adj = adjugate(&m);
        let want = m.clone().try_inverse().unwrap() * m.determinant();
        assert!((adj - want).amax() < 1e-12);
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let adj = adjugate(&sing);
        let want = DMatrix::from_row_slice(2, 2, &[4.0, -2.0, -2.0, 1.0]);
        assert!((adj - want).amax() < 1e-12);
    }
}
