//! Dense Hermitian helpers shared by the real and complex backends.

use nalgebra::{Cholesky, ComplexField, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Scalar field of a selection backend: `f64` for the quadratic model, `Complex64` for
/// the Hermitian phase-retrieval surrogate. All scalarizations are real in both cases.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync {}

impl Scalar for f64 {}
impl Scalar for Complex64 {}

/// `(M + M^*) / 2`.
pub fn hermitian_part<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = T::from_real(0.5);
    (m + m.adjoint()) * half
}

pub fn trace_re<T: Scalar>(m: &DMatrix<T>) -> f64 {
    m.diagonal().iter().map(|v| v.real()).sum()
}

/// Sorted (ascending) eigenvalues of a Hermitian matrix.
pub fn eigenvalues<T: Scalar>(m: &DMatrix<T>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `(λ_min, λ_max)` of a Hermitian matrix.
pub fn eig_extremes<T: Scalar>(m: &DMatrix<T>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let ev = eigenvalues(m);
    (ev[0], ev[ev.len() - 1])
}

pub fn lambda_min<T: Scalar>(m: &DMatrix<T>) -> f64 {
    eig_extremes(m).0
}

pub fn cholesky<T: Scalar>(m: &DMatrix<T>, what: &'static str) -> Result<Cholesky<T, Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite(what))
}

pub fn logdet_from_chol<T: Scalar>(chol: &Cholesky<T, Dyn>) -> f64 {
    chol.l_dirty()
        .diagonal()
        .iter()
        .map(|d| 2.0 * d.real().ln())
        .sum()
}

/// `Tr(F^{-1})` from a Cholesky factor of `F`.
pub fn trace_inverse<T: Scalar>(chol: &Cholesky<T, Dyn>) -> f64 {
    trace_re(&chol.inverse())
}

pub fn logdet_spd<T: Scalar>(m: &DMatrix<T>, what: &'static str) -> Result<f64> {
    Ok(logdet_from_chol(&cholesky(m, what)?))
}

/// Relative Frobenius distance `‖a − b‖_F / max(‖b‖_F, tiny)`.
pub fn rel_frobenius<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}

/// `v v^*`.
pub fn outer<T: Scalar>(v: &DVector<T>) -> DMatrix<T> {
    v * v.adjoint()
}

/// Lift a real matrix into the complex field.
pub fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Symmetric positive-definite inverse via Cholesky.
pub fn spd_inverse<T: Scalar>(m: &DMatrix<T>, what: &'static str) -> Result<DMatrix<T>> {
    Ok(hermitian_part(&cholesky(m, what)?.inverse()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermitian_eigenvalues_are_real_and_sorted() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(2.0, 0.0),
            ],
        );
        let ev = eigenvalues(&m);
        assert!((ev[0] - 1.0).abs() < 1e-12);
        assert!((ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn logdet_and_trace_inverse_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5, 4.0]));
        let chol = cholesky(&m, "test").unwrap();
        assert!((logdet_from_chol(&chol) - 4.0f64.ln()).abs() < 1e-14);
        assert!((trace_inverse(&chol) - 2.75).abs() < 1e-14);
    }

    #[test]
    fn non_pd_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky(&m, "thing"),
            Err(Error::NotPositiveDefinite("thing"))
        ));
    }
}
