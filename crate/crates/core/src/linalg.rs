//! Small dense linear-algebra helpers shared by the estimators and bounds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

/// Inverse of a symmetric PSD matrix after Jacobi equilibration
/// `D^{-1/2} J D^{-1/2}`. Returns the inverse (if the equilibrated
/// condition number stays below `max_condition`) and that condition number.
pub(crate) fn equilibrated_inverse(j: &DMatrix<f64>, max_condition: f64) -> (Option<DMatrix<f64>>, f64) {
    let n = j.nrows();
    if n == 0 {
        return (Some(DMatrix::zeros(0, 0)), 1.0);
    }
    let diag = j.diagonal();
    if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return (None, f64::INFINITY);
    }
    let scale = diag.map(|d| 1.0 / d.sqrt());
    let mut je = j.clone();
    for r in 0..n {
        for c in 0..n {
            je[(r, c)] *= scale[r] * scale[c];
        }
    }
    je = (&je + je.transpose()) * 0.5;
    let eig = SymmetricEigen::new(je);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond <= max_condition) {
        return (None, cond);
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let v = &eig.eigenvectors;
    let mut inv = v * DMatrix::from_diagonal(&inv_vals) * v.transpose();
    for r in 0..n {
        for c in 0..n {
            inv[(r, c)] *= scale[r] * scale[c];
        }
    }
    (Some((&inv + inv.transpose()) * 0.5), cond)
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix, truncating
/// eigenvalues below `rtol · max|λ|`.
pub(crate) fn symmetric_pinv(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let inv_vals = eig
        .eigenvalues
        .map(|v| if v.abs() > rtol * max && v.abs() > 0.0 { 1.0 / v } else { 0.0 });
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&inv_vals) * v.transpose()
}

/// Least-squares solution of a real system via SVD, truncating tiny singular values.
pub(crate) fn real_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (smax * 1e-12).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).ok()
}

/// Complex least squares `argmin_x ‖A x − b‖`.
pub(crate) fn complex_lstsq(a: &DMatrix<Complex64>, b: &DVector<Complex64>) -> Option<DVector<Complex64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (smax * 1e-12).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).ok()
}

/// Numerical rank of a complex matrix with relative tolerance `rtol`.
pub(crate) fn complex_rank(a: &DMatrix<Complex64>, rtol: f64) -> usize {
    let sv = a.clone().singular_values();
    let smax = sv.max();
    sv.iter().filter(|s| **s > rtol * smax && **s > 0.0).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn equilibrated_inverse_handles_badly_scaled_matrices() {
        let j = DMatrix::from_row_slice(2, 2, &[4e20, 1e10, 1e10, 1.0]);
        let (inv, cond) = equilibrated_inverse(&j, 1e12);
        let inv = inv.unwrap();
        assert!(cond < 10.0);
        let id = &j * &inv;
        assert_relative_eq!(id[(0, 0)], 1.0, epsilon = 1e-10);
        assert_relative_eq!(id[(1, 1)], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn singular_matrix_is_flagged() {
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (inv, cond) = equilibrated_inverse(&j, 1e12);
        assert!(inv.is_none());
        assert!(cond > 1e12);
    }

    #[test]
    fn pinv_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let p = symmetric_pinv(&m, 1e-12);
        assert_relative_eq!(p[(0, 0)], 1.0);
        assert_eq!(p[(1, 1)], 0.0);
    }
}
