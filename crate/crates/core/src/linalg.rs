//! Dense linear-algebra helpers for small covariance matrices: symmetrisation
//! and a positive-semidefinite-tolerant lower Cholesky factor with an
//! escalating jitter ladder.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Replace `m` with `(m + m')/2` in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Lower Cholesky factor of a symmetric positive semidefinite matrix.
///
/// Zero (or numerically zero) pivots are allowed: the corresponding column of
/// the factor is set to zero, so exactly-degenerate directions sample as
/// deterministic. Returns `None` when the matrix is materially indefinite.
fn semidefinite_cholesky(a: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > tol {
            let s = d.sqrt();
            l[(j, j)] = s;
            for i in (j + 1)..n {
                let mut r = a[(i, j)];
                for k in 0..j {
                    r -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = r / s;
            }
        } else if d >= -tol {
            // Degenerate pivot: PSD requires the remaining column to vanish too.
            for i in (j + 1)..n {
                let mut r = a[(i, j)];
                for k in 0..j {
                    r -= l[(i, k)] * l[(j, k)];
                }
                if r.abs() > 1e3 * tol.max(1e-300).sqrt() {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

/// Lower factor `L` with `L L' ≈ V`, adding diagonal jitter from 1e-10
/// escalating by factors of 10 up to 1e-6 if the plain factorisation fails.
pub fn robust_lower_factor(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.nrows() != v.ncols() {
        return Err(Error::invalid("covariance matrix must be square"));
    }
    let scale = v.diagonal().iter().fold(1.0f64, |m, d| m.max(d.abs()));
    let tol = 1e-12 * scale;
    if let Some(l) = semidefinite_cholesky(v, tol) {
        return Ok(l);
    }
    let mut jitter = 1e-10;
    while jitter <= 1e-6 {
        let mut vj = v.clone();
        for i in 0..v.nrows() {
            vj[(i, i)] += jitter;
        }
        if let Some(l) = semidefinite_cholesky(&vj, tol) {
            return Ok(l);
        }
        jitter *= 10.0;
    }
    Err(Error::numerical(format!(
        "covariance factorisation failed after jitter escalation to 1e-6 (diag scale {scale:.3e})"
    )))
}

/// Solve `V x = b` through the robust lower factor (forward/back substitution).
pub fn robust_solve(v: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let l = robust_lower_factor(v)?;
    let n = l.nrows();
    // Forward: L y = b. Degenerate pivots map to zero components.
    let mut y = DVector::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = if l[(i, i)] > 0.0 { s / l[(i, i)] } else { 0.0 };
    }
    // Back: L' x = y.
    let mut x = DVector::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = if l[(i, i)] > 0.0 { s / l[(i, i)] } else { 0.0 };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn factor_diagonal_is_exact_sqrt() {
        let v = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0, 0.25]));
        let l = robust_lower_factor(&v).unwrap();
        assert_abs_diff_eq!(l[(0, 0)], 2.0, epsilon = 0.0);
        assert_abs_diff_eq!(l[(1, 1)], 3.0, epsilon = 0.0);
        assert_abs_diff_eq!(l[(2, 2)], 0.5, epsilon = 0.0);
        assert_eq!(l[(1, 0)], 0.0);
    }

    #[test]
    fn factor_handles_zero_rows() {
        // Covariance with an exactly-deterministic first component.
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 11.6]);
        let l = robust_lower_factor(&v).unwrap();
        assert_eq!(l[(0, 0)], 0.0);
        assert_abs_diff_eq!(l[(1, 1)], 11.6f64.sqrt(), epsilon = 0.0);
    }

    #[test]
    fn factor_reconstructs_spd() {
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let l = robust_lower_factor(&v).unwrap();
        let r = &l * l.transpose();
        for (a, b) in r.iter().zip(v.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn slightly_indefinite_recovers_with_jitter() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 1.0 + 1e-9, 1.0 + 1e-9, 1.0]);
        assert!(robust_lower_factor(&v).is_ok());
    }

    #[test]
    fn materially_indefinite_fails() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(robust_lower_factor(&v).is_err());
    }

    #[test]
    fn solve_matches_direct() {
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let x = robust_solve(&v, &b).unwrap();
        let r = &v * &x;
        assert_abs_diff_eq!(r[0], b[0], epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], b[1], epsilon = 1e-12);
    }
}
