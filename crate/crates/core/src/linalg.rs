//! Small dense helpers shared by the closed-form solvers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Solves `a · x = b` for symmetric positive-definite `a` via Cholesky.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "system matrix {}x{} vs right-hand side {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    match a.clone().cholesky() {
        Some(chol) => {
            let x = chol.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                Ok(x)
            } else {
                Err(Error::Solve {
                    message: "solution contains non-finite values".into(),
                    condition: condition_estimate(a),
                })
            }
        }
        None => Err(Error::Solve {
            message: "matrix is not positive definite".into(),
            condition: condition_estimate(a),
        }),
    }
}

/// Ratio of extreme absolute eigenvalues of a symmetric matrix.
pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let eig = a.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `a + lambda * I` for square `a`.
pub fn add_diagonal(a: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut out = a.clone();
    for i in 0..out.nrows().min(out.ncols()) {
        out[(i, i)] += lambda;
    }
    out
}

/// Replaces `a` with `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Relative Frobenius error `‖a − b‖ / max(‖b‖, tiny)`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    diff / b.norm().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let x = spd_solve(&a, &b).unwrap();
        assert!((&a * &x - &b).norm() < 1e-14);
    }

    #[test]
    fn singular_system_reports_condition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        match spd_solve(&a, &b) {
            Err(Error::Solve { condition, .. }) => assert!(condition > 1e12),
            other => panic!("expected solve error, got {other:?}"),
        }
    }
}
