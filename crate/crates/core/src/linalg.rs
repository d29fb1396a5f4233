//! Dense symmetric eigenvalues by cyclic Jacobi rotations.

use crate::error::{Error, Result};

pub const JACOBI_TOLERANCE: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric `n x n` row-major matrix, sorted descending.
///
/// Sweeps until the off-diagonal Frobenius norm falls below
/// `tol * max(1, ||A||_F)`.
pub fn symmetric_eigenvalues(a: &[f64], n: usize, tol: f64) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::Dimension(format!(
            "{} entries for a {n}x{n} matrix",
            a.len()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    for i in 0..n {
        for j in 0..i {
            let (x, y) = (a[i * n + j], a[j * n + i]);
            if (x - y).abs() > 1e-9 * (1.0 + x.abs().max(y.abs())) {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut m = a.to_vec();
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m[i * n + j] * m[i * n + j];
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&m) > tol * scale {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NonConvergence {
                iterations: sweeps,
                gradient: off(&m),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut values: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(values)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(a: &[f64], n: usize) -> Result<f64> {
    Ok(symmetric_eigenvalues(a, n, JACOBI_TOLERANCE)?
        .first()
        .copied()
        .unwrap_or(0.0))
}

/// Solve `A x = b` for a symmetric positive definite `A` (row-major) by
/// Cholesky factorization. Fails with [`Error::SingularInformation`] when a
/// pivot is not positive.
pub fn cholesky_solve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::Dimension(format!(
            "{} entries for a {n}x{n} matrix",
            a.len()
        )));
    }
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if d.is_nan() || d <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::SingularInformation);
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Ok(x)
}
