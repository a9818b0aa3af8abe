//! Cyclic Jacobi eigensolver for small dense symmetric matrices.

use crate::error::{DireError, Result};
use crate::matrix::Matrix;

const MAX_SWEEPS: usize = 100;
const REL_TOL: f64 = 1e-12;

/// Eigenvalues (descending) and matching eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

fn symmetrized(s: &Matrix) -> Result<Matrix> {
    if s.rows() != s.cols() {
        return Err(DireError::dim(format!(
            "eigensolver needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    let n = s.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, 0.5 * (s.get(i, j) + s.get(j, i)));
        }
    }
    Ok(out)
}

fn jacobi(s: &Matrix, want_vectors: bool) -> Result<SymmetricEigen> {
    let sym = symmetrized(s)?;
    if !sym.is_finite() {
        return Err(DireError::Numerical("eigensolver input is not finite".into()));
    }
    let n = sym.rows();
    let scale = sym.frobenius_norm();
    let mut a = sym.into_vec();
    let mut v = if want_vectors {
        Matrix::identity(n).into_vec()
    } else {
        Vec::new()
    };

    let mut converged = off_diagonal_norm(&a, n) <= REL_TOL * scale;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(DireError::Numerical(format!(
                "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                // A <- A J
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                // A <- Jᵀ A
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                if want_vectors {
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - sn * vkq;
                        v[k * n + q] = sn * vkp + c * vkq;
                    }
                }
            }
        }
        converged = off_diagonal_norm(&a, n) <= REL_TOL * scale;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = if want_vectors {
        let mut q = Matrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            for k in 0..n {
                q.set(k, dst, v[k * n + src]);
            }
        }
        q
    } else {
        Matrix::zeros(0, 0)
    };
    Ok(SymmetricEigen { values, vectors })
}

/// All eigenvalues of `(S + Sᵀ)/2`, in descending order.
pub fn sym_eigenvalues(s: &Matrix) -> Result<Vec<f64>> {
    Ok(jacobi(s, false)?.values)
}

pub fn sym_eigen(s: &Matrix) -> Result<SymmetricEigen> {
    jacobi(s, true)
}
