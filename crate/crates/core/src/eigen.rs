//! Dense symmetric eigendecomposition by cyclic Jacobi rotations, plus the
//! graph Fourier transform built on it.

use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const DEFAULT_SIZE_CAP: usize = 2048;
const SYMMETRY_TOL: f64 = 1e-10;
const OFF_DIAGONAL_TOL: f64 = 1e-11;

/// Ascending eigenvalues with matching orthonormal eigenvector columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        self.eigenvectors.col(k)
    }

    /// `U^T x`.
    pub fn fourier_transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.eigenvalues.len();
        if x.len() != n {
            return Err(Error::dims(n, x.len()));
        }
        let u = &self.eigenvectors;
        let mut out = vec![0.0; n];
        for (i, &xi) in x.iter().enumerate() {
            for (k, o) in out.iter_mut().enumerate() {
                *o += u[(i, k)] * xi;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JacobiSolver {
    pub size_cap: usize,
}

impl Default for JacobiSolver {
    fn default() -> Self {
        Self {
            size_cap: DEFAULT_SIZE_CAP,
        }
    }
}

impl JacobiSolver {
    pub fn solve(&self, matrix: &Matrix) -> Result<EigenDecomposition> {
        let n = matrix.rows();
        if matrix.cols() != n {
            return Err(Error::dims(format!("square matrix with {n} columns"), matrix.cols()));
        }
        if n > self.size_cap {
            return Err(Error::MatrixTooLarge {
                n,
                cap: self.size_cap,
            });
        }
        let mut asym = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }

        let mut a = matrix.clone();
        let mut v = Matrix::identity(n);
        let threshold = OFF_DIAGONAL_TOL * a.frobenius();
        let max_sweeps = 100 * n.max(1);
        let mut converged = false;
        for _ in 0..max_sweeps {
            if max_off_diagonal(&a) <= threshold {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    rotate(&mut a, &mut v, p, q);
                }
            }
        }
        if !converged && max_off_diagonal(&a) > threshold {
            return Err(Error::NoConvergence(max_sweeps));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| a[(x, x)].total_cmp(&a[(y, y)]));
        let eigenvalues = order.iter().map(|&k| a[(k, k)]).collect();
        let mut eigenvectors = Matrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            for i in 0..n {
                eigenvectors[(i, dst)] = v[(i, src)];
            }
        }
        Ok(EigenDecomposition {
            eigenvalues,
            eigenvectors,
        })
    }
}

fn max_off_diagonal(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

/// One Jacobi rotation zeroing `a[p][q]`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.rows();
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Eigendecomposition with the default size cap.
pub fn eigendecompose_symmetric(matrix: &Matrix) -> Result<EigenDecomposition> {
    JacobiSolver::default().solve(matrix)
}

/// Maps eigenvectors of `L_sym` to eigenvectors of `L_rw` via `D^{-1/2}`.
/// The eigenvalues are shared; columns are not renormalized.
pub fn rw_eigenvectors_from_sym(g: &Graph, sym: &EigenDecomposition) -> Result<Matrix> {
    let n = g.node_count();
    if sym.eigenvalues.len() != n {
        return Err(Error::dims(n, sym.eigenvalues.len()));
    }
    if let Some(i) = (0..n).find(|&i| g.degree(i) == 0) {
        return Err(Error::IsolatedNode(i));
    }
    let mut out = sym.eigenvectors.clone();
    for i in 0..n {
        let scale = 1.0 / (g.degree(i) as f64).sqrt();
        for v in out.row_mut(i) {
            *v *= scale;
        }
    }
    Ok(out)
}
