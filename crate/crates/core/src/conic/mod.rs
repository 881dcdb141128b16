//! Self-contained primal-dual interior-point solver for block-diagonal conic
//! programs in standard equality form:
//!
//! ```text
//!   minimize    c' x
//!   subject to  A x = b,   x in K = R^free x R+^nonneg x S+^{d1} x ... x S+^{dk}
//! ```
//!
//! PSD blocks live in scaled lower-triangle (svec) coordinates so that inner
//! products of cone vectors are plain dot products. The solver runs a
//! Nesterov-Todd scaled Mehrotra predictor-corrector on the homogeneous
//! self-dual embedding, which yields certificates of primal or dual
//! infeasibility instead of silent failure.

mod certificate;
mod kkt;
mod scaling;
mod solver;

pub use certificate::{check_certificate, CertificateReport};
pub use solver::solve;

use ndarray::Array2;
use serde::Serialize;

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Block-diagonal conic program in sparse triplet form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    pub n_free: usize,
    pub n_nonneg: usize,
    /// Matrix dimensions of the PSD blocks (svec length `d(d+1)/2` each).
    pub psd_dims: Vec<usize>,
    /// Constraint matrix entries `(row, col, value)`; duplicate entries add.
    pub a_triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    pub objective: Vec<f64>,
}

impl ConicProgram {
    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_free + self.n_nonneg + self.psd_dims.iter().map(|&d| svec_len(d)).sum::<usize>()
    }

    /// Barrier degree of the cone part.
    pub fn barrier_degree(&self) -> usize {
        self.n_nonneg + self.psd_dims.iter().sum::<usize>()
    }

    /// Column offset of PSD block `k`.
    pub fn block_offset(&self, k: usize) -> usize {
        self.n_free
            + self.n_nonneg
            + self.psd_dims[..k].iter().map(|&d| svec_len(d)).sum::<usize>()
    }

    /// Global column of svec entry `(i, j)` (with `i >= j`) of block `k`.
    pub fn svec_col(&self, block: usize, i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let d = self.psd_dims[block];
        debug_assert!(i < d);
        self.block_offset(block) + svec_index(d, i, j)
    }

    pub fn validate(&self) -> Result<(), String> {
        let (m, n) = (self.n_rows(), self.n_cols());
        if self.objective.len() != n {
            return Err(format!("objective length {} != {} columns", self.objective.len(), n));
        }
        for &(r, c, v) in &self.a_triplets {
            if r >= m || c >= n {
                return Err(format!("triplet ({r}, {c}) out of range ({m} x {n})"));
            }
            if !v.is_finite() {
                return Err(format!("non-finite coefficient at ({r}, {c})"));
            }
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err("non-finite right-hand side".into());
        }
        Ok(())
    }

    /// `A x` from the triplets.
    pub fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        for &(r, c, v) in &self.a_triplets {
            out[r] += v * x[c];
        }
        out
    }

    /// `A' y` from the triplets.
    pub fn apply_at(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols()];
        for &(r, c, v) in &self.a_triplets {
            out[c] += v * y[r];
        }
        out
    }
}

/// svec length of a `d x d` symmetric matrix.
pub fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Local svec index of entry `(i, j)`, `i >= j`, column-major lower triangle.
pub fn svec_index(d: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j && i < d);
    j * (2 * d - j + 1) / 2 + (i - j)
}

/// Dense symmetric matrix from svec coordinates.
pub fn svec_to_mat(d: usize, v: &[f64]) -> Array2<f64> {
    let mut m = Array2::zeros((d, d));
    let mut idx = 0;
    for j in 0..d {
        for i in j..d {
            let val = if i == j { v[idx] } else { v[idx] / SQRT2 };
            m[[i, j]] = val;
            m[[j, i]] = val;
            idx += 1;
        }
    }
    m
}

/// svec coordinates of a dense symmetric matrix.
pub fn mat_to_svec(m: &Array2<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut v = Vec::with_capacity(svec_len(d));
    for j in 0..d {
        for i in j..d {
            v.push(if i == j { m[[i, j]] } else { SQRT2 * 0.5 * (m[[i, j]] + m[[j, i]]) });
        }
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConicStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIter,
    NumericalFailure,
}

/// Relative residuals of the returned point, recomputed on the original
/// (unscaled) data.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    /// Residual of the infeasibility certificate, when one is returned.
    pub certificate_residual: Option<f64>,
    /// Best dual objective seen at an iterate whose dual residual was below
    /// 1e-8: a certified lower bound on the optimum even when the primal
    /// side stalls short of full accuracy.
    pub dual_bound: Option<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 200, verbose: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_roundtrip() {
        let d = 4;
        let v: Vec<f64> = (0..svec_len(d)).map(|i| (i as f64) * 0.37 - 1.0).collect();
        let m = svec_to_mat(d, &v);
        let back = mat_to_svec(&m);
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
        // svec inner product equals the matrix inner product
        let w: Vec<f64> = (0..svec_len(d)).map(|i| 0.5 - (i as f64) * 0.11).collect();
        let mw = svec_to_mat(d, &w);
        let dot: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let frob: f64 = m.iter().zip(mw.iter()).map(|(a, b)| a * b).sum();
        assert!((dot - frob).abs() < 1e-12);
    }

    #[test]
    fn svec_indexing_is_column_major_lower() {
        assert_eq!(svec_index(3, 0, 0), 0);
        assert_eq!(svec_index(3, 1, 0), 1);
        assert_eq!(svec_index(3, 2, 0), 2);
        assert_eq!(svec_index(3, 1, 1), 3);
        assert_eq!(svec_index(3, 2, 1), 4);
        assert_eq!(svec_index(3, 2, 2), 5);
    }
}
