//! Independent verification of solver output: all residuals are recomputed
//! from the raw triplets, never from solver internals.

use ndarray_linalg::{Eigh, UPLO};
use serde::Serialize;

use super::{svec_to_mat, ConicProgram, ConicSolution, ConicStatus};

/// Recomputed optimality or infeasibility residuals.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub status: ConicStatus,
    /// `||Ax - b|| / (1 + ||b||)` for optimal points.
    pub primal_residual: f64,
    /// `||A'y + z - c|| / (1 + ||c||)` for optimal points.
    pub dual_residual: f64,
    /// Relative objective gap for optimal points.
    pub gap: f64,
    /// Most negative eigenvalue / coordinate across `x`'s cone sections.
    pub x_cone_violation: f64,
    /// Same for `z`.
    pub z_cone_violation: f64,
    /// `||A'y + z||/(1 + ||y||)` with `b'y = 1` for primal-infeasibility
    /// certificates; `||Ax||/(1 + ||x||)` with `c'x = -1` for dual ones.
    pub ray_residual: Option<f64>,
    /// `b'y` (primal ray) or `c'x` (dual ray) before normalization checks.
    pub ray_objective: Option<f64>,
}

impl CertificateReport {
    pub fn max_residual(&self) -> f64 {
        let base = match self.ray_residual {
            Some(r) => r,
            None => self.primal_residual.max(self.dual_residual).max(self.gap),
        };
        base.max(self.x_cone_violation).max(self.z_cone_violation)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst cone violation of a vector: negative part of nonnegative entries and
/// of PSD block eigenvalues (free section ignored).
fn cone_violation(prog: &ConicProgram, v: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in prog.n_free..prog.n_free + prog.n_nonneg {
        worst = worst.max(-v[i]);
    }
    for (k, &d) in prog.psd_dims.iter().enumerate() {
        let off = prog.block_offset(k);
        let m = svec_to_mat(d, &v[off..off + super::svec_len(d)]);
        if let Ok((vals, _)) = m.eigh(UPLO::Lower) {
            worst = worst.max(-vals[0]);
        } else {
            worst = f64::INFINITY;
        }
    }
    worst
}

/// Recompute every KKT or ray residual for a solution, independently of the
/// solver loop.
pub fn check_certificate(prog: &ConicProgram, sol: &ConicSolution) -> CertificateReport {
    match sol.status {
        ConicStatus::PrimalInfeasible => {
            let by = dot(&prog.rhs, &sol.y);
            let res: Vec<f64> =
                prog.apply_at(&sol.y).iter().zip(&sol.z).map(|(a, z)| a + z).collect();
            CertificateReport {
                status: sol.status,
                primal_residual: f64::NAN,
                dual_residual: f64::NAN,
                gap: f64::NAN,
                x_cone_violation: 0.0,
                z_cone_violation: cone_violation(prog, &sol.z),
                ray_residual: Some(norm2(&res) / (1.0 + norm2(&sol.y))),
                ray_objective: Some(by),
            }
        }
        ConicStatus::DualInfeasible => {
            let cx = dot(&prog.objective, &sol.x);
            let res = prog.apply_a(&sol.x);
            CertificateReport {
                status: sol.status,
                primal_residual: f64::NAN,
                dual_residual: f64::NAN,
                gap: f64::NAN,
                x_cone_violation: cone_violation(prog, &sol.x),
                z_cone_violation: 0.0,
                ray_residual: Some(norm2(&res) / (1.0 + norm2(&sol.x))),
                ray_objective: Some(cx),
            }
        }
        _ => {
            let pres: Vec<f64> =
                prog.apply_a(&sol.x).iter().zip(&prog.rhs).map(|(a, b)| a - b).collect();
            let dres: Vec<f64> = prog
                .apply_at(&sol.y)
                .iter()
                .zip(&sol.z)
                .zip(&prog.objective)
                .map(|((a, z), c)| a + z - c)
                .collect();
            let pobj = dot(&prog.objective, &sol.x);
            let dobj = dot(&prog.rhs, &sol.y);
            CertificateReport {
                status: sol.status,
                primal_residual: norm2(&pres) / (1.0 + norm2(&prog.rhs)),
                dual_residual: norm2(&dres) / (1.0 + norm2(&prog.objective)),
                gap: (pobj - dobj).abs() / (1.0 + pobj.abs().max(dobj.abs())),
                x_cone_violation: cone_violation(prog, &sol.x),
                z_cone_violation: cone_violation(prog, &sol.z),
                ray_residual: None,
                ray_objective: None,
            }
        }
    }
}
