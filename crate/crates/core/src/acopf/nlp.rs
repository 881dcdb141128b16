//! Local solver for the smooth model: an augmented-Lagrangian outer loop on
//! the equality constraints with inequalities handled through slacks and a
//! log barrier, Newton with line search inside, and an active-set Newton
//! polish at the end.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use ndarray_linalg::{Cholesky, Factorize, Solve, SolveC, UPLO};

use crate::network::{evaluate_candidate, Candidate};

use super::model::AcopfModel;

#[derive(Debug, Clone, Copy)]
pub struct NlpOptions {
    /// Feasibility a candidate must reach to count as a solution.
    pub feas_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Complementarity floor for declaring an activation binary.
    pub binary_tol: f64,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self { feas_tol: 1e-6, max_outer: 40, max_inner: 60, binary_tol: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum NlpStatus {
    LocalOptimal,
    InfeasibleAtTolerance,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct NlpResult {
    pub candidate: Candidate,
    pub status: NlpStatus,
    pub violation: f64,
    pub objective: f64,
}

impl NlpResult {
    pub fn upper_bound(&self) -> f64 {
        if self.status == NlpStatus::LocalOptimal {
            self.objective
        } else {
            f64::INFINITY
        }
    }
}

/// Minimize the model from `start`, tracking the best feasible candidate seen
/// (including the start itself, so a feasible warm start can only improve).
pub fn solve_nlp(model: &AcopfModel, start: Array1<f64>, opts: &NlpOptions) -> NlpResult {
    std::thread::scope(|scope| {
        std::thread::Builder::new()
            .name("acopf-nlp".into())
            .stack_size(64 << 20)
            .spawn_scoped(scope, || solve_nlp_inner(model, start, opts))
            .expect("spawn nlp thread")
            .join()
            .expect("nlp thread panicked")
    })
}

struct Incumbent {
    best: Option<NlpResult>,
}

impl Incumbent {
    fn offer(&mut self, model: &AcopfModel, cand: Candidate, feas_tol: f64) {
        let report = match evaluate_candidate(&model.problem, &cand, feas_tol) {
            Ok(r) => r,
            Err(_) => return,
        };
        let entry = NlpResult {
            objective: report.objective,
            violation: report.max_violation(),
            status: if report.feasible {
                NlpStatus::LocalOptimal
            } else {
                NlpStatus::InfeasibleAtTolerance
            },
            candidate: cand,
        };
        let better = match &self.best {
            None => true,
            Some(cur) => match (cur.status, entry.status) {
                (NlpStatus::LocalOptimal, NlpStatus::LocalOptimal) => {
                    entry.objective < cur.objective
                }
                (NlpStatus::LocalOptimal, _) => false,
                (_, NlpStatus::LocalOptimal) => true,
                _ => entry.violation < cur.violation,
            },
        };
        if better {
            self.best = Some(entry);
        }
    }
}

fn solve_nlp_inner(model: &AcopfModel, start: Array1<f64>, opts: &NlpOptions) -> NlpResult {
    let nx = model.n_vars;
    let m_eq = model.n_eq();
    let m_in = model.n_ineq();
    let obj_scale = model
        .problem
        .net
        .generators
        .values()
        .map(|g| g.cost.abs())
        .fold(1.0f64, f64::max);
    let w_obj = 1.0 / obj_scale;

    let mut incumbent = Incumbent { best: None };
    incumbent.offer(model, model.candidate(&start), opts.feas_tol);

    let mut x = start;
    // Slacks start at the constraint values pushed into the interior.
    let inj = model.injections(&x);
    let c0 = model.ineq_values(&x, &inj);
    let mut slack: Array1<f64> = c0.mapv(|v| v.max(1e-2));
    let mut y = Array1::<f64>::zeros(m_eq + m_in);
    let mut rho = 10.0f64;
    let mut mu = 1e-1f64;
    let mut feas_target = 1e-1f64;

    for _outer in 0..opts.max_outer { let _outer = _outer;
        // Inner Newton on the barrier-augmented Lagrangian.
        let mut inner_converged = false;
        let mut inner_used = 0;
        let mut last_gnorm = f64::NAN;
        let mut last_alpha = f64::NAN;
        for _inner in 0..opts.max_inner {
            inner_used = _inner + 1;
            let inj = model.injections(&x);
            let h = model.eq_values(&x, &inj);
            let c = model.ineq_values(&x, &inj);
            let r_in = &c - &slack;
            let jac_eq = model.eq_jacobian(&x);
            let jac_in = model.ineq_jacobian(&x);

            // Multiplier estimates for the augmented terms.
            let lam_eq = &y.slice(s![..m_eq]) + &h.mapv(|v| v * rho);
            let lam_in = &y.slice(s![m_eq..]) + &r_in.mapv(|v| v * rho);

            let mut grad_x = model.objective_grad(&x).mapv(|v| v * w_obj);
            grad_x = grad_x + jac_eq.t().dot(&lam_eq) + jac_in.t().dot(&lam_in);
            let grad_s: Array1<f64> = (0..m_in)
                .map(|i| -lam_in[i] - mu / slack[i])
                .collect();

            let gnorm = grad_x
                .iter()
                .chain(grad_s.iter())
                .fold(0.0f64, |a, v| a.max(v.abs()));
            last_gnorm = gnorm;
            if gnorm <= (mu * 10.0).max(1e-10) {
                inner_converged = true;
                break;
            }

            // Hessian blocks.
            let mut h_xx = model.lagrangian_hessian(&x, w_obj, &lam_eq, &lam_in);
            let jtj = jac_eq.t().dot(&jac_eq) + jac_in.t().dot(&jac_in);
            h_xx = h_xx + jtj.mapv(|v| v * rho);
            // Inertia guard: lift the diagonal a little.
            for i in 0..nx {
                h_xx[[i, i]] += 1e-8 * (1.0 + h_xx[[i, i]].abs());
            }
            let h_ss: Array1<f64> =
                (0..m_in).map(|i| rho + mu / (slack[i] * slack[i])).collect();
            // Eliminate the slack block: H_xs = -rho * Jc', H_ss diagonal.
            //   (H_xx - rho^2 Jc' D^{-1} Jc) dx = -(grad_x - rho Jc' D^{-1} grad_s)
            let dinv: Array1<f64> = h_ss.mapv(|v| 1.0 / v);
            let jc_scaled = {
                let mut j = jac_in.clone();
                for (mut row, &w) in j.rows_mut().into_iter().zip(dinv.iter()) {
                    row *= w;
                }
                j
            };
            let h_red = &h_xx - &jac_in.t().dot(&jc_scaled).mapv(|v| v * rho * rho);
            let rhs = -(&grad_x + &jac_in.t().dot(&(&dinv * &grad_s)).mapv(|v| v * rho));
            // Inertia correction: damp until the reduced Hessian is positive
            // definite so the step is a descent direction.
            let scale_diag = (0..nx).map(|i| h_red[[i, i]].abs()).fold(1.0f64, f64::max);
            let mut damp = 0.0f64;
            let mut dx_opt = None;
            for _try in 0..30 {
                let mut mat = h_red.clone();
                if damp > 0.0 {
                    for i in 0..nx {
                        mat[[i, i]] += damp;
                    }
                }
                if let Ok(chol) = mat.cholesky(UPLO::Lower) {
                    if let Ok(sol) = chol.solvec(&rhs) {
                        dx_opt = Some(sol);
                        break;
                    }
                }
                damp = if damp == 0.0 { 1e-8 * scale_diag } else { damp * 10.0 };
            }
            let Some(dx) = dx_opt else { break };
            let ds: Array1<f64> = (0..m_in)
                .map(|i| {
                    let jdx = jac_in.row(i).dot(&dx);
                    dinv[i] * (-grad_s[i] + rho * jdx)
                })
                .collect();

            // Fraction to boundary on the slacks, then Armijo on the merit.
            let mut alpha_max: f64 = 1.0;
            for i in 0..m_in {
                if ds[i] < 0.0 {
                    alpha_max = alpha_max.min(-0.995 * slack[i] / ds[i]);
                }
            }
            let merit = |xv: &Array1<f64>, sv: &Array1<f64>| -> f64 {
                let inj = model.injections(xv);
                let h = model.eq_values(xv, &inj);
                let c = model.ineq_values(xv, &inj);
                let r = &c - sv;
                let mut m = w_obj * model.objective(xv, &inj);
                for i in 0..m_eq {
                    m += y[i] * h[i] + 0.5 * rho * h[i] * h[i];
                }
                for i in 0..m_in {
                    m += y[m_eq + i] * r[i] + 0.5 * rho * r[i] * r[i];
                    m -= mu * sv[i].ln();
                }
                m
            };
            let m0 = merit(&x, &slack);
            let deriv = grad_x.dot(&dx) + grad_s.dot(&ds);
            let mut alpha = alpha_max.min(1.0);
            let mut accepted = false;
            for _ in 0..40 {
                let xt = &x + &dx.mapv(|v| v * alpha);
                let st = &slack + &ds.mapv(|v| v * alpha);
                if st.iter().all(|&v| v > 0.0) {
                    let mt = merit(&xt, &st);
                    if mt <= m0 + 1e-4 * alpha * deriv || mt < m0 {
                        x = xt;
                        slack = st;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            last_alpha = if accepted { alpha } else { -1.0 };
            if !accepted {
                break;
            }
        }

        let inj = model.injections(&x);
        let h = model.eq_values(&x, &inj);
        let c = model.ineq_values(&x, &inj);
        let r_in = &c - &slack;
        let viol = h
            .iter()
            .chain(r_in.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        log::debug!(
            "outer {_outer}: viol {viol:9.2e} rho {rho:8.1e} mu {mu:8.1e} inner {inner_used} gnorm {last_gnorm:9.2e} alpha {last_alpha:6.3} conv {inner_converged} obj {:.4}",
            model.objective(&x, &inj)
        );

        incumbent.offer(model, model.candidate(&x), opts.feas_tol);

        if viol <= feas_target {
            for i in 0..m_eq {
                y[i] += rho * h[i];
            }
            for i in 0..m_in {
                y[m_eq + i] += rho * r_in[i];
            }
            feas_target = (feas_target * 0.2).max(1e-12);
        } else {
            rho = (rho * 10.0).min(1e10);
        }
        mu = (mu * 0.2).max(1e-11);

        if viol <= 1e-9 && mu <= 1e-9 && inner_converged {
            break;
        }
    }

    // Active-set polish: equality-constrained Newton on the KKT system of
    // the original problem with the near-active inequalities pinned.
    let polished = polish(model, &x, &slack, &y, w_obj, opts);
    if let Some(px) = polished {
        incumbent.offer(model, model.candidate(&px), opts.feas_tol);
    }

    incumbent.best.take().unwrap_or_else(|| {
        let cand = model.candidate(&x);
        let report = evaluate_candidate(&model.problem, &cand, opts.feas_tol).ok();
        NlpResult {
            objective: report.as_ref().map_or(f64::INFINITY, |r| r.objective),
            violation: report.as_ref().map_or(f64::INFINITY, |r| r.max_violation()),
            status: NlpStatus::InfeasibleAtTolerance,
            candidate: cand,
        }
    })
}

/// Newton iterations on the KKT conditions of the equality-constrained
/// subproblem defined by the active inequalities. Returns an improved point
/// or nothing if the active-set guess does not converge.
fn polish(
    model: &AcopfModel,
    x0: &Array1<f64>,
    slack: &Array1<f64>,
    y: &Array1<f64>,
    w_obj: f64,
    _opts: &NlpOptions,
) -> Option<Array1<f64>> {
    let nx = model.n_vars;
    let m_eq = model.n_eq();
    let m_in = model.n_ineq();
    let active: Vec<usize> = (0..m_in).filter(|&i| slack[i] < 1e-5).collect();
    let na = active.len();
    let mut x = x0.clone();
    let mut mult = Array1::<f64>::zeros(m_eq + na);
    for i in 0..m_eq {
        mult[i] = y[i];
    }
    for (k, &i) in active.iter().enumerate() {
        mult[m_eq + k] = y[m_eq + i];
    }

    let mut last_norm = f64::INFINITY;
    for _ in 0..30 {
        let inj = model.injections(&x);
        let h = model.eq_values(&x, &inj);
        let c = model.ineq_values(&x, &inj);
        let jac_eq = model.eq_jacobian(&x);
        let jac_in = model.ineq_jacobian(&x);

        let lam_eq = mult.slice(s![..m_eq]).to_owned();
        let mut lam_in = Array1::<f64>::zeros(m_in);
        for (k, &i) in active.iter().enumerate() {
            lam_in[i] = mult[m_eq + k];
        }
        let mut grad = model.objective_grad(&x).mapv(|v| v * w_obj);
        grad = grad + jac_eq.t().dot(&lam_eq) + jac_in.t().dot(&lam_in);

        let mut res = grad.to_vec();
        res.extend(h.iter().copied());
        for &i in &active {
            res.push(c[i]);
        }
        let norm = res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if norm <= 1e-11 {
            return Some(x);
        }
        if norm > last_norm * 10.0 {
            return None;
        }
        last_norm = norm;

        let hess = model.lagrangian_hessian(&x, w_obj, &lam_eq, &lam_in);
        let dim = nx + m_eq + na;
        let mut kkt = Array2::<f64>::zeros((dim, dim));
        kkt.slice_mut(s![..nx, ..nx]).assign(&hess);
        for i in 0..nx {
            kkt[[i, i]] += 1e-10;
        }
        kkt.slice_mut(s![..nx, nx..nx + m_eq]).assign(&jac_eq.t());
        kkt.slice_mut(s![nx..nx + m_eq, ..nx]).assign(&jac_eq);
        for (k, &i) in active.iter().enumerate() {
            let row = jac_in.row(i);
            for j in 0..nx {
                kkt[[j, nx + m_eq + k]] = row[j];
                kkt[[nx + m_eq + k, j]] = row[j];
            }
        }
        let rhs = Array1::from_vec(res.iter().map(|v| -v).collect());
        let fact = kkt.factorize().ok()?;
        let step = fact.solve(&rhs).ok()?;
        let (dx, dmult) = (step.slice(s![..nx]).to_owned(), step.slice(s![nx..]).to_owned());
        x = &x + &dx;
        mult = &mult + &dmult;
    }
    let inj = model.injections(&x);
    let h = model.eq_values(&x, &inj);
    let hmax = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if hmax < 1e-8 {
        Some(x)
    } else {
        None
    }
}

#[allow(unused)]
fn stack(a: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
    concatenate![Axis(0), a.view(), b.view()]
}
