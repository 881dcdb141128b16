//! Homogeneous self-dual interior-point loop: NT scaling, Mehrotra
//! predictor-corrector, and certificate extraction.

use super::kkt::{factor, KktPrep};
use super::scaling::{ConeLayout, NtScaling};
use super::{ConicProgram, ConicSolution, ConicStatus, Residuals, SolverOptions};

struct Equilibration {
    s_b: f64,
    s_c: f64,
    row: Vec<f64>,
}

impl Equilibration {
    fn compute(prog: &ConicProgram) -> (ConicProgram, Self) {
        let m = prog.n_rows();
        let mut row = vec![1.0f64; m];
        for &(r, _, v) in &prog.a_triplets {
            row[r] = row[r].max(v.abs());
        }
        let s_c = prog.objective.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
        let mut scaled = prog.clone();
        for t in &mut scaled.a_triplets {
            t.2 /= row[t.0];
        }
        let s_b = prog
            .rhs
            .iter()
            .zip(&row)
            .fold(0.0f64, |a, (&b, &r)| a.max((b / r).abs()))
            .max(1.0);
        for (b, r) in scaled.rhs.iter_mut().zip(&row) {
            *b /= r * s_b;
        }
        for c in &mut scaled.objective {
            *c /= s_c;
        }
        (scaled, Self { s_b, s_c, row })
    }

    fn unscale_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v * self.s_b).collect()
    }

    fn unscale_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.row).map(|(v, r)| v * self.s_c / r).collect()
    }

    fn unscale_z(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|v| v * self.s_c).collect()
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Solve a conic program. Never returns a silently wrong answer: anything the
/// loop cannot certify comes back as `MaxIter` or `NumericalFailure`.
pub fn solve(prog: &ConicProgram, opts: &SolverOptions) -> ConicSolution {
    // OpenBLAS's threaded factorizations recurse deeply; callers (tests in
    // particular) may sit on small stacks, so the loop runs on its own.
    std::thread::scope(|scope| {
        std::thread::Builder::new()
            .name("conic-ipm".into())
            .stack_size(64 << 20)
            .spawn_scoped(scope, || solve_inner(prog, opts))
            .expect("spawn solver thread")
            .join()
            .expect("solver thread panicked")
    })
}

fn solve_inner(prog: &ConicProgram, opts: &SolverOptions) -> ConicSolution {
    if let Err(msg) = prog.validate() {
        log::error!("conic program rejected: {msg}");
        return failure_solution(prog, ConicStatus::NumericalFailure);
    }
    let (scaled, eq) = Equilibration::compute(prog);
    let layout = ConeLayout::of(&scaled);
    let prep = KktPrep::new(&scaled, &layout);
    let m = scaled.n_rows();
    let n = scaled.n_cols();
    let nu = scaled.barrier_degree() as f64 + 1.0;

    // Split objective/constraint application into cone and free sections is
    // implicit: free coordinates are 0..n_free and z stays 0 there.
    let mut x = layout.identity();
    let mut y = vec![0.0; m];
    let mut z = layout.identity();
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let b = &scaled.rhs;
    let c = &scaled.objective;
    let norm_b_orig = 1.0 + norm2(&prog.rhs);
    let norm_c_orig = 1.0 + norm2(&prog.objective);

    let mut best: Option<(f64, ConicSolution)> = None;
    let mut dual_bound: Option<f64> = None;
    let mut tiny_steps = 0usize;

    for iter in 0..=opts.max_iter {
        // Residuals of the embedding.
        let ax = scaled.apply_a(&x);
        let aty = scaled.apply_at(&y);
        let r_p: Vec<f64> = ax.iter().zip(b).map(|(axi, bi)| axi - bi * tau).collect();
        let r_d: Vec<f64> =
            c.iter().zip(&aty).zip(&z).map(|((ci, ai), zi)| ci * tau - ai - zi).collect();
        let r_g = dot(b, &y) - dot(c, &x) - kappa;

        // Original-space convergence metrics.
        let x_hat: Vec<f64> = eq.unscale_x(&x).iter().map(|v| v / tau).collect();
        let y_hat: Vec<f64> = eq.unscale_y(&y).iter().map(|v| v / tau).collect();
        let z_hat: Vec<f64> = eq.unscale_z(&z).iter().map(|v| v / tau).collect();
        let pres_vec: Vec<f64> =
            prog.apply_a(&x_hat).iter().zip(&prog.rhs).map(|(a, b)| a - b).collect();
        let dres_vec: Vec<f64> = prog
            .apply_at(&y_hat)
            .iter()
            .zip(&z_hat)
            .zip(&prog.objective)
            .map(|((a, z), c)| a + z - c)
            .collect();
        let pobj = dot(&prog.objective, &x_hat);
        let dobj = dot(&prog.rhs, &y_hat);
        let pres = norm2(&pres_vec) / norm_b_orig;
        let dres = norm2(&dres_vec) / norm_c_orig;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs().max(dobj.abs()));
        if opts.verbose {
            log::debug!(
                "iter {iter:3}  pres {pres:9.2e}  dres {dres:9.2e}  gap {gap:9.2e}  tau {tau:8.2e}  kappa {kappa:8.2e}"
            );
        }
        if dres <= 1e-8 && dual_bound.map_or(true, |b| dobj > b) {
            dual_bound = Some(dobj);
        }
        if opts.verbose {
            log::trace!("iter {iter} dres {dres:9.2e} dobj {dobj:.6} tracked {dual_bound:?}");
        }
        if pres <= opts.tol && dres <= opts.tol && gap <= opts.tol {
            return ConicSolution {
                status: ConicStatus::Optimal,
                x: x_hat,
                y: y_hat,
                z: z_hat,
                primal_objective: pobj,
                dual_objective: dobj,
                residuals: Residuals { primal: pres, dual: dres, gap },
                certificate_residual: None,
                dual_bound: dual_bound.or(Some(dobj)),
                iterations: iter,
            };
        }
        let score = pres.max(dres).max(gap);
        if best.as_ref().map_or(true, |(s, _)| score < *s) {
            best = Some((
                score,
                ConicSolution {
                    status: ConicStatus::MaxIter,
                    x: x_hat.clone(),
                    y: y_hat.clone(),
                    z: z_hat.clone(),
                    primal_objective: pobj,
                    dual_objective: dobj,
                    residuals: Residuals { primal: pres, dual: dres, gap },
                    certificate_residual: None,
                    dual_bound: None,
                    iterations: iter,
                },
            ));
        }

        // Infeasibility certificates (Farkas rays of the original data).
        let y_raw = eq.unscale_y(&y);
        let z_raw = eq.unscale_z(&z);
        let by_raw = dot(&prog.rhs, &y_raw);
        if by_raw > 0.0 {
            let yn: Vec<f64> = y_raw.iter().map(|v| v / by_raw).collect();
            let zn: Vec<f64> = z_raw.iter().map(|v| v / by_raw).collect();
            let res_vec: Vec<f64> =
                prog.apply_at(&yn).iter().zip(&zn).map(|(a, z)| a + z).collect();
            let res = norm2(&res_vec) / (1.0 + norm2(&yn));
            if res <= opts.tol {
                return ConicSolution {
                    status: ConicStatus::PrimalInfeasible,
                    x: x_hat,
                    y: yn,
                    z: zn,
                    primal_objective: f64::INFINITY,
                    dual_objective: f64::INFINITY,
                    residuals: Residuals { primal: pres, dual: dres, gap },
                    certificate_residual: Some(res),
                    dual_bound,
                    iterations: iter,
                };
            }
        }
        let x_raw = eq.unscale_x(&x);
        let cx_raw = dot(&prog.objective, &x_raw);
        if cx_raw < 0.0 {
            let xn: Vec<f64> = x_raw.iter().map(|v| v / (-cx_raw)).collect();
            let res = norm2(&prog.apply_a(&xn)) / (1.0 + norm2(&xn));
            if res <= opts.tol {
                return ConicSolution {
                    status: ConicStatus::DualInfeasible,
                    x: xn,
                    y: y_hat,
                    z: z_hat,
                    primal_objective: f64::NEG_INFINITY,
                    dual_objective: f64::NEG_INFINITY,
                    residuals: Residuals { primal: pres, dual: dres, gap },
                    certificate_residual: Some(res),
                    dual_bound,
                    iterations: iter,
                };
            }
        }

        if iter == opts.max_iter {
            break;
        }
        let _ = &dual_bound;

        // NT scaling at the current iterate.
        let Some(scaling) = NtScaling::compute(&layout, &x, &z) else {
            log::warn!("NT scaling failed at iteration {iter}");
            let mut out = best_or_failure(best, ConicStatus::NumericalFailure);
            out.dual_bound = dual_bound;
            return out;
        };
        let mu = (scaling.lambda_sq_sum() + tau * kappa) / nu;
        let Some(kkt) = factor(&prep, &scaling, &layout) else {
            log::warn!("KKT factorization failed at iteration {iter}");
            let mut out = best_or_failure(best, ConicStatus::NumericalFailure);
            out.dual_bound = dual_bound;
            return out;
        };

        // Constant pieces shared by both directions.
        let h_c = scaling.apply_h(&layout, c); // zero on free section is fine; only cone part used
        let q = scaled.apply_a(&cone_only(&layout, &h_c));
        let ckhck = dot(&cone_only(&layout, c), &h_c);

        let mut rhs2 = vec![0.0; kkt.size];
        for i in 0..m {
            rhs2[i] = b[i] + q[i];
        }
        for j in 0..layout.n_free {
            rhs2[m + j] = c[j];
        }
        let Some(u2) = kkt.solve(&rhs2) else {
            let mut out = best_or_failure(best, ConicStatus::NumericalFailure);
            out.dual_bound = dual_bound;
            return out;
        };

        let lambda_sq = scaling.lambda_sq(&layout);

        // Solve the Newton system
        //   A dx - b dtau = rp_t
        //   -A' dy + c dtau - dz = rd_t      (dz = 0 on the free section)
        //   b' dy - c' dx - dkappa = rg_t
        //   W^{-T} dx_K + W dz_K = ds_t
        //   kappa dtau + tau dkappa = dk_t
        // by elimination onto the bordered Schur system.
        let newton_solve = |rp_t: &[f64],
                            rd_t: &[f64],
                            rg_t: f64,
                            ds_t: &[f64],
                            dk_t: f64|
         -> Option<Direction> {
            let wt_ds = scaling.apply_wt(&layout, &cone_only(&layout, ds_t));
            let h_rd = scaling.apply_h(&layout, &cone_only(&layout, rd_t));
            let a_wt_ds = scaled.apply_a(&cone_only(&layout, &wt_ds));
            let a_h_rd = scaled.apply_a(&cone_only(&layout, &h_rd));
            let mut rhs1 = vec![0.0; kkt.size];
            for i in 0..m {
                rhs1[i] = rp_t[i] - a_wt_ds[i] - a_h_rd[i];
            }
            for j in 0..layout.n_free {
                rhs1[m + j] = -rd_t[j];
            }
            let u1 = kkt.solve(&rhs1)?;

            let bq: Vec<f64> = b.iter().zip(&q).map(|(bi, qi)| bi - qi).collect();
            let ck = cone_only(&layout, c);
            let num = rg_t + dk_t / tau + dot(&ck, &wt_ds) + dot(&ck, &h_rd)
                - dot(&bq, &u1[..m])
                + dot(&c[..layout.n_free], &u1[m..]);
            let den = dot(&bq, &u2[..m]) - dot(&c[..layout.n_free], &u2[m..]) + ckhck + kappa / tau;
            if den.abs() < 1e-300 {
                return None;
            }
            let d_tau = num / den;

            let mut dy = vec![0.0; m];
            let mut dxf = vec![0.0; layout.n_free];
            for i in 0..m {
                dy[i] = u1[i] + d_tau * u2[i];
            }
            for j in 0..layout.n_free {
                dxf[j] = u1[m + j] + d_tau * u2[m + j];
            }
            // dz_K = -A_K' dy + c_K dtau - rd_t_K ; dx_K = W' ds_t - H dz_K
            let at_dy = scaled.apply_at(&dy);
            let mut dz = vec![0.0; n];
            for i in layout.n_free..n {
                dz[i] = -at_dy[i] + c[i] * d_tau - rd_t[i];
            }
            let h_dz = scaling.apply_h(&layout, &dz);
            let mut dx = vec![0.0; n];
            dx[..layout.n_free].copy_from_slice(&dxf);
            for i in layout.n_free..n {
                dx[i] = wt_ds[i] - h_dz[i];
            }
            let d_kappa_out = (dk_t - kappa * d_tau) / tau;
            Some(Direction { dx, dy, dz, d_tau, d_kappa: d_kappa_out })
        };

        // Defect of a computed direction against the same five equations.
        let defect = |rp_t: &[f64],
                      rd_t: &[f64],
                      rg_t: f64,
                      ds_t: &[f64],
                      dk_t: f64,
                      d: &Direction|
         -> (Vec<f64>, Vec<f64>, f64, Vec<f64>, f64) {
            let adx = scaled.apply_a(&d.dx);
            let atdy = scaled.apply_at(&d.dy);
            let e1: Vec<f64> =
                (0..m).map(|i| rp_t[i] - (adx[i] - b[i] * d.d_tau)).collect();
            let e2: Vec<f64> = (0..n)
                .map(|i| rd_t[i] - (-atdy[i] + c[i] * d.d_tau - d.dz[i]))
                .collect();
            let e3 = rg_t - (dot(b, &d.dy) - dot(c, &d.dx) - d.d_kappa);
            let sx = scaling.apply_w_inv_t(&layout, &cone_only(&layout, &d.dx));
            let sz = scaling.apply_w(&layout, &d.dz);
            let e4: Vec<f64> = (0..n)
                .map(|i| {
                    if i < layout.n_free {
                        0.0
                    } else {
                        ds_t[i] - (sx[i] + sz[i])
                    }
                })
                .collect();
            let e5 = dk_t - (kappa * d.d_tau + tau * d.d_kappa);
            (e1, e2, e3, e4, e5)
        };

        let solve_direction = |d_target: &[f64], d_kappa_t: f64| -> Option<Direction> {
            let d_s = scaling.jordan_div_lambda(&layout, d_target);
            let rp_t: Vec<f64> = r_p.iter().map(|v| -v).collect();
            let rd_t: Vec<f64> = r_d.iter().map(|v| -v).collect();
            let mut dir = newton_solve(&rp_t, &rd_t, -r_g, &d_s, d_kappa_t)?;
            // One pass of full-system iterative refinement: the Schur
            // elimination squares conditioning, and bound quality near
            // convergence depends on recovering those digits.
            for _ in 0..2 {
                let (e1, e2, e3, e4, e5) = defect(&rp_t, &rd_t, -r_g, &d_s, d_kappa_t, &dir);
                let Some(corr) = newton_solve(&e1, &e2, e3, &e4, e5) else { break };
                axpy(1.0, &corr.dx, &mut dir.dx);
                axpy(1.0, &corr.dy, &mut dir.dy);
                axpy(1.0, &corr.dz, &mut dir.dz);
                dir.d_tau += corr.d_tau;
                dir.d_kappa += corr.d_kappa;
            }
            Some(dir)
        };

        // Predictor: drive complementarity toward zero.
        let aff_target: Vec<f64> = lambda_sq.iter().map(|v| -v).collect();
        let Some(aff) = solve_direction(&aff_target, -tau * kappa) else {
            let mut out = best_or_failure(best, ConicStatus::NumericalFailure);
            out.dual_bound = dual_bound;
            return out;
        };
        let sx_aff = scaling.apply_w_inv_t(&layout, &aff.dx);
        let sz_aff = scaling.apply_w(&layout, &aff.dz);
        let alpha_aff = max_step(&scaling, &layout, &sx_aff, &sz_aff, tau, kappa, &aff).min(1.0);

        let mu_aff = {
            let mut xs = x.clone();
            let mut zs = z.clone();
            axpy(alpha_aff, &aff.dx, &mut xs);
            axpy(alpha_aff, &aff.dz, &mut zs);
            let ts = tau + alpha_aff * aff.d_tau;
            let ks = kappa + alpha_aff * aff.d_kappa;
            (dot(&cone_only(&layout, &xs), &zs) + ts * ks) / nu
        };
        let mut sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        // Keep the complementarity from racing ahead of feasibility: the
        // Schur system's conditioning degrades with mu, and the remaining
        // residual work needs accurate directions.
        let feas_lag = {
            let nb = 1.0 + norm2(b);
            let nc = 1.0 + norm2(c);
            (norm2(&r_p) / nb).max(norm2(&r_d) / nc)
        };
        if mu < feas_lag {
            sigma = sigma.max(if mu < 0.1 * feas_lag { 0.99 } else { 0.5 });
        }

        // Corrector with the Mehrotra second-order term.
        let corr = scaling.jordan_product(&layout, &sx_aff, &sz_aff);
        let mut target: Vec<f64> = lambda_sq.iter().map(|v| -v).collect();
        let e = layout.identity();
        axpy(sigma * mu, &e, &mut target);
        axpy(-1.0, &corr, &mut target);
        let d_kappa_t = sigma * mu - tau * kappa - aff.d_tau * aff.d_kappa;
        let Some(dir) = solve_direction(&target, d_kappa_t) else {
            let mut out = best_or_failure(best, ConicStatus::NumericalFailure);
            out.dual_bound = dual_bound;
            return out;
        };

        let sx = scaling.apply_w_inv_t(&layout, &dir.dx);
        let sz = scaling.apply_w(&layout, &dir.dz);
        let alpha_max = max_step(&scaling, &layout, &sx, &sz, tau, kappa, &dir);
        let alpha = (0.99 * alpha_max).min(1.0);
        if opts.verbose {
            log::debug!(
                "      sigma {sigma:8.2e} mu {mu:9.2e} alpha_aff {alpha_aff:6.3} alpha {alpha:6.3} dtau {:9.2e} dkappa {:9.2e}",
                dir.d_tau, dir.d_kappa
            );
        }
        if alpha < 1e-9 {
            tiny_steps += 1;
            if tiny_steps >= 3 {
                let mut out = best_or_failure(best, ConicStatus::NumericalFailure);
                out.dual_bound = dual_bound;
                return out;
            }
        } else {
            tiny_steps = 0;
        }

        axpy(alpha, &dir.dx, &mut x);
        axpy(alpha, &dir.dy, &mut y);
        axpy(alpha, &dir.dz, &mut z);
        tau += alpha * dir.d_tau;
        kappa += alpha * dir.d_kappa;
        if !(tau > 0.0 && kappa > 0.0 && tau.is_finite()) {
            let mut out = best_or_failure(best, ConicStatus::NumericalFailure);
            out.dual_bound = dual_bound;
            return out;
        }
    }

    let mut out = best_or_failure(best, ConicStatus::MaxIter);
    out.dual_bound = dual_bound;
    out
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    d_tau: f64,
    d_kappa: f64,
}

/// Copy of `v` with the free section zeroed; cone-space operators and inner
/// products act on the cone sections only.
fn cone_only(layout: &ConeLayout, v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    for o in &mut out[..layout.n_free] {
        *o = 0.0;
    }
    out
}

fn max_step(
    scaling: &NtScaling,
    layout: &ConeLayout,
    sx: &[f64],
    sz: &[f64],
    tau: f64,
    kappa: f64,
    dir: &Direction,
) -> f64 {
    let mut alpha = scaling
        .max_step_scaled(layout, sx)
        .min(scaling.max_step_scaled(layout, sz));
    if dir.d_tau < 0.0 {
        alpha = alpha.min(-tau / dir.d_tau);
    }
    if dir.d_kappa < 0.0 {
        alpha = alpha.min(-kappa / dir.d_kappa);
    }
    alpha
}

fn best_or_failure(best: Option<(f64, ConicSolution)>, status: ConicStatus) -> ConicSolution {
    match best {
        Some((_, mut sol)) => {
            sol.status = status;
            sol
        }
        None => ConicSolution {
            status,
            x: Vec::new(),
            y: Vec::new(),
            z: Vec::new(),
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            residuals: Residuals::default(),
            certificate_residual: None,
            dual_bound: None,
            iterations: 0,
        },
    }
}

fn failure_solution(prog: &ConicProgram, status: ConicStatus) -> ConicSolution {
    ConicSolution {
        status,
        x: vec![0.0; prog.n_cols()],
        y: vec![0.0; prog.n_rows()],
        z: vec![0.0; prog.n_cols()],
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        residuals: Residuals::default(),
        certificate_residual: None,
        dual_bound: None,
        iterations: 0,
    }
}
