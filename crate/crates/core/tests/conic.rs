//! Conic solver integration tests: hand-checked instances, planted
//! primal-dual optimal pairs, planted infeasible programs, and invariance
//! properties.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use ropf_core::conic::{
    check_certificate, mat_to_svec, solve, svec_len, ConicProgram, ConicStatus, SolverOptions,
};

fn opts() -> SolverOptions {
    SolverOptions::default()
}

/// min x s.t. x >= 2, with x a 1x1 PSD block: optimum 2.
#[test]
fn one_dimensional_psd_bound() {
    let prog = ConicProgram {
        n_free: 0,
        n_nonneg: 1, // slack s
        psd_dims: vec![1],
        // x - s = 2
        a_triplets: vec![(0, 1, 1.0), (0, 0, -1.0)],
        rhs: vec![2.0],
        objective: vec![0.0, 1.0],
    };
    let sol = solve(&prog, &opts());
    assert_eq!(sol.status, ConicStatus::Optimal);
    assert!((sol.primal_objective - 2.0).abs() < 1e-6, "{}", sol.primal_objective);
    assert!((sol.x[1] - 2.0).abs() < 1e-5);
}

/// min trace(X) s.t. X psd, X11 = 1, X12 = 2: optimum 1 + 4 = 5 at the rank-1
/// boundary X22 = X12^2 / X11.
#[test]
fn two_by_two_rank_boundary() {
    let sq2 = std::f64::consts::SQRT_2;
    let prog = ConicProgram {
        n_free: 0,
        n_nonneg: 0,
        psd_dims: vec![2],
        // svec layout: [X11, sqrt2*X21, X22]
        a_triplets: vec![(0, 0, 1.0), (1, 1, 1.0)],
        rhs: vec![1.0, 2.0 * sq2],
        objective: vec![1.0, 0.0, 1.0],
    };
    let sol = solve(&prog, &opts());
    assert_eq!(sol.status, ConicStatus::Optimal);
    assert!((sol.primal_objective - 5.0).abs() < 1e-5, "{}", sol.primal_objective);
    assert!((sol.x[2] - 4.0).abs() < 1e-4);
}

/// x >= 1 and x <= 0 is primal infeasible; the solver must certify it.
#[test]
fn contradictory_bounds_certified_infeasible() {
    let prog = ConicProgram {
        n_free: 0,
        n_nonneg: 3, // x, s1, s2
        psd_dims: vec![],
        a_triplets: vec![(0, 0, 1.0), (0, 1, -1.0), (1, 0, 1.0), (1, 2, 1.0)],
        rhs: vec![1.0, 0.0],
        objective: vec![1.0, 0.0, 0.0],
    };
    let sol = solve(&prog, &opts());
    assert_eq!(sol.status, ConicStatus::PrimalInfeasible);
    let report = check_certificate(&prog, &sol);
    assert!(report.ray_residual.unwrap() <= 1e-7);
    assert!(report.ray_objective.unwrap() > 0.0);
    assert!(report.z_cone_violation <= 1e-9);
}

struct Planted {
    prog: ConicProgram,
    optimum: f64,
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    // Gram-Schmidt on a random Gaussian matrix.
    let mut q = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
        for k in 0..j {
            let proj: f64 = (0..d).map(|i| q[[i, k]] * v[i]).sum();
            for i in 0..d {
                v[i] -= proj * q[[i, k]];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for i in 0..d {
            q[[i, j]] = v[i] / norm;
        }
    }
    q
}

/// Build a random program with a known strictly-complementary optimal pair.
fn plant_optimal(rng: &mut ChaCha8Rng) -> Planted {
    let n_free = rng.gen_range(0..3);
    let n_nonneg = rng.gen_range(1..5);
    let n_blocks = rng.gen_range(1..3);
    let psd_dims: Vec<usize> = (0..n_blocks).map(|_| rng.gen_range(2..5)).collect();
    let n = n_free + n_nonneg + psd_dims.iter().map(|&d| svec_len(d)).sum::<usize>();
    let m = rng.gen_range(2..(2 + n / 2).max(3));

    // Primal point x*: free arbitrary, nonneg split active/inactive, PSD
    // blocks share an eigenbasis with complementary dual blocks.
    let mut x = vec![0.0; n];
    let mut z = vec![0.0; n];
    for i in 0..n_free {
        x[i] = rng.gen_range(-2.0..2.0);
    }
    for i in 0..n_nonneg {
        if rng.gen_bool(0.5) {
            x[n_free + i] = rng.gen_range(0.3..2.0);
        } else {
            z[n_free + i] = rng.gen_range(0.3..2.0);
        }
    }
    let mut offset = n_free + n_nonneg;
    for &d in &psd_dims {
        let q = random_orthogonal(rng, d);
        let rank = rng.gen_range(1..=d.max(1));
        let mut xe = Array2::<f64>::zeros((d, d));
        let mut ze = Array2::<f64>::zeros((d, d));
        for i in 0..d {
            if i < rank {
                xe[[i, i]] = rng.gen_range(0.3..2.0);
            } else {
                ze[[i, i]] = rng.gen_range(0.3..2.0);
            }
        }
        let xm = q.dot(&xe).dot(&q.t());
        let zm = q.dot(&ze).dot(&q.t());
        let xs = mat_to_svec(&xm);
        let zs = mat_to_svec(&zm);
        x[offset..offset + xs.len()].copy_from_slice(&xs);
        z[offset..offset + zs.len()].copy_from_slice(&zs);
        offset += xs.len();
    }

    let mut a_triplets = Vec::new();
    for r in 0..m {
        for c in 0..n {
            if rng.gen_bool(0.6) {
                a_triplets.push((r, c, rng.gen_range(-1.5..1.5)));
            }
        }
    }
    let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let prog0 = ConicProgram {
        n_free,
        n_nonneg,
        psd_dims,
        a_triplets,
        rhs: vec![0.0; m],
        objective: vec![0.0; n],
    };
    let rhs = prog0.apply_a(&x);
    let mut objective = prog0.apply_at(&y);
    for i in 0..n {
        objective[i] += z[i];
    }
    let optimum: f64 = objective.iter().zip(&x).map(|(c, x)| c * x).sum();
    Planted { prog: ConicProgram { rhs, objective, ..prog0 }, optimum }
}

/// Build a random primal-infeasible program with a planted Farkas ray.
fn plant_infeasible(rng: &mut ChaCha8Rng) -> ConicProgram {
    let n_free = rng.gen_range(0..2);
    let n_nonneg = rng.gen_range(1..4);
    let psd_dims: Vec<usize> = vec![rng.gen_range(2..4)];
    let n = n_free + n_nonneg + psd_dims.iter().map(|&d| svec_len(d)).sum::<usize>();
    let m = rng.gen_range(2..5);

    // Ray y*, strictly interior z* on the cone part, zero on the free part.
    let ystar: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ynorm2: f64 = ystar.iter().map(|v| v * v).sum();
    let mut zstar = vec![0.0; n];
    for i in n_free..n_free + n_nonneg {
        zstar[i] = rng.gen_range(0.3..1.5);
    }
    let mut offset = n_free + n_nonneg;
    for &d in &psd_dims {
        let q = random_orthogonal(rng, d);
        let mut e = Array2::<f64>::zeros((d, d));
        for i in 0..d {
            e[[i, i]] = rng.gen_range(0.3..1.5);
        }
        let zm = q.dot(&e).dot(&q.t());
        let zs = mat_to_svec(&zm);
        zstar[offset..offset + zs.len()].copy_from_slice(&zs);
        offset += zs.len();
    }

    let mut dense = Array2::<f64>::zeros((m, n));
    for r in 0..m {
        for c in 0..n {
            if rng.gen_bool(0.7) {
                dense[[r, c]] = rng.gen_range(-1.5..1.5);
            }
        }
    }
    // Adjust A so that A' y* = -z*: subtract y* (A0' y* + z*)' / ||y*||^2.
    let v: Vec<f64> = (0..n)
        .map(|c| (0..m).map(|r| dense[[r, c]] * ystar[r]).sum::<f64>() + zstar[c])
        .collect();
    for r in 0..m {
        for c in 0..n {
            dense[[r, c]] -= ystar[r] * v[c] / ynorm2;
        }
    }
    // b with b' y* = 1.
    let mut rhs: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let by: f64 = rhs.iter().zip(&ystar).map(|(b, y)| b * y).sum();
    for (bi, yi) in rhs.iter_mut().zip(&ystar) {
        *bi += yi * (1.0 - by) / ynorm2;
    }
    let mut a_triplets = Vec::new();
    for r in 0..m {
        for c in 0..n {
            if dense[[r, c]] != 0.0 {
                a_triplets.push((r, c, dense[[r, c]]));
            }
        }
    }
    let objective: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ConicProgram { n_free, n_nonneg, psd_dims, a_triplets, rhs, objective }
}

#[test]
fn planted_optima_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..50 {
        let planted = plant_optimal(&mut rng);
        let sol = solve(&planted.prog, &opts());
        assert_eq!(sol.status, ConicStatus::Optimal, "trial {trial}");
        let report = check_certificate(&planted.prog, &sol);
        assert!(report.max_residual() <= 1e-7, "trial {trial}: {report:?}");
        let scale = 1.0 + planted.optimum.abs();
        assert!(
            (sol.primal_objective - planted.optimum).abs() <= 1e-6 * scale,
            "trial {trial}: got {} want {}",
            sol.primal_objective,
            planted.optimum
        );
    }
}

#[test]
fn planted_infeasible_are_certified() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..10 {
        let prog = plant_infeasible(&mut rng);
        let sol = solve(&prog, &opts());
        assert_eq!(sol.status, ConicStatus::PrimalInfeasible, "trial {trial}");
        let report = check_certificate(&prog, &sol);
        assert!(report.ray_residual.unwrap() <= 1e-7, "trial {trial}: {report:?}");
        assert!(report.ray_objective.unwrap() > 0.0);
        assert!(report.z_cone_violation <= 1e-9);
    }
}

#[test]
fn corrupted_solution_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let planted = plant_optimal(&mut rng);
    let mut sol = solve(&planted.prog, &opts());
    assert_eq!(sol.status, ConicStatus::Optimal);
    sol.x[0] += 1.0;
    let report = check_certificate(&planted.prog, &sol);
    assert!(report.primal_residual > 1e-7, "{report:?}");
}

#[test]
fn objective_scaling_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let planted = plant_optimal(&mut rng);
    let sol1 = solve(&planted.prog, &opts());
    let mut scaled = planted.prog.clone();
    for c in &mut scaled.objective {
        *c *= 10.0;
    }
    let sol2 = solve(&scaled, &opts());
    assert_eq!(sol1.status, ConicStatus::Optimal);
    assert_eq!(sol2.status, ConicStatus::Optimal);
    let scale = 1.0 + sol1.primal_objective.abs();
    assert!((sol2.primal_objective - 10.0 * sol1.primal_objective).abs() < 1e-5 * 10.0 * scale);
}

#[test]
fn identical_inputs_identical_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let planted = plant_optimal(&mut rng);
    let a = solve(&planted.prog, &opts());
    let b = solve(&planted.prog, &opts());
    assert_eq!(a.x, b.x);
    assert_eq!(a.y, b.y);
    assert_eq!(a.iterations, b.iterations);
}
