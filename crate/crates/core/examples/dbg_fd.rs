use ndarray::Array1;
use ropf_core::acopf::AcopfModel;
use ropf_core::matpower::load_network;
use ropf_core::sdp::Fixings;
use ropf_core::{RopfProblem, Variant};

fn main() {
    let text = std::fs::read_to_string("data/case14.m").unwrap();
    let net = load_network(&text).unwrap();
    let p = RopfProblem::new(net, Variant::MaxKShunts { k: 4 }).unwrap();
    let model = AcopfModel::new(&p, &Fixings::none()).unwrap();
    let n = model.n_vars;
    let mut x = model.flat_start();
    // wiggle the point so derivatives are generic
    for i in 0..n {
        x[i] += 0.01 * ((i * 7 % 13) as f64 / 13.0 - 0.5);
    }
    let eps = 1e-6;
    let inj = model.injections(&x);
    let g = model.objective_grad(&x);
    let mut worst_g = (0.0f64, 0usize);
    for i in 0..n {
        let mut xp = x.clone();
        xp[i] += eps;
        let mut xm = x.clone();
        xm[i] -= eps;
        let op = model.objective(&xp, &model.injections(&xp));
        let om = model.objective(&xm, &model.injections(&xm));
        let fd = (op - om) / (2.0 * eps);
        let err = (fd - g[i]).abs() / (1.0 + fd.abs());
        if err > worst_g.0 { worst_g = (err, i); }
    }
    println!("objective grad worst rel err: {:.2e} at var {}", worst_g.0, worst_g.1);

    let je = model.eq_jacobian(&x);
    let h0 = model.eq_values(&x, &inj);
    let mut worst = (0.0f64, 0, 0);
    for i in 0..n {
        let mut xp = x.clone();
        xp[i] += eps;
        let hp = model.eq_values(&xp, &model.injections(&xp));
        let mut xm = x.clone();
        xm[i] -= eps;
        let hm = model.eq_values(&xm, &model.injections(&xm));
        for r in 0..h0.len() {
            let fd = (hp[r] - hm[r]) / (2.0 * eps);
            let err = (fd - je[[r, i]]).abs() / (1.0 + fd.abs());
            if err > worst.0 { worst = (err, r, i); }
        }
    }
    println!("eq jacobian worst rel err: {:.2e} at row {} var {}", worst.0, worst.1, worst.2);

    let ji = model.ineq_jacobian(&x);
    let c0 = model.ineq_values(&x, &inj);
    let mut worst = (0.0f64, 0, 0);
    for i in 0..n {
        let mut xp = x.clone();
        xp[i] += eps;
        let cp = model.ineq_values(&xp, &model.injections(&xp));
        let mut xm = x.clone();
        xm[i] -= eps;
        let cm = model.ineq_values(&xm, &model.injections(&xm));
        for r in 0..c0.len() {
            let fd = (cp[r] - cm[r]) / (2.0 * eps);
            let err = (fd - ji[[r, i]]).abs() / (1.0 + fd.abs());
            if err > worst.0 { worst = (err, r, i); }
        }
    }
    println!("ineq jacobian worst rel err: {:.2e} at row {} var {}", worst.0, worst.1, worst.2);

    // Hessian of the Lagrangian via FD on the gradient.
    let m_eq = model.n_eq();
    let m_in = model.n_ineq();
    let ye: Array1<f64> = (0..m_eq).map(|i| 0.3 + 0.1 * (i % 5) as f64).collect();
    let yi: Array1<f64> = (0..m_in).map(|i| -0.2 + 0.05 * (i % 7) as f64).collect();
    let hmat = model.lagrangian_hessian(&x, 0.7, &ye, &yi);
    let lag_grad = |xv: &Array1<f64>| -> Array1<f64> {
        let mut g = model.objective_grad(xv).mapv(|v| v * 0.7);
        g = g + model.eq_jacobian(xv).t().dot(&ye) + model.ineq_jacobian(xv).t().dot(&yi);
        g
    };
    let mut worst = (0.0f64, 0, 0);
    for i in 0..n {
        let mut xp = x.clone();
        xp[i] += eps;
        let gp = lag_grad(&xp);
        let mut xm = x.clone();
        xm[i] -= eps;
        let gm = lag_grad(&xm);
        for r in 0..n {
            let fd = (gp[r] - gm[r]) / (2.0 * eps);
            let err = (fd - hmat[[r, i]]).abs() / (1.0 + fd.abs());
            if err > worst.0 { worst = (err, r, i); }
        }
    }
    println!("lagrangian hessian worst rel err: {:.2e} at ({}, {})", worst.0, worst.1, worst.2);
}
