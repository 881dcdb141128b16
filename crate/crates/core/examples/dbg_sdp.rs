use ropf_core::chordal::decompose_network;
use ropf_core::conic::SolverOptions;
use ropf_core::matpower::load_network;
use ropf_core::sdp::*;
use ropf_core::{RopfProblem, Variant};
use std::time::Instant;

fn main() {
    env_logger::init();
    for case in ["case14", "case30", "case57", "case118"] {
        let text = std::fs::read_to_string(format!("data/{case}.m")).unwrap();
        let net = load_network(&text).unwrap();
        let p = RopfProblem::new(net, Variant::MaxKShunts { k: 4 }).unwrap();
        let t0 = Instant::now();
        let nd = decompose_network(&p.net, 1);
        let inst = build_sdp(&p, &nd, &Fixings::none()).unwrap();
        let (sol, rp) = solve_relaxation(&inst, &SolverOptions::default());
        println!(
            "{case}: {:?}/{:?} iters {} LB {:.2} u* {:?} total {:?}",
            sol.status, rp.status, sol.iterations, rp.lower_bound,
            rp.shunt_activation.values().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            t0.elapsed()
        );
    }
}
