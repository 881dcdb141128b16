use ropf_core::chordal::decompose_network;
use ropf_core::conic::{solve, SolverOptions};
use ropf_core::matpower::load_network;
use ropf_core::sdp::*;
use ropf_core::{RopfProblem, Variant};

fn main() {
    env_logger::init();
    let text = std::fs::read_to_string("data/case30.m").unwrap();
    let net = load_network(&text).unwrap();
    let p = RopfProblem::new(net, Variant::MaxKShunts { k: 4 }).unwrap();
    let nd = decompose_network(&p.net, 1);
    let inst = build_sdp(&p, &nd, &Fixings::none()).unwrap();
    let sol = solve(&inst.program, &SolverOptions { verbose: true, max_iter: 400, ..Default::default() });
    println!("{:?} dual_bound {:?}", sol.status, sol.dual_bound);
}
