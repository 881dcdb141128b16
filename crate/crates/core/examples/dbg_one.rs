use ropf_core::acopf::*;
use ropf_core::matpower::load_network;
use ropf_core::sdp::Fixings;
use ropf_core::{RopfProblem, Variant};
fn main() {
    env_logger::init();
    let text = std::fs::read_to_string("data/case14.m").unwrap();
    let net = load_network(&text).unwrap();
    let shunts = net.shunt_buses();
    let p = RopfProblem::new(net, Variant::MaxKShunts { k: 4 }).unwrap();
    let mut fix = Fixings::none();
    for s in shunts { fix.shunts.insert(s, true); }
    let r = solve_fixed(&p, &fix, None, &NlpOptions::default());
    println!("{:?} obj {:.4} viol {:.2e}", r.status, r.objective, r.violation);
}
