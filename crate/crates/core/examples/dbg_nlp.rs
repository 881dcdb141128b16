use ropf_core::acopf::*;
use ropf_core::matpower::load_network;
use ropf_core::sdp::Fixings;
use ropf_core::{RopfProblem, Variant};
use std::time::Instant;

fn main() {
    env_logger::init();
    let case = std::env::args().nth(1).unwrap_or("case14".into());
    let text = std::fs::read_to_string(format!("data/{case}.m")).unwrap();
    let net = load_network(&text).unwrap();
    let shunts = net.shunt_buses();
    let p = RopfProblem::new(net, Variant::MaxKShunts { k: 4 }).unwrap();
    let opts = NlpOptions::default();
    let t0 = Instant::now();
    let nshunts = shunts.len().min(4);
    let mut best = f64::INFINITY;
    for mask in 0..(1u32 << nshunts) {
        let mut fix = Fixings::none();
        for (j, &s) in shunts.iter().enumerate().take(nshunts) {
            fix.shunts.insert(s, mask >> j & 1 == 1);
        }
        for &s in shunts.iter().skip(nshunts) {
            fix.shunts.insert(s, false);
        }
        let r = solve_fixed(&p, &fix, None, &opts);
        let disp: Vec<(usize, f64)> = r.candidate.generation.iter().map(|(&b, s)| (b, (s.re*1000.0).round()/10.0)).collect();
        println!("  mask {mask:04b}: {:?} obj {:.4} viol {:.2e} P(MW) {:?}", r.status, r.objective, r.violation, disp);
        if r.status == NlpStatus::LocalOptimal {
            best = best.min(r.objective);
        }
    }
    println!("{case}: best over fixings = {best:.4}  ({:?})", t0.elapsed());
    let t1 = Instant::now();
    let cont = solve_continuous(&p, &opts);
    println!("continuous: {:?} obj {:.4} u {:?} ({:?})", cont.status, cont.objective,
        cont.candidate.shunt_state, t1.elapsed());
    let t2 = Instant::now();
    let ts = three_step(&p, &Fixings::none(), &opts);
    println!("three_step: {:?} obj {:.4} u {:?} ({:?})", ts.status, ts.objective,
        ts.candidate.shunt_state, t2.elapsed());
}
