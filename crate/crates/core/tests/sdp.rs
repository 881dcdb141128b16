//! Relaxation-assembly integration tests on the bundled cases.

mod common;

use common::load_case;
use ropf_core::chordal::{decompose_network, decompose_network_dense};
use ropf_core::conic::SolverOptions;
use ropf_core::sdp::{build_sdp, build_sdp_with, solve_relaxation, BuildOptions, Fixings, RelaxStatus};
use ropf_core::{RopfProblem, Variant};

fn maxk(net: ropf_core::Network, k: usize) -> RopfProblem {
    RopfProblem::new(net, Variant::MaxKShunts { k }).unwrap()
}

#[test]
fn case14_root_relaxation_bound() {
    let problem = maxk(load_case("case14"), 4);
    let nd = decompose_network(&problem.net, 1);
    let inst = build_sdp(&problem, &nd, &Fixings::none()).unwrap();
    assert_eq!(inst.free_shunts().len(), 1);
    let (sol, rp) = solve_relaxation(&inst, &SolverOptions::default());
    assert_eq!(rp.status, RelaxStatus::Optimal, "conic status {:?}", sol.status);
    // Table value 5371.50: the relaxation must sit just below it.
    assert!(rp.lower_bound <= 5371.50 * (1.0 + 1e-4), "LB {}", rp.lower_bound);
    assert!(rp.lower_bound >= 5371.50 * (1.0 - 1e-3), "LB {}", rp.lower_bound);
}

#[test]
fn case14_decomposed_equals_dense() {
    let problem = maxk(load_case("case14"), 4);
    let opts = SolverOptions::default();
    let nd = decompose_network(&problem.net, 1);
    let (_, rp) = solve_relaxation(&build_sdp(&problem, &nd, &Fixings::none()).unwrap(), &opts);
    let dense = decompose_network_dense(&problem.net);
    let (_, rp_dense) =
        solve_relaxation(&build_sdp(&problem, &dense, &Fixings::none()).unwrap(), &opts);
    assert_eq!(rp.status, RelaxStatus::Optimal);
    assert_eq!(rp_dense.status, RelaxStatus::Optimal);
    let rel = (rp.lower_bound - rp_dense.lower_bound).abs() / rp_dense.lower_bound.abs();
    assert!(rel <= 1e-6, "decomposed {} dense {}", rp.lower_bound, rp_dense.lower_bound);
}

#[test]
fn fixing_all_shunts_removes_mccormick_rows() {
    let net = load_case("case14");
    let shunts = net.shunt_buses();
    let problem = maxk(net, 4);
    let mut fix = Fixings::none();
    for s in shunts {
        fix.shunts.insert(s, false);
    }
    let nd = decompose_network(&problem.net, 1);
    let inst = build_sdp(&problem, &nd, &fix).unwrap();
    assert_eq!(inst.mccormick_row_count(), 0);
    assert!(inst.free_shunts().is_empty());
}

#[test]
fn fixed_mccormick_rows_are_redundant() {
    let net = load_case("case14");
    let shunts = net.shunt_buses();
    let problem = maxk(net, 4);
    let nd = decompose_network(&problem.net, 1);
    let opts = SolverOptions { tol: 1e-9, ..Default::default() };
    for on in [false, true] {
        let mut fix = Fixings::none();
        for &s in &shunts {
            fix.shunts.insert(s, on);
        }
        let bare = build_sdp(&problem, &nd, &fix).unwrap();
        let kept =
            build_sdp_with(&problem, &nd, &fix, &BuildOptions { keep_fixed_mccormick: true })
                .unwrap();
        assert!(kept.mccormick_row_count() > 0);
        let (_, rp_bare) = solve_relaxation(&bare, &opts);
        let (_, rp_kept) = solve_relaxation(&kept, &opts);
        let rel = (rp_bare.lower_bound - rp_kept.lower_bound).abs() / rp_bare.lower_bound.abs();
        assert!(rel < 1e-8, "on={on}: bare {} kept {}", rp_bare.lower_bound, rp_kept.lower_bound);
    }
}

#[test]
fn moves_with_zero_initial_state_equals_cardinality_row() {
    let net = load_case("case30");
    let shunts = net.shunt_buses();
    let p_card = maxk(net.clone(), 4);
    let initial = shunts.iter().map(|&s| (s, false)).collect();
    let p_moves = RopfProblem::new(net, Variant::MaxKMoves { k: 4, initial }).unwrap();
    let nd = decompose_network(&p_card.net, 1);
    let a = build_sdp(&p_card, &nd, &Fixings::none()).unwrap();
    let b = build_sdp(&p_moves, &nd, &Fixings::none()).unwrap();
    assert_eq!(a.program, b.program);
}

#[test]
fn monotone_in_fixings_and_extraction() {
    let problem = maxk(load_case("case14"), 4);
    let nd = decompose_network(&problem.net, 1);
    let opts = SolverOptions::default();
    let (_, root) = solve_relaxation(&build_sdp(&problem, &nd, &Fixings::none()).unwrap(), &opts);
    assert_eq!(root.status, RelaxStatus::Optimal);
    let shunt = problem.net.shunt_buses()[0];
    assert!(root.shunt_activation[&shunt] >= -1e-9 && root.shunt_activation[&shunt] <= 1.0);
    for on in [false, true] {
        let fix = Fixings::none().with_shunt(shunt, on);
        let (_, rp) = solve_relaxation(&build_sdp(&problem, &nd, &fix).unwrap(), &opts);
        assert_eq!(rp.status, RelaxStatus::Optimal);
        assert!(
            rp.lower_bound >= root.lower_bound - 1e-6 * (1.0 + root.lower_bound.abs()),
            "fixing u={on} lowered the bound: {} < {}",
            rp.lower_bound,
            root.lower_bound
        );
    }
}

#[test]
fn fixing_non_shunt_bus_is_rejected() {
    let problem = maxk(load_case("case14"), 4);
    let nd = decompose_network(&problem.net, 1);
    let fix = Fixings::none().with_shunt(1, true);
    assert!(build_sdp(&problem, &nd, &fix).is_err());
}

#[test]
fn sdpa_export_has_expected_shape() {
    let problem = maxk(load_case("case14"), 4);
    let nd = decompose_network(&problem.net, 1);
    let inst = build_sdp(&problem, &nd, &Fixings::none()).unwrap();
    let text = ropf_core::sdp::export_sdpa(&inst);
    let mut lines = text.lines();
    let m: usize = lines.next().unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert_eq!(m, inst.program.n_rows());
    let nblock: usize = lines.next().unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert_eq!(nblock, inst.program.psd_dims.len() + 1);
}
