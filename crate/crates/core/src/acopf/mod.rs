//! Feasible upper bounds for the ROPF problem: the three-step heuristic
//! (continuous relaxation, penalized complementarity, fix-and-resolve), the
//! rounding baseline, and the fixed-binary local solver they share.

mod model;
mod nlp;

pub use model::AcopfModel;
pub use nlp::{NlpOptions, NlpResult, NlpStatus};

use std::collections::BTreeMap;

use crate::network::{BusId, Candidate, Network, RopfProblem, Variant};
use crate::sdp::{Fixings, RelaxationPoint};

fn infeasible_result(problem: &RopfProblem) -> NlpResult {
    // A configuration whose binary part already violates the variant row can
    // never produce a candidate; report it without running the solver.
    let cand = Candidate {
        voltage: problem.net.buses.keys().map(|&b| (b, num_complex::Complex64::new(1.0, 0.0))).collect(),
        generation: BTreeMap::new(),
        shunt_state: problem
            .net
            .shunt_buses()
            .into_iter()
            .map(|b| (b, 0.0))
            .collect(),
        redispatch: None,
        objective: f64::INFINITY,
    };
    NlpResult {
        candidate: cand,
        status: NlpStatus::InfeasibleAtTolerance,
        violation: f64::INFINITY,
        objective: f64::INFINITY,
    }
}

fn better(a: NlpResult, b: NlpResult) -> NlpResult {
    match (a.status, b.status) {
        (NlpStatus::LocalOptimal, NlpStatus::LocalOptimal) => {
            if a.objective <= b.objective {
                a
            } else {
                b
            }
        }
        (NlpStatus::LocalOptimal, _) => a,
        (_, NlpStatus::LocalOptimal) => b,
        _ => {
            if a.violation <= b.violation {
                a
            } else {
                b
            }
        }
    }
}

/// Local solve with every binary pinned. `start` seeds the solver and also
/// enters the incumbent, so a feasible start can only be improved on.
pub fn solve_fixed(
    problem: &RopfProblem,
    fix: &Fixings,
    start: Option<&Candidate>,
    opts: &NlpOptions,
) -> NlpResult {
    split_best(problem, fix, |p, f| {
        debug_assert!(p.net.shunt_buses().iter().all(|b| f.shunts.contains_key(b)));
        let model = match AcopfModel::new(p, f) {
            Ok(m) => m,
            Err(_) => return infeasible_result(p),
        };
        let x0 = match start {
            Some(c) => model.start_from(c),
            None => model.flat_start(),
        };
        let first = nlp::solve_nlp(&model, x0, opts);
        if first.status == NlpStatus::LocalOptimal || start.is_none() {
            return first;
        }
        // Warm start led nowhere feasible; retry cold.
        better(first, nlp::solve_nlp(&model, model.flat_start(), opts))
    })
}

/// Continuous relaxation of the (possibly partially fixed) problem: free
/// activations live in [0, 1].
pub fn solve_continuous_with(
    problem: &RopfProblem,
    fix: &Fixings,
    opts: &NlpOptions,
) -> NlpResult {
    split_best(problem, fix, |p, f| {
        let model = match AcopfModel::new(p, f) {
            Ok(m) => m,
            Err(_) => return infeasible_result(p),
        };
        nlp::solve_nlp(&model, model.flat_start(), opts)
    })
}

pub fn solve_continuous(problem: &RopfProblem, opts: &NlpOptions) -> NlpResult {
    solve_continuous_with(problem, &Fixings::none(), opts)
}

/// Penalized complementarity step: minimize cost + rho * sum u (1 - u) on an
/// escalating schedule until every free activation is within `binary_tol` of
/// a bound (or the schedule runs out).
pub fn solve_mpec(problem: &RopfProblem, start: &Candidate, opts: &NlpOptions) -> NlpResult {
    solve_mpec_with(problem, &Fixings::none(), start, opts)
}

pub fn solve_mpec_with(
    problem: &RopfProblem,
    fix: &Fixings,
    start: &Candidate,
    opts: &NlpOptions,
) -> NlpResult {
    split_best(problem, fix, |p, f| {
        let mut model = match AcopfModel::new(p, f) {
            Ok(m) => m,
            Err(_) => return infeasible_result(p),
        };
        let free = model.free_shunt_bus_ids();
        let fractional = |c: &Candidate| -> f64 {
            free.iter()
                .map(|b| {
                    let u = c.shunt_state[b];
                    u.min(1.0 - u)
                })
                .fold(0.0, f64::max)
        };
        if free.is_empty() || fractional(start) <= opts.binary_tol {
            let mut out = nlp::solve_nlp(&model, model.start_from(start), opts);
            // Keep the start if it is already the better incumbent.
            out = better(
                out,
                NlpResult {
                    candidate: start.clone(),
                    status: NlpStatus::LocalOptimal,
                    violation: 0.0,
                    objective: start.objective,
                },
            );
            return out;
        }
        let scale = start.objective.abs().max(1.0);
        let mut current = start.clone();
        let mut result: Option<NlpResult> = None;
        for factor in [1.0, 10.0, 100.0, 1e3, 1e4] {
            model.penalty = factor * scale;
            let r = nlp::solve_nlp(&model, model.start_from(&current), opts);
            current = r.candidate.clone();
            let frac = fractional(&current);
            result = Some(r);
            if frac <= opts.binary_tol {
                break;
            }
        }
        let mut out = result.unwrap();
        if fractional(&out.candidate) > opts.binary_tol {
            out.status = NlpStatus::IterationLimit;
        }
        out
    })
}

/// Round the free activations of a candidate at one half (ties up), then
/// repair the variant budget: keep the `k` strongest activations for the
/// cardinality variant, the `k` strongest moves for the move-limited one.
pub fn round_with_repair(
    problem: &RopfProblem,
    fix: &Fixings,
    values: &BTreeMap<BusId, f64>,
) -> Fixings {
    let mut total = fix.clone();
    for (&bus, &u) in values {
        if !total.shunts.contains_key(&bus) {
            total.shunts.insert(bus, u >= 0.5);
        }
    }
    match &problem.variant {
        Variant::MaxKShunts { k } => {
            let mut on: Vec<BusId> = total
                .shunts
                .iter()
                .filter(|(b, &v)| v && !fix.shunts.contains_key(b))
                .map(|(&b, _)| b)
                .collect();
            let fixed_on = fix.shunts.values().filter(|&&v| v).count();
            let budget = k.saturating_sub(fixed_on);
            if on.len() > budget {
                on.sort_by(|a, b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(b)));
                for &bus in &on[budget..] {
                    total.shunts.insert(bus, false);
                }
            }
        }
        Variant::MaxKMoves { k, initial } => {
            let mut moves: Vec<BusId> = total
                .shunts
                .iter()
                .filter(|(b, &v)| initial[*b] != v && !fix.shunts.contains_key(b))
                .map(|(&b, _)| b)
                .collect();
            let fixed_moves =
                fix.shunts.iter().filter(|(b, &v)| initial[*b] != v).count();
            let budget = k.saturating_sub(fixed_moves);
            if moves.len() > budget {
                // Conviction of a move is the distance of u* from the
                // initial state; keep the strongest ones.
                moves.sort_by(|a, b| {
                    let ca = (values[a] - if initial[a] { 1.0 } else { 0.0 }).abs();
                    let cb = (values[b] - if initial[b] { 1.0 } else { 0.0 }).abs();
                    cb.partial_cmp(&ca).unwrap().then(a.cmp(b))
                });
                for &bus in &moves[budget..] {
                    total.shunts.insert(bus, initial[&bus]);
                }
            }
        }
        Variant::GenMoves { .. } => {}
    }
    total
}

/// The full heuristic per the dispatch rule: all three steps when binaries
/// are free, only the fix-and-resolve step when everything is pinned.
pub fn three_step(problem: &RopfProblem, fix: &Fixings, opts: &NlpOptions) -> NlpResult {
    split_best(problem, fix, |p, f| {
        let all_fixed = p.net.shunt_buses().iter().all(|b| f.shunts.contains_key(b));
        if all_fixed {
            return solve_fixed(p, f, None, opts);
        }
        let relaxed = solve_continuous_with(p, f, opts);
        let mpec = solve_mpec_with(p, f, &relaxed.candidate, opts);
        let values: BTreeMap<BusId, f64> = mpec
            .candidate
            .shunt_state
            .iter()
            .filter(|(b, _)| !f.shunts.contains_key(b))
            .map(|(&b, &u)| (b, u))
            .collect();
        let total = round_with_repair(p, f, &values);
        solve_fixed(p, &total, Some(&mpec.candidate), opts)
    })
}

/// Rounding heuristic over a relaxation solution: activations at or above
/// one half are fixed on (at most `k` of them under the cardinality
/// variant), the rest off, then one fixed solve.
pub fn rounding_baseline(
    problem: &RopfProblem,
    rp: &RelaxationPoint,
    opts: &NlpOptions,
) -> NlpResult {
    let mut values = rp.shunt_activation.clone();
    // The rounding threshold applies before the cardinality repair; shift
    // sub-half values to zero conviction so the repair sees rounded data.
    for v in values.values_mut() {
        if *v < 0.5 {
            *v = 0.0;
        }
    }
    let total = round_with_repair(problem, &Fixings::none(), &values);
    solve_fixed(problem, &total, None, opts)
}

/// Initial shunt state of the move-limited variant: round the continuous
/// relaxation of the problem without any optional constraint.
pub fn initial_shunt_state(
    net: &Network,
    opts: &NlpOptions,
) -> Result<BTreeMap<BusId, bool>, NlpResult> {
    let shunts = net.shunt_buses();
    let problem = RopfProblem::new(net.clone(), Variant::MaxKShunts { k: shunts.len() })
        .expect("cardinality variant always validates");
    let relaxed = solve_continuous(&problem, opts);
    if relaxed.status != NlpStatus::LocalOptimal {
        return Err(relaxed);
    }
    Ok(relaxed
        .candidate
        .shunt_state
        .iter()
        .map(|(&b, &u)| (b, u >= 0.5))
        .collect())
}

/// Run `f` on each direction of a `Both` problem and keep the better result;
/// single-direction problems pass straight through.
fn split_best(
    problem: &RopfProblem,
    fix: &Fixings,
    f: impl Fn(&RopfProblem, &Fixings) -> NlpResult,
) -> NlpResult {
    let parts = problem.split_directions();
    if parts.len() == 1 {
        return f(&parts[0], fix);
    }
    parts
        .iter()
        .map(|p| f(p, fix))
        .reduce(better)
        .expect("at least one direction")
}
