//! Solver toolkit for reactive optimal power flow with switchable shunts:
//! MATPOWER parsing, clique-decomposed semidefinite lower bounds, local
//! nonlinear upper bounds, and an SDP-based branch-and-bound over the shunt
//! activation binaries.

pub mod acopf;
pub mod chordal;
pub mod conic;
pub mod matpower;
pub mod network;
pub mod sdp;

pub use network::{
    branch_flow_coeffs, evaluate_candidate, genmoves_active_power, relative_gap, Branch, Bus,
    BusId, Candidate, Direction, FeasibilityReport, FlowCoeffs, Generator, ModelError, Network,
    Redispatch, RopfProblem, Shunt, Variant, SOLVED_GAP,
};
