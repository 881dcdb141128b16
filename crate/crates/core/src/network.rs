//! Network model and the reactive OPF problem: variables, constraint
//! evaluation in the original complex voltage space, the three optional
//! constraint sets and the optimality-gap formula.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// External bus identifier as it appears in the case file.
pub type BusId = usize;

/// Shunt element attached to a bus: consumes `(g - j b) |v|^2` when active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shunt {
    pub g: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Complex load (p.u.).
    pub load: Complex64,
    /// Lower bound on voltage magnitude (p.u.).
    pub vmin: f64,
    /// Upper bound on voltage magnitude (p.u.).
    pub vmax: f64,
    pub shunt: Option<Shunt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    /// Linear cost per unit of active generation (p.u. basis).
    pub cost: f64,
    /// Constant cost term.
    pub cost0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    /// Series admittance 1/(r + jx) (p.u.).
    pub admittance: Complex64,
    /// Charging susceptance per branch end (p.u.).
    pub charging: f64,
    /// Transformer ratio at the origin end; 1.0 for plain lines.
    pub ratio: f64,
    /// Phase shift in radians.
    pub shift: f64,
    /// Current magnitude limit (p.u.); `f64::INFINITY` when unconstrained.
    pub imax: f64,
}

/// A validated transmission network in per-unit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub buses: BTreeMap<BusId, Bus>,
    pub generators: BTreeMap<BusId, Generator>,
    pub branches: Vec<Branch>,
}

impl Network {
    /// Buses carrying a shunt element, in ascending id order.
    pub fn shunt_buses(&self) -> Vec<BusId> {
        self.buses
            .iter()
            .filter(|(_, b)| b.shunt.is_some())
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Bus ids in ascending order; the dense index used by solvers.
    pub fn bus_order(&self) -> Vec<BusId> {
        self.buses.keys().copied().collect()
    }

    /// Total real load (p.u.).
    pub fn total_real_load(&self) -> f64 {
        self.buses.values().map(|b| b.load.re).sum()
    }
}

/// Redispatch direction for the generation-plan variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Both,
}

/// One of the three optional constraint sets of the ROPF problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    /// At most `k` shunts active.
    MaxKShunts { k: usize },
    /// At most `k` shunts flipped with respect to the initial state.
    MaxKMoves { k: usize, initial: BTreeMap<BusId, bool> },
    /// Active generation coupled to a plan by a single scalar per direction.
    GenMoves { plan: BTreeMap<BusId, f64>, direction: Direction },
}

impl Variant {
    pub fn cardinality(&self) -> Option<usize> {
        match self {
            Variant::MaxKShunts { k } | Variant::MaxKMoves { k, .. } => Some(*k),
            Variant::GenMoves { .. } => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("initial shunt state must be defined exactly on the shunt buses")]
    InitialStateMismatch,
    #[error("generation plan must be defined exactly on the generator buses")]
    PlanMismatch,
    #[error("plan value {value} at bus {bus} outside [{lo}, {hi}]")]
    PlanOutOfBounds { bus: BusId, value: f64, lo: f64, hi: f64 },
    #[error("candidate is missing {0} required by the variant")]
    MissingVariable(&'static str),
    #[error("lambda {0} outside its admissible range")]
    LambdaOutOfRange(f64),
    #[error("candidate voltage missing at bus {0}")]
    MissingVoltage(BusId),
    #[error("candidate shunt state must be defined exactly on the shunt buses")]
    ShuntStateMismatch,
}

/// A ROPF instance: a network plus one optional constraint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RopfProblem {
    pub net: Network,
    pub variant: Variant,
}

impl RopfProblem {
    pub fn new(net: Network, variant: Variant) -> Result<Self, ModelError> {
        match &variant {
            Variant::MaxKShunts { .. } => {}
            Variant::MaxKMoves { initial, .. } => {
                let shunts = net.shunt_buses();
                if initial.len() != shunts.len() || !shunts.iter().all(|b| initial.contains_key(b)) {
                    return Err(ModelError::InitialStateMismatch);
                }
            }
            Variant::GenMoves { plan, .. } => {
                if plan.len() != net.generators.len()
                    || !net.generators.keys().all(|b| plan.contains_key(b))
                {
                    return Err(ModelError::PlanMismatch);
                }
                for (&bus, &p0) in plan {
                    let g = &net.generators[&bus];
                    if p0 < g.pmin - 1e-12 || p0 > g.pmax + 1e-12 {
                        return Err(ModelError::PlanOutOfBounds {
                            bus,
                            value: p0,
                            lo: g.pmin,
                            hi: g.pmax,
                        });
                    }
                }
            }
        }
        Ok(Self { net, variant })
    }

    /// Expand `direction: Both` into the two single-direction subproblems.
    /// Other variants (and fixed directions) come back unchanged.
    pub fn split_directions(&self) -> Vec<RopfProblem> {
        match &self.variant {
            Variant::GenMoves { plan, direction: Direction::Both } => [Direction::Down, Direction::Up]
                .into_iter()
                .map(|direction| RopfProblem {
                    net: self.net.clone(),
                    variant: Variant::GenMoves { plan: plan.clone(), direction },
                })
                .collect(),
            _ => vec![self.clone()],
        }
    }
}

/// Redispatch state carried by a candidate under the generation-plan variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Redispatch {
    /// True when generation moves up (delta_plus = 1).
    pub up: bool,
    /// The scaling scalar: in [0.5, 1] upward, [0, 0.5] downward.
    pub lambda: f64,
}

/// A full assignment of the ROPF variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Complex voltage per bus.
    pub voltage: BTreeMap<BusId, Complex64>,
    /// Complex generation per generator bus; non-generator buses carry none
    /// (their generation is structurally zero).
    pub generation: BTreeMap<BusId, Complex64>,
    /// Shunt activation per shunt bus. Binary solves produce exact 0.0/1.0;
    /// continuous relaxations may hold fractional values.
    pub shunt_state: BTreeMap<BusId, f64>,
    pub redispatch: Option<Redispatch>,
    pub objective: f64,
}

impl Candidate {
    /// Recompute the linear generation cost of this assignment.
    pub fn cost(&self, net: &Network) -> f64 {
        net.generators
            .iter()
            .map(|(bus, g)| {
                let s = self.generation.get(bus).copied().unwrap_or_default();
                g.cost * s.re + g.cost0
            })
            .sum()
    }
}

/// Coefficients of the four branch-end quantities as functions of the
/// terminal voltages:
///
/// ```text
///   S_orig = orig_self * |v_o|^2        + orig_cross * v_o * conj(v_d)
///   S_dest = dest_cross * conj(v_o) * v_d + dest_self * |v_d|^2
///   i_orig = iorig_self * v_o           + iorig_cross * v_d
///   i_dest = idest_cross * v_o          + idest_self * v_d
/// ```
///
/// Both power expressions measure flow entering the branch at that end, so
/// `S_orig + S_dest` is the branch loss. The current coefficients are the
/// conjugates of the power coefficients, which makes
/// `S = v * conj(i)` hold exactly at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowCoeffs {
    pub orig_self: Complex64,
    pub orig_cross: Complex64,
    pub dest_cross: Complex64,
    pub dest_self: Complex64,
    pub iorig_self: Complex64,
    pub iorig_cross: Complex64,
    pub idest_cross: Complex64,
    pub idest_self: Complex64,
}

impl FlowCoeffs {
    pub fn s_orig(&self, vo: Complex64, vd: Complex64) -> Complex64 {
        self.orig_self * vo.norm_sqr() + self.orig_cross * vo * vd.conj()
    }

    pub fn s_dest(&self, vo: Complex64, vd: Complex64) -> Complex64 {
        self.dest_cross * vo.conj() * vd + self.dest_self * vd.norm_sqr()
    }

    pub fn i_orig(&self, vo: Complex64, vd: Complex64) -> Complex64 {
        self.iorig_self * vo + self.iorig_cross * vd
    }

    pub fn i_dest(&self, vo: Complex64, vd: Complex64) -> Complex64 {
        self.idest_cross * vo + self.idest_self * vd
    }
}

/// Closed-form power and current coefficients of a branch.
pub fn branch_flow_coeffs(branch: &Branch) -> FlowCoeffs {
    let y = branch.admittance;
    let jb = Complex64::new(0.0, branch.charging);
    let tau = branch.ratio;
    let rot = Complex64::from_polar(1.0, branch.shift);
    let orig_self = (y.conj() - jb) / (tau * tau);
    let orig_cross = -y.conj() * rot / tau;
    let dest_cross = -y.conj() * rot.conj() / tau;
    let dest_self = y.conj() - jb;
    let literal = std::env::var("ROPF_LITERAL_CURRENTS").is_ok();
    if literal {
        FlowCoeffs {
            orig_self,
            orig_cross,
            dest_cross,
            dest_self,
            iorig_self: (y.conj() + jb) / (tau * tau),
            iorig_cross: -y.conj() * rot.conj() / tau,
            idest_cross: -y.conj() * rot / tau,
            idest_self: y.conj() + jb,
        }
    } else {
        FlowCoeffs {
            orig_self,
            orig_cross,
            dest_cross,
            dest_self,
            iorig_self: orig_self.conj(),
            iorig_cross: orig_cross.conj(),
            idest_cross: dest_cross.conj(),
            idest_self: dest_self.conj(),
        }
    }
}

/// Active power prescribed by the generation-plan coupling.
///
/// `delta_minus`/`delta_plus` select the direction (exactly one must be set);
/// `lambda_minus in [0, 0.5]` sweeps from `pmin` to the plan value and
/// `lambda_plus in [0.5, 1]` sweeps from the plan value to `pmax`.
pub fn genmoves_active_power(
    gen: &Generator,
    plan: f64,
    lambda_minus: f64,
    lambda_plus: f64,
    delta_minus: bool,
    delta_plus: bool,
) -> Result<f64, ModelError> {
    if delta_minus == delta_plus {
        return Err(ModelError::MissingVariable("exactly one direction"));
    }
    if !(0.0..=0.5).contains(&lambda_minus) {
        return Err(ModelError::LambdaOutOfRange(lambda_minus));
    }
    if !(0.5..=1.0).contains(&lambda_plus) {
        return Err(ModelError::LambdaOutOfRange(lambda_plus));
    }
    let down = gen.pmin + 2.0 * (plan - gen.pmin) * lambda_minus;
    let up = 2.0 * plan - gen.pmax + 2.0 * (gen.pmax - plan) * lambda_plus;
    Ok(if delta_minus { down } else { up })
}

/// Worst violation per constraint family, plus the recomputed objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub power_balance: f64,
    pub p_bounds: f64,
    pub q_bounds: f64,
    pub v_bounds: f64,
    pub current: f64,
    pub variant: f64,
    pub objective: f64,
    pub feasible: bool,
}

impl FeasibilityReport {
    pub fn max_violation(&self) -> f64 {
        self.power_balance
            .max(self.p_bounds)
            .max(self.q_bounds)
            .max(self.v_bounds)
            .max(self.current)
            .max(self.variant)
    }
}

/// Evaluate a candidate against every constraint of the problem.
///
/// Voltage-bound and current-limit violations are measured in squared
/// magnitude units, matching the way the constraints enter the model.
pub fn evaluate_candidate(
    problem: &RopfProblem,
    cand: &Candidate,
    tol: f64,
) -> Result<FeasibilityReport, ModelError> {
    let net = &problem.net;
    for &bus in net.buses.keys() {
        if !cand.voltage.contains_key(&bus) {
            return Err(ModelError::MissingVoltage(bus));
        }
    }
    let shunts = net.shunt_buses();
    if cand.shunt_state.len() != shunts.len() || !shunts.iter().all(|b| cand.shunt_state.contains_key(b)) {
        return Err(ModelError::ShuntStateMismatch);
    }

    // Net branch-end flow drawn from each bus.
    let mut outflow: BTreeMap<BusId, Complex64> = net.buses.keys().map(|&b| (b, Complex64::default())).collect();
    let mut current = 0.0f64;
    for branch in &net.branches {
        let fc = branch_flow_coeffs(branch);
        let vo = cand.voltage[&branch.from];
        let vd = cand.voltage[&branch.to];
        *outflow.get_mut(&branch.from).unwrap() += fc.s_orig(vo, vd);
        *outflow.get_mut(&branch.to).unwrap() += fc.s_dest(vo, vd);
        if branch.imax.is_finite() {
            let lim = branch.imax * branch.imax;
            current = current
                .max(fc.i_orig(vo, vd).norm_sqr() - lim)
                .max(fc.i_dest(vo, vd).norm_sqr() - lim);
        }
    }

    let mut power_balance = 0.0f64;
    let mut v_bounds = 0.0f64;
    let mut p_bounds = 0.0f64;
    let mut q_bounds = 0.0f64;
    for (&bus, data) in &net.buses {
        let v2 = cand.voltage[&bus].norm_sqr();
        v_bounds = v_bounds.max(data.vmin * data.vmin - v2).max(v2 - data.vmax * data.vmax);
        let shunt_draw = match data.shunt {
            Some(sh) => Complex64::new(sh.g, -sh.b) * v2 * cand.shunt_state[&bus],
            None => Complex64::default(),
        };
        let gen = cand.generation.get(&bus).copied().unwrap_or_default();
        let residual = gen - data.load - shunt_draw - outflow[&bus];
        power_balance = power_balance.max(residual.re.abs()).max(residual.im.abs());
        if let Some(g) = net.generators.get(&bus) {
            p_bounds = p_bounds.max(g.pmin - gen.re).max(gen.re - g.pmax);
            q_bounds = q_bounds.max(g.qmin - gen.im).max(gen.im - g.qmax);
        }
    }

    let variant = variant_violation(problem, cand)?;
    let objective = cand.cost(net);
    let max = power_balance.max(p_bounds).max(q_bounds).max(v_bounds).max(current).max(variant);
    Ok(FeasibilityReport {
        power_balance: power_balance.max(0.0),
        p_bounds: p_bounds.max(0.0),
        q_bounds: q_bounds.max(0.0),
        v_bounds: v_bounds.max(0.0),
        current: current.max(0.0),
        variant: variant.max(0.0),
        objective,
        feasible: max <= tol,
    })
}

fn variant_violation(problem: &RopfProblem, cand: &Candidate) -> Result<f64, ModelError> {
    match &problem.variant {
        Variant::MaxKShunts { k } => {
            let total: f64 = cand.shunt_state.values().sum();
            Ok((total - *k as f64).max(0.0))
        }
        Variant::MaxKMoves { k, initial } => {
            let moves: f64 = cand
                .shunt_state
                .iter()
                .map(|(bus, &u)| if initial[bus] { 1.0 - u } else { u })
                .sum();
            Ok((moves - *k as f64).max(0.0))
        }
        Variant::GenMoves { plan, direction } => {
            let rd = cand.redispatch.ok_or(ModelError::MissingVariable("redispatch"))?;
            match direction {
                Direction::Up if !rd.up => return Err(ModelError::MissingVariable("upward redispatch")),
                Direction::Down if rd.up => return Err(ModelError::MissingVariable("downward redispatch")),
                _ => {}
            }
            let (lm, lp) = if rd.up { (0.0, rd.lambda) } else { (rd.lambda, 0.5) };
            let mut worst: f64 = 0.0;
            for (bus, g) in &problem.net.generators {
                let target = genmoves_active_power(g, plan[bus], lm, lp, !rd.up, rd.up)?;
                let actual = cand.generation.get(bus).copied().unwrap_or_default().re;
                worst = worst.max((actual - target).abs());
            }
            Ok(worst)
        }
    }
}

/// Relative optimality gap `(ub - lb) / ub`; `None` when the upper bound is
/// not finite (rendered as "-").
pub fn relative_gap(ub: f64, lb: f64) -> Option<f64> {
    if !ub.is_finite() || ub == 0.0 {
        return None;
    }
    Some((ub - lb) / ub)
}

/// Gap threshold below which an instance counts as solved.
pub const SOLVED_GAP: f64 = 1e-4;

#[cfg(test)]
mod tests {
    use super::*;

    fn branch(y: Complex64, b: f64, tau: f64, shift: f64) -> Branch {
        Branch { from: 1, to: 2, admittance: y, charging: b, ratio: tau, shift, imax: f64::INFINITY }
    }

    #[test]
    fn plain_line_power_coefficients() {
        let y = Complex64::new(2.0, -5.0);
        let fc = branch_flow_coeffs(&branch(y, 0.0, 1.0, 0.0));
        assert_eq!(fc.orig_self, y.conj());
        assert_eq!(fc.orig_cross, -y.conj());
    }

    #[test]
    fn equal_voltages_yield_nonnegative_loss() {
        let y = Complex64::new(1.5, -4.0);
        let fc = branch_flow_coeffs(&branch(y, 0.0, 1.0, 0.0));
        let v = Complex64::new(1.02, -0.3);
        let loss = fc.s_orig(v, v) + fc.s_dest(v, v);
        assert!(loss.re >= -1e-12, "loss {loss}");
        assert!(loss.im.abs() < 1e-12);
    }

    #[test]
    fn voltage_times_conjugate_current_identity() {
        let cases = [
            (Complex64::new(3.0, -9.0), 0.04, 1.0, 0.0),
            (Complex64::new(1.0, -3.5), 0.02, 0.97, 0.1),
            (Complex64::new(0.4, -1.1), 0.0, 1.05, -0.21),
        ];
        let volts = [
            (Complex64::new(1.01, 0.1), Complex64::new(0.98, -0.05)),
            (Complex64::new(0.95, -0.2), Complex64::new(1.04, 0.17)),
        ];
        for (y, b, tau, shift) in cases {
            let fc = branch_flow_coeffs(&branch(y, b, tau, shift));
            for (vo, vd) in volts {
                let so = fc.s_orig(vo, vd);
                let sd = fc.s_dest(vo, vd);
                assert!((so - vo * fc.i_orig(vo, vd).conj()).norm() < 1e-12);
                assert!((sd - vd * fc.i_dest(vo, vd).conj()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn genmoves_substitutions() {
        let g = Generator { pmin: 0.5, pmax: 3.0, qmin: -1.0, qmax: 1.0, cost: 10.0, cost0: 0.0 };
        let p0 = 1.25;
        assert!((genmoves_active_power(&g, p0, 0.5, 0.5, true, false).unwrap() - p0).abs() < 1e-15);
        assert!((genmoves_active_power(&g, p0, 0.0, 1.0, false, true).unwrap() - g.pmax).abs() < 1e-15);
        assert!((genmoves_active_power(&g, p0, 0.0, 0.5, true, false).unwrap() - g.pmin).abs() < 1e-15);
        assert!(genmoves_active_power(&g, p0, 0.7, 0.5, true, false).is_err());
    }

    #[test]
    fn gap_examples() {
        assert_eq!(relative_gap(5371.50, 5371.50), Some(0.0));
        let g = relative_gap(86301.50, 86298.49).unwrap();
        assert!((g - 3.49e-5).abs() < 2e-7, "{g}");
        assert!(g <= SOLVED_GAP);
        let g = relative_gap(91446.78, 90967.34).unwrap();
        assert!((g - 5.24e-3).abs() < 1e-5, "{g}");
        assert_eq!(relative_gap(f64::INFINITY, 1.0), None);
    }
}
