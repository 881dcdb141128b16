//! Assembly of the clique-decomposed semidefinite relaxation: the lifted
//! voltage matrix in rectangular (real/imaginary) coordinates, McCormick
//! envelopes for the shunt-activation products, the variant constraint, and
//! partial binary fixings coming from branch-and-bound nodes.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::chordal::NetworkDecomposition;
use crate::conic::{solve, ConicProgram, ConicSolution, ConicStatus, SolverOptions, SQRT2};
use crate::network::{branch_flow_coeffs, BusId, Direction, RopfProblem, Variant};

/// Partial assignment of the binary variables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Fixings {
    pub shunts: BTreeMap<BusId, bool>,
    /// Redispatch direction when the problem carries `Direction::Both`.
    pub delta_up: Option<bool>,
}

impl Fixings {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_shunt(mut self, bus: BusId, on: bool) -> Self {
        self.shunts.insert(bus, on);
        self
    }

    pub fn count_on(&self) -> usize {
        self.shunts.values().filter(|&&v| v).count()
    }
}

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("bus {0} carries no shunt and cannot be fixed")]
    FixedNonShunt(BusId),
    #[error("generation-plan problems need a resolved direction")]
    UnresolvedDirection,
    #[error("decomposition does not cover bus pair ({0}, {1})")]
    MissingPair(usize, usize),
}

/// One affine inequality `a_xi * xi + a_u * u + a_v * V <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McPlane {
    pub a_xi: f64,
    pub a_u: f64,
    pub a_v: f64,
    pub rhs: f64,
}

impl McPlane {
    pub fn holds(&self, xi: f64, u: f64, v: f64, tol: f64) -> bool {
        self.a_xi * xi + self.a_u * u + self.a_v * v <= self.rhs + tol
    }
}

/// The four McCormick planes for `xi = u * V` over `u in [0, 1]`,
/// `V in [vmin^2, vmax^2]`.
pub fn mccormick(vmin2: f64, vmax2: f64) -> [McPlane; 4] {
    [
        // xi <= V + vmin^2 (u - 1)
        McPlane { a_xi: 1.0, a_u: -vmin2, a_v: -1.0, rhs: -vmin2 },
        // xi <= vmax^2 u
        McPlane { a_xi: 1.0, a_u: -vmax2, a_v: 0.0, rhs: 0.0 },
        // xi >= vmax^2 (u - 1) + V
        McPlane { a_xi: -1.0, a_u: vmax2, a_v: 1.0, rhs: vmax2 },
        // xi >= vmin^2 u
        McPlane { a_xi: -1.0, a_u: vmin2, a_v: 0.0, rhs: 0.0 },
    ]
}

/// Row labels for introspection and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowKind {
    BalanceRe(BusId),
    BalanceIm(BusId),
    VUpper(BusId),
    VLower(BusId),
    PMax(BusId),
    PMin(BusId),
    QMax(BusId),
    QMin(BusId),
    PlanCoupling(BusId),
    LambdaUpper,
    LambdaLower,
    CurrentOrig(usize),
    CurrentDest(usize),
    McCormick(BusId, u8),
    ShuntCap(BusId),
    Cardinality,
    Linking(usize),
}

/// Assembled relaxation plus the index maps needed to read the solution back.
#[derive(Debug, Clone)]
pub struct SdpInstance {
    pub program: ConicProgram,
    /// Constant cost term added to the conic objective value.
    pub objective_offset: f64,
    pub row_kinds: Vec<RowKind>,
    /// True for rows carrying a slack (inequalities): eligible for the
    /// feasibility-margin retry in [`solve_relaxation`].
    inequality_rows: Vec<bool>,
    free_shunts: Vec<BusId>,
    fixed_shunts: BTreeMap<BusId, bool>,
    xi_col: BTreeMap<BusId, usize>,
    u_col: BTreeMap<BusId, usize>,
    p_col: BTreeMap<BusId, usize>,
    q_col: BTreeMap<BusId, usize>,
    lambda_col: Option<usize>,
    /// Per bus: owner block and the local indices of its (Re, Im) diagonal.
    vdiag: BTreeMap<BusId, (usize, usize, usize)>,
}

impl SdpInstance {
    pub fn mccormick_row_count(&self) -> usize {
        self.row_kinds.iter().filter(|k| matches!(k, RowKind::McCormick(..))).count()
    }

    pub fn linking_row_count(&self) -> usize {
        self.row_kinds.iter().filter(|k| matches!(k, RowKind::Linking(_))).count()
    }

    pub fn free_shunts(&self) -> &[BusId] {
        &self.free_shunts
    }

    /// Lifted diagonal `V_ss` of a bus in a solution vector.
    pub fn v_diag(&self, sol_x: &[f64], bus: BusId) -> f64 {
        let (block, re, im) = self.vdiag[&bus];
        let re_col = self.program.svec_col(block, re, re);
        let im_col = self.program.svec_col(block, im, im);
        sol_x[re_col] + sol_x[im_col]
    }

    pub fn shunt_product(&self, sol_x: &[f64], bus: BusId) -> Option<f64> {
        self.xi_col.get(&bus).map(|&c| sol_x[c])
    }

    pub fn generation(&self, sol_x: &[f64], bus: BusId) -> Option<(f64, f64)> {
        match (self.p_col.get(&bus), self.q_col.get(&bus)) {
            (Some(&p), Some(&q)) => Some((sol_x[p], sol_x[q])),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RelaxStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// What branch-and-bound consumes from one relaxation solve.
#[derive(Debug, Clone, Serialize)]
pub struct RelaxationPoint {
    pub status: RelaxStatus,
    pub lower_bound: f64,
    /// `xi* / V_ss*` per free shunt, clamped to [0, 1]; fixed shunts carry
    /// their constant.
    pub shunt_activation: BTreeMap<BusId, f64>,
    pub v_diag: BTreeMap<BusId, f64>,
}

struct Builder<'a> {
    nd: &'a NetworkDecomposition,
    rows: Vec<RowKind>,
    rhs: Vec<f64>,
    /// Scalar coefficients: (row, scalar column, value).
    scalar_trip: Vec<(usize, usize, f64)>,
    /// Lifted-entry coefficients: (row, block, local i, local j, value on X_ij).
    block_trip: Vec<(usize, usize, usize, usize, f64)>,
    slack_of_row: Vec<Option<usize>>,
    n_slack: usize,
}

impl<'a> Builder<'a> {
    fn new(nd: &'a NetworkDecomposition) -> Self {
        Self {
            nd,
            rows: Vec::new(),
            rhs: Vec::new(),
            scalar_trip: Vec::new(),
            block_trip: Vec::new(),
            slack_of_row: Vec::new(),
            n_slack: 0,
        }
    }

    /// Open an equality row; returns its index.
    fn equality(&mut self, kind: RowKind, rhs: f64) -> usize {
        self.rows.push(kind);
        self.rhs.push(rhs);
        self.slack_of_row.push(None);
        self.rows.len() - 1
    }

    /// Open a `<=` row: an equality with a fresh slack.
    fn inequality(&mut self, kind: RowKind, rhs: f64) -> usize {
        let r = self.equality(kind, rhs);
        self.slack_of_row[r] = Some(self.n_slack);
        self.n_slack += 1;
        r
    }

    fn scalar(&mut self, row: usize, col: usize, val: f64) {
        if val != 0.0 {
            self.scalar_trip.push((row, col, val));
        }
    }

    /// Coefficient on the lifted entry `X_ij` of the designated owner block
    /// for the (dense) bus pair behind `(i, j)`; `i`, `j` are lifted
    /// coordinates (2*bus or 2*bus+1).
    fn lifted(&mut self, row: usize, bus_a: usize, bus_b: usize, i: usize, j: usize, val: f64) {
        if val == 0.0 {
            return;
        }
        let block = self.nd.owner_clique(bus_a, bus_b).expect("covered pair");
        let verts = &self.nd.deco.cliques[block];
        let li = verts.binary_search(&i).expect("coordinate in owner clique");
        let lj = verts.binary_search(&j).expect("coordinate in owner clique");
        let (li, lj) = if li >= lj { (li, lj) } else { (lj, li) };
        self.block_trip.push((row, block, li, lj, val));
    }

    /// Re(v_a conj(v_b)) = X[2a,2b] + X[2a+1,2b+1].
    fn re_v(&mut self, row: usize, a: usize, b: usize, val: f64) {
        self.lifted(row, a, b, 2 * a, 2 * b, val);
        self.lifted(row, a, b, 2 * a + 1, 2 * b + 1, val);
    }

    /// Im(v_a conj(v_b)) = X[2a+1,2b] - X[2a,2b+1]; identically zero for a = b.
    fn im_v(&mut self, row: usize, a: usize, b: usize, val: f64) {
        if a == b {
            return;
        }
        self.lifted(row, a, b, 2 * a + 1, 2 * b, val);
        self.lifted(row, a, b, 2 * a, 2 * b + 1, -val);
    }

    /// Coefficients of `coeff * v_a conj(v_b)` on the (re_row, im_row) pair.
    fn complex_term(
        &mut self,
        re_row: usize,
        im_row: usize,
        a: usize,
        b: usize,
        coeff: num_complex::Complex64,
    ) {
        self.re_v(re_row, a, b, coeff.re);
        self.im_v(re_row, a, b, -coeff.im);
        self.re_v(im_row, a, b, coeff.im);
        self.im_v(im_row, a, b, coeff.re);
    }
}

/// Options for instance assembly; the default drops constraint rows made
/// redundant by constant substitution.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    /// Keep McCormick rows of fixed shunts (they become redundant).
    pub keep_fixed_mccormick: bool,
}

pub fn build_sdp(
    problem: &RopfProblem,
    nd: &NetworkDecomposition,
    fix: &Fixings,
) -> Result<SdpInstance, SdpError> {
    build_sdp_with(problem, nd, fix, &BuildOptions::default())
}

pub fn build_sdp_with(
    problem: &RopfProblem,
    nd: &NetworkDecomposition,
    fix: &Fixings,
    opts: &BuildOptions,
) -> Result<SdpInstance, SdpError> {
    let net = &problem.net;
    for bus in fix.shunts.keys() {
        if net.buses.get(bus).and_then(|b| b.shunt.as_ref()).is_none() {
            return Err(SdpError::FixedNonShunt(*bus));
        }
    }
    let direction_up = match &problem.variant {
        Variant::GenMoves { direction, .. } => match (direction, fix.delta_up) {
            (Direction::Up, _) => Some(true),
            (Direction::Down, _) => Some(false),
            (Direction::Both, Some(up)) => Some(up),
            (Direction::Both, None) => return Err(SdpError::UnresolvedDirection),
        },
        _ => None,
    };

    let shunt_buses = net.shunt_buses();
    let free_shunts: Vec<BusId> =
        shunt_buses.iter().copied().filter(|b| !fix.shunts.contains_key(b)).collect();

    // Free scalar columns: P, Q per generator, xi per free shunt, lambda.
    let mut p_col = BTreeMap::new();
    let mut q_col = BTreeMap::new();
    let mut xi_col = BTreeMap::new();
    let mut next = 0usize;
    for &g in net.generators.keys() {
        p_col.insert(g, next);
        q_col.insert(g, next + 1);
        next += 2;
    }
    for &s in &free_shunts {
        xi_col.insert(s, next);
        next += 1;
    }
    let lambda_col = direction_up.map(|_| {
        let c = next;
        next += 1;
        c
    });
    let n_free = next;

    // Nonnegative columns: u per free shunt first, slacks appended later.
    let u_col: BTreeMap<BusId, usize> =
        free_shunts.iter().enumerate().map(|(i, &s)| (s, n_free + i)).collect();
    let n_u = free_shunts.len();

    let mut b = Builder::new(nd);
    let pos = &nd.bus_pos;

    // Power balance; branch terms are attached bus-by-bus below.
    let mut balance_rows: BTreeMap<BusId, (usize, usize)> = BTreeMap::new();
    for (&bus, data) in &net.buses {
        let re = b.equality(RowKind::BalanceRe(bus), data.load.re);
        let im = b.equality(RowKind::BalanceIm(bus), data.load.im);
        balance_rows.insert(bus, (re, im));
        let i = pos[&bus];
        if net.generators.contains_key(&bus) {
            b.scalar(re, p_col[&bus], 1.0);
            b.scalar(im, q_col[&bus], 1.0);
        }
        if let Some(sh) = data.shunt {
            // -(g - jb) xi on the left-hand side.
            match fix.shunts.get(&bus) {
                None => {
                    b.scalar(re, xi_col[&bus], -sh.g);
                    b.scalar(im, xi_col[&bus], sh.b);
                }
                Some(true) => {
                    // xi == V_ss: fold onto the lifted diagonal.
                    b.re_v(re, i, i, -sh.g);
                    b.re_v(im, i, i, sh.b);
                }
                Some(false) => {}
            }
        }
    }
    for branch in &net.branches {
        let fc = branch_flow_coeffs(branch);
        let (o, d) = (pos[&branch.from], pos[&branch.to]);
        let (o_re, o_im) = balance_rows[&branch.from];
        let (d_re, d_im) = balance_rows[&branch.to];
        // Origin bus: -(orig_self V_oo + orig_cross V_od).
        b.complex_term(o_re, o_im, o, o, -fc.orig_self);
        b.complex_term(o_re, o_im, o, d, -fc.orig_cross);
        // Destination bus: -(dest_cross conj(V_od) + dest_self V_dd), and
        // conj(V_od) is exactly V_do.
        b.complex_term(d_re, d_im, d, o, -fc.dest_cross);
        b.complex_term(d_re, d_im, d, d, -fc.dest_self);
    }

    // Voltage-magnitude bounds on the lifted diagonal.
    for (&bus, data) in &net.buses {
        let i = pos[&bus];
        let up = b.inequality(RowKind::VUpper(bus), data.vmax * data.vmax);
        b.re_v(up, i, i, 1.0);
        let lo = b.inequality(RowKind::VLower(bus), -data.vmin * data.vmin);
        b.re_v(lo, i, i, -1.0);
    }

    // Generator bounds; under the generation-plan coupling the active-power
    // box is redundant and replaced by the equality in lambda.
    for (&bus, gen) in &net.generators {
        match (&problem.variant, direction_up) {
            (Variant::GenMoves { plan, .. }, Some(up)) => {
                let p0 = plan[&bus];
                let (a, slope) = if up {
                    (2.0 * p0 - gen.pmax, 2.0 * (gen.pmax - p0))
                } else {
                    (gen.pmin, 2.0 * (p0 - gen.pmin))
                };
                let r = b.equality(RowKind::PlanCoupling(bus), a);
                b.scalar(r, p_col[&bus], 1.0);
                b.scalar(r, lambda_col.unwrap(), -slope);
            }
            _ => {
                let up_row = b.inequality(RowKind::PMax(bus), gen.pmax);
                b.scalar(up_row, p_col[&bus], 1.0);
                let lo_row = b.inequality(RowKind::PMin(bus), -gen.pmin);
                b.scalar(lo_row, p_col[&bus], -1.0);
            }
        }
        let qu = b.inequality(RowKind::QMax(bus), gen.qmax);
        b.scalar(qu, q_col[&bus], 1.0);
        let ql = b.inequality(RowKind::QMin(bus), -gen.qmin);
        b.scalar(ql, q_col[&bus], -1.0);
    }
    if let Some(lc) = lambda_col {
        let (lo, hi) = if direction_up.unwrap() { (0.5, 1.0) } else { (0.0, 0.5) };
        let r = b.inequality(RowKind::LambdaUpper, hi);
        b.scalar(r, lc, 1.0);
        let r = b.inequality(RowKind::LambdaLower, -lo);
        b.scalar(r, lc, -1.0);
    }

    // Current-magnitude limits; unconstrained branches are dropped.
    for (l, branch) in net.branches.iter().enumerate() {
        if !branch.imax.is_finite() {
            continue;
        }
        let fc = branch_flow_coeffs(branch);
        let (o, d) = (pos[&branch.from], pos[&branch.to]);
        let lim = branch.imax * branch.imax;
        for (kind, c, dd) in [
            (RowKind::CurrentOrig(l), fc.iorig_self, fc.iorig_cross),
            (RowKind::CurrentDest(l), fc.idest_cross, fc.idest_self),
        ] {
            let r = b.inequality(kind, lim);
            b.re_v(r, o, o, c.norm_sqr());
            b.re_v(r, d, d, dd.norm_sqr());
            let cross = c * dd.conj();
            // 2 Re(cross * V_od)
            b.re_v(r, o, d, 2.0 * cross.re);
            b.im_v(r, o, d, -2.0 * cross.im);
        }
    }

    // McCormick envelopes tying xi to u * V_ss.
    for (&bus, data) in &net.buses {
        if data.shunt.is_none() {
            continue;
        }
        let i = pos[&bus];
        let planes = mccormick(data.vmin * data.vmin, data.vmax * data.vmax);
        match fix.shunts.get(&bus) {
            None => {
                for (idx, pl) in planes.iter().enumerate() {
                    let r = b.inequality(RowKind::McCormick(bus, idx as u8), pl.rhs);
                    b.scalar(r, xi_col[&bus], pl.a_xi);
                    b.scalar(r, u_col[&bus], pl.a_u);
                    b.re_v(r, i, i, pl.a_v);
                }
            }
            Some(&on) if opts.keep_fixed_mccormick => {
                // Constant-substituted planes: xi -> u V_ss with u constant.
                let uc = if on { 1.0 } else { 0.0 };
                for (idx, pl) in planes.iter().enumerate() {
                    let r = b.inequality(RowKind::McCormick(bus, idx as u8), pl.rhs - pl.a_u * uc);
                    b.re_v(r, i, i, pl.a_v + pl.a_xi * uc);
                }
            }
            Some(_) => {}
        }
    }

    // u in [0, 1]: nonnegativity is native, the cap needs a row.
    for &s in &free_shunts {
        let r = b.inequality(RowKind::ShuntCap(s), 1.0);
        b.scalar(r, u_col[&s], 1.0);
    }

    // Variant constraint.
    match &problem.variant {
        Variant::MaxKShunts { k } => {
            let budget = *k as f64 - fix.count_on() as f64;
            let r = b.inequality(RowKind::Cardinality, budget);
            for &s in &free_shunts {
                b.scalar(r, u_col[&s], 1.0);
            }
        }
        Variant::MaxKMoves { k, initial } => {
            let fixed_moves = fix
                .shunts
                .iter()
                .filter(|(bus, &on)| initial[*bus] != on)
                .count();
            let ones_free = free_shunts.iter().filter(|s| initial[s]).count();
            let budget = *k as f64 - fixed_moves as f64 - ones_free as f64;
            let r = b.inequality(RowKind::Cardinality, budget);
            for &s in &free_shunts {
                b.scalar(r, u_col[&s], if initial[&s] { -1.0 } else { 1.0 });
            }
        }
        Variant::GenMoves { .. } => {}
    }

    // Linking equalities over shared lifted entries.
    for (li, link) in nd.deco.links.iter().enumerate() {
        let child = &nd.deco.cliques[link.child];
        let parent = &nd.deco.cliques[link.parent];
        for (a_idx, &va) in link.shared.iter().enumerate() {
            for &vb in &link.shared[a_idx..] {
                let r = b.equality(RowKind::Linking(li), 0.0);
                let (ci, cj) = (
                    child.binary_search(&va).unwrap(),
                    child.binary_search(&vb).unwrap(),
                );
                let (pi, pj) = (
                    parent.binary_search(&va).unwrap(),
                    parent.binary_search(&vb).unwrap(),
                );
                b.block_trip.push((r, link.child, ci.max(cj), ci.min(cj), 1.0));
                b.block_trip.push((r, link.parent, pi.max(pj), pi.min(pj), -1.0));
            }
        }
    }

    // Freeze the layout: scalars, slacks, then svec blocks.
    let n_nonneg = n_u + b.n_slack;
    let psd_dims: Vec<usize> = nd.deco.cliques.iter().map(Vec::len).collect();
    let mut prog = ConicProgram {
        n_free,
        n_nonneg,
        psd_dims,
        a_triplets: Vec::new(),
        rhs: b.rhs.clone(),
        objective: Vec::new(),
    };
    let mut triplets = b.scalar_trip.clone();
    for (row, slack) in b.slack_of_row.iter().enumerate() {
        if let Some(s) = slack {
            triplets.push((row, n_free + n_u + s, 1.0));
        }
    }
    for &(row, block, i, j, val) in &b.block_trip {
        let col = prog.svec_col(block, i, j);
        let coeff = if i == j { val } else { val / SQRT2 };
        triplets.push((row, col, coeff));
    }
    prog.a_triplets = triplets;
    let mut objective = vec![0.0; prog.n_cols()];
    let mut offset = 0.0;
    for (&bus, gen) in &net.generators {
        objective[p_col[&bus]] = gen.cost;
        offset += gen.cost0;
    }
    prog.objective = objective;

    let mut vdiag = BTreeMap::new();
    for (&bus, _) in &net.buses {
        let i = pos[&bus];
        let block = nd.owner_clique(i, i).ok_or(SdpError::MissingPair(i, i))?;
        let verts = &nd.deco.cliques[block];
        let re = verts.binary_search(&(2 * i)).unwrap();
        let im = verts.binary_search(&(2 * i + 1)).unwrap();
        vdiag.insert(bus, (block, re, im));
    }

    let inequality_rows = b.slack_of_row.iter().map(Option::is_some).collect();
    Ok(SdpInstance {
        program: prog,
        objective_offset: offset,
        row_kinds: b.rows,
        inequality_rows,
        free_shunts,
        fixed_shunts: fix.shunts.clone(),
        xi_col,
        u_col,
        p_col,
        q_col,
        lambda_col,
        vdiag,
    })
}

/// Read the branch-and-bound inputs out of a conic solution.
pub fn extract_relaxation_point(inst: &SdpInstance, sol: &ConicSolution) -> RelaxationPoint {
    match sol.status {
        ConicStatus::Optimal => {}
        ConicStatus::PrimalInfeasible => {
            return RelaxationPoint {
                status: RelaxStatus::Infeasible,
                lower_bound: f64::INFINITY,
                shunt_activation: BTreeMap::new(),
                v_diag: BTreeMap::new(),
            }
        }
        _ => {
            return RelaxationPoint {
                status: RelaxStatus::NumericalFailure,
                lower_bound: f64::NEG_INFINITY,
                shunt_activation: BTreeMap::new(),
                v_diag: BTreeMap::new(),
            }
        }
    }
    extract_relaxation_point_forced(inst, sol)
}

/// Extraction that trusts the solution vector regardless of the reported
/// status; used for certified-dual-bound fallbacks.
fn extract_relaxation_point_forced(inst: &SdpInstance, sol: &ConicSolution) -> RelaxationPoint {
    let mut activation = BTreeMap::new();
    let mut v_diag = BTreeMap::new();
    for (&bus, _) in &inst.vdiag {
        v_diag.insert(bus, inst.v_diag(&sol.x, bus));
    }
    for &bus in &inst.free_shunts {
        let vss = v_diag[&bus];
        if vss <= 0.0 {
            return RelaxationPoint {
                status: RelaxStatus::NumericalFailure,
                lower_bound: f64::NEG_INFINITY,
                shunt_activation: BTreeMap::new(),
                v_diag,
            };
        }
        let u = (sol.x[inst.xi_col[&bus]] / vss).clamp(0.0, 1.0);
        activation.insert(bus, u);
    }
    for (&bus, &on) in &inst.fixed_shunts {
        activation.insert(bus, if on { 1.0 } else { 0.0 });
    }
    RelaxationPoint {
        status: RelaxStatus::Optimal,
        lower_bound: sol.dual_objective + inst.objective_offset,
        shunt_activation: activation,
        v_diag,
    }
}

/// Build-and-solve with a feasibility-margin fallback. Thin-interior
/// instances (binding current limits) can defeat the interior-point method;
/// retrying with slightly inflated inequality right-hand sides restores an
/// interior, and because the dual feasible set only involves A and c, the
/// retried dual point still certifies a bound for the original instance via
/// `b'y`. The reported lower bound is always computed against the original
/// right-hand side.
pub fn solve_relaxation(
    inst: &SdpInstance,
    opts: &SolverOptions,
) -> (ConicSolution, RelaxationPoint) {
    let sol = solve(&inst.program, opts);
    let rp = extract_relaxation_point(inst, &sol);
    if matches!(rp.status, RelaxStatus::Optimal | RelaxStatus::Infeasible) {
        return (sol, rp);
    }
    // Strict-complementarity failures leave the primal short of full accuracy
    // while the dual side has long converged; the tracked certified dual
    // objective is still a valid bound, and the near-feasible primal is good
    // enough to steer branching.
    if let Some(bound) = sol.dual_bound {
        if !sol.x.is_empty() && sol.residuals.primal <= 1e-2 {
            let mut rp2 = extract_relaxation_point_forced(inst, &sol);
            rp2.lower_bound = bound + inst.objective_offset;
            log::info!(
                "relaxation stalled (primal residual {:.1e}); using certified dual bound {:.6}",
                sol.residuals.primal,
                rp2.lower_bound
            );
            return (sol, rp2);
        }
    }
    for eps in [1e-6, 1e-5, 1e-4, 1e-3] {
        let mut relaxed = inst.program.clone();
        for (i, ineq) in inst.inequality_rows.iter().enumerate() {
            if *ineq {
                relaxed.rhs[i] += eps * relaxed.rhs[i].abs().max(1e-3);
            }
        }
        let sol2 = solve(&relaxed, opts);
        if sol2.status == ConicStatus::Optimal {
            log::info!("relaxation solved with feasibility margin {eps:.0e}");
            let mut rp2 = extract_relaxation_point(inst, &sol2);
            let certified: f64 = inst
                .program
                .rhs
                .iter()
                .zip(&sol2.y)
                .map(|(b, y)| b * y)
                .sum();
            rp2.lower_bound = certified + inst.objective_offset;
            return (sol2, rp2);
        }
        if sol2.status == ConicStatus::PrimalInfeasible {
            // Infeasible even after relaxing: certainly infeasible.
            let rp2 = extract_relaxation_point(inst, &sol2);
            return (sol2, rp2);
        }
    }
    (sol, rp)
}

/// Export in the SDPA sparse format (free scalars split into differences of
/// nonnegatives, which SDPA's diagonal blocks require). The conic program is
/// written as the SDPA dual: `max <F0, Y>` with `<Fi, Y> = b_i`, `F0 = -C`,
/// so the SDPA optimum is the negated conic optimum.
pub fn export_sdpa(inst: &SdpInstance) -> String {
    use std::fmt::Write;
    let prog = &inst.program;
    let nf = prog.n_free;
    let diag_size = prog.n_nonneg + 2 * nf;
    let mut out = String::new();
    let m = prog.n_rows();
    writeln!(out, "{m} = mDIM").unwrap();
    writeln!(out, "{} = nBLOCK", prog.psd_dims.len() + 1).unwrap();
    let mut blocks: Vec<String> = prog.psd_dims.iter().map(|d| d.to_string()).collect();
    blocks.push(format!("-{diag_size}"));
    writeln!(out, "({}) = bLOCKsTRUCT", blocks.join(", ")).unwrap();
    let rhs: Vec<String> = prog.rhs.iter().map(|v| format!("{v:.17e}")).collect();
    writeln!(out, "{}", rhs.join(" ")).unwrap();

    // entry writer: matno (0 = F0), block, i, j (1-based upper triangle)
    let mut emit = |matno: usize, col: usize, val: f64, out: &mut String| {
        if val == 0.0 {
            return;
        }
        if col < nf {
            let d = prog.psd_dims.len() + 1;
            let i = prog.n_nonneg + 2 * col + 1;
            writeln!(out, "{matno} {d} {i} {i} {val:.17e}").unwrap();
            writeln!(out, "{matno} {d} {} {} {:.17e}", i + 1, i + 1, -val).unwrap();
        } else if col < nf + prog.n_nonneg {
            let d = prog.psd_dims.len() + 1;
            let i = col - nf + 1;
            writeln!(out, "{matno} {d} {i} {i} {val:.17e}").unwrap();
        } else {
            let mut k = 0;
            while prog.block_offset(k) + crate::conic::svec_len(prog.psd_dims[k]) <= col {
                k += 1;
            }
            let local = col - prog.block_offset(k);
            let (i, j) = local_unindex(prog.psd_dims[k], local);
            let v = if i == j { val } else { val / SQRT2 };
            writeln!(out, "{matno} {} {} {} {v:.17e}", k + 1, j + 1, i + 1).unwrap();
        }
    };
    for (col, &v) in prog.objective.iter().enumerate() {
        emit(0, col, -v, &mut out);
    }
    let mut sorted = prog.a_triplets.clone();
    sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    for (r, c, v) in sorted {
        emit(r + 1, c, v, &mut out);
    }
    out
}

fn local_unindex(d: usize, idx: usize) -> (usize, usize) {
    let mut j = 0;
    let mut off = 0;
    loop {
        let len = d - j;
        if idx < off + len {
            return (j + (idx - off), j);
        }
        off += len;
        j += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mccormick_collapses_at_binary_u() {
        let planes = mccormick(0.81, 1.21);
        // u = 1 forces xi = V
        for v in [0.81, 1.0, 1.21] {
            assert!(planes.iter().all(|p| p.holds(v, 1.0, v, 1e-12)));
            assert!(!planes.iter().all(|p| p.holds(v + 1e-6, 1.0, v, 1e-12)));
            assert!(!planes.iter().all(|p| p.holds(v - 1e-6, 1.0, v, 1e-12)));
        }
        // u = 0 forces xi = 0
        assert!(planes.iter().all(|p| p.holds(0.0, 0.0, 1.0, 1e-12)));
        assert!(!planes.iter().all(|p| p.holds(1e-6, 0.0, 1.0, 1e-12)));
    }

    #[test]
    fn mccormick_envelope_contains_product() {
        let (lo, hi) = (0.81, 1.21);
        let planes = mccormick(lo, hi);
        for ui in 0..=10 {
            for vi in 0..=10 {
                let u = ui as f64 / 10.0;
                let v = lo + (hi - lo) * vi as f64 / 10.0;
                assert!(planes.iter().all(|p| p.holds(u * v, u, v, 1e-12)), "u={u} v={v}");
            }
        }
    }
}
