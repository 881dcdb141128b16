//! Smooth optimization model of the ROPF problem in rectangular voltage
//! coordinates with generation eliminated: every generator-bus injection is
//! an expression of the voltages (and shunt activations), so the only
//! equality constraints are the balances at non-generator buses plus the
//! generation-plan couplings.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::network::{branch_flow_coeffs, BusId, Candidate, Direction, Redispatch, RopfProblem, Variant};
use crate::sdp::Fixings;

/// Constant 4x4 Hessian of a homogeneous quadratic over the stacked terminal
/// coordinates `[e_o, f_o, e_d, f_d]`; the value is `z' H z / 2` and the
/// gradient `H z`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadForm(pub [[f64; 4]; 4]);

impl QuadForm {
    fn add(&mut self, i: usize, j: usize, v: f64) {
        self.0[i][j] += v;
        if i != j {
            self.0[j][i] += v;
        }
    }

    pub fn value(&self, z: &[f64; 4]) -> f64 {
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                acc += self.0[i][j] * z[i] * z[j];
            }
        }
        acc / 2.0
    }

    pub fn grad(&self, z: &[f64; 4]) -> [f64; 4] {
        let mut g = [0.0; 4];
        for i in 0..4 {
            for j in 0..4 {
                g[i] += self.0[i][j] * z[j];
            }
        }
        g
    }
}

/// Branch-level quadratic forms: Re/Im of the two end powers and the two
/// squared current magnitudes.
#[derive(Debug, Clone)]
pub struct BranchForms {
    pub o: usize,
    pub d: usize,
    pub s_orig_re: QuadForm,
    pub s_orig_im: QuadForm,
    pub s_dest_re: QuadForm,
    pub s_dest_im: QuadForm,
    pub i_orig_sq: QuadForm,
    pub i_dest_sq: QuadForm,
    pub imax: f64,
}

fn rank_one(g: [f64; 4]) -> QuadForm {
    let mut q = QuadForm::default();
    for i in 0..4 {
        for j in 0..4 {
            q.0[i][j] += 2.0 * g[i] * g[j];
        }
    }
    q
}

fn branch_forms(o: usize, d: usize, branch: &crate::network::Branch) -> BranchForms {
    let fc = branch_flow_coeffs(branch);
    // Power at the origin end: os |v_o|^2 + oc * v_o conj(v_d).
    let (os, oc) = (fc.orig_self, fc.orig_cross);
    let mut s_orig_re = QuadForm::default();
    s_orig_re.add(0, 0, 2.0 * os.re);
    s_orig_re.add(1, 1, 2.0 * os.re);
    s_orig_re.add(0, 2, oc.re);
    s_orig_re.add(1, 3, oc.re);
    s_orig_re.add(1, 2, -oc.im);
    s_orig_re.add(0, 3, oc.im);
    let mut s_orig_im = QuadForm::default();
    s_orig_im.add(0, 0, 2.0 * os.im);
    s_orig_im.add(1, 1, 2.0 * os.im);
    s_orig_im.add(0, 2, oc.im);
    s_orig_im.add(1, 3, oc.im);
    s_orig_im.add(1, 2, oc.re);
    s_orig_im.add(0, 3, -oc.re);
    // Power at the destination end: dc * conj(v_o) v_d + ds |v_d|^2.
    let (dc, ds) = (fc.dest_cross, fc.dest_self);
    let mut s_dest_re = QuadForm::default();
    s_dest_re.add(2, 2, 2.0 * ds.re);
    s_dest_re.add(3, 3, 2.0 * ds.re);
    s_dest_re.add(0, 2, dc.re);
    s_dest_re.add(1, 3, dc.re);
    s_dest_re.add(0, 3, -dc.im);
    s_dest_re.add(1, 2, dc.im);
    let mut s_dest_im = QuadForm::default();
    s_dest_im.add(2, 2, 2.0 * ds.im);
    s_dest_im.add(3, 3, 2.0 * ds.im);
    s_dest_im.add(0, 2, dc.im);
    s_dest_im.add(1, 3, dc.im);
    s_dest_im.add(0, 3, dc.re);
    s_dest_im.add(1, 2, -dc.re);
    // Squared current magnitudes from the two linear forms Re(i), Im(i).
    let (cs, cc) = (fc.iorig_self, fc.iorig_cross);
    let i_orig_sq = {
        let re = [cs.re, -cs.im, cc.re, -cc.im];
        let im = [cs.im, cs.re, cc.im, cc.re];
        let mut q = rank_one(re);
        let q2 = rank_one(im);
        for i in 0..4 {
            for j in 0..4 {
                q.0[i][j] += q2.0[i][j];
            }
        }
        q
    };
    let (tc, ts) = (fc.idest_cross, fc.idest_self);
    let i_dest_sq = {
        let re = [tc.re, -tc.im, ts.re, -ts.im];
        let im = [tc.im, tc.re, ts.im, ts.re];
        let mut q = rank_one(re);
        let q2 = rank_one(im);
        for i in 0..4 {
            for j in 0..4 {
                q.0[i][j] += q2.0[i][j];
            }
        }
        q
    };
    BranchForms {
        o,
        d,
        s_orig_re,
        s_orig_im,
        s_dest_re,
        s_dest_im,
        i_orig_sq,
        i_dest_sq,
        imax: branch.imax,
    }
}

/// Shunt data folded per dense bus: conductance/susceptance and how the
/// activation enters (fixed constant or variable index).
#[derive(Debug, Clone, Copy)]
enum ShuntState {
    Fixed(f64),
    Variable(usize),
}

#[derive(Debug, Clone, Copy)]
struct BusShunt {
    g: f64,
    b: f64,
    state: ShuntState,
}

/// Row description for the constraint vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EqKind {
    BalanceRe(usize),
    BalanceIm(usize),
    PlanCoupling(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IneqKind {
    VLower(usize),
    VUpper(usize),
    PMin(usize),
    PMax(usize),
    QMin(usize),
    QMax(usize),
    LambdaLower,
    LambdaUpper,
    CurrentOrig(usize),
    CurrentDest(usize),
    ShuntLower(usize),
    ShuntUpper(usize),
    Budget,
}

/// The assembled smooth problem. Variables are laid out as
/// `[e_0..e_{n-1}, f_0..f_{n-1}, u_free..., lambda?]`.
pub struct AcopfModel {
    pub problem: RopfProblem,
    pub bus_order: Vec<BusId>,
    pub n: usize,
    pub n_vars: usize,
    branches: Vec<BranchForms>,
    shunts: BTreeMap<usize, BusShunt>,
    /// Generator data in dense-bus terms: (dense bus, cost, pmin, pmax, qmin, qmax).
    gens: BTreeMap<usize, crate::network::Generator>,
    gen_buses: Vec<usize>,
    nongen_buses: Vec<usize>,
    free_shunt_buses: Vec<usize>,
    pub u_offset: usize,
    pub lambda_index: Option<usize>,
    /// Generation-plan coupling constants per dense gen bus: Re S = a + b*lambda.
    plan_terms: BTreeMap<usize, (f64, f64)>,
    lambda_range: Option<(f64, f64)>,
    /// Remaining activation budget and the signed u coefficients of the
    /// cardinality/moves row, when the variant has one.
    budget_row: Option<(f64, Vec<(usize, f64)>)>,
    pub eq_kinds: Vec<EqKind>,
    pub ineq_kinds: Vec<IneqKind>,
    objective_offset: f64,
    /// MPEC penalty weight on sum u (1 - u); zero outside step two.
    pub penalty: f64,
    cost0_total: f64,
}

#[derive(Debug)]
pub struct ModelBuildError(pub String);

impl AcopfModel {
    /// Build the model; `fix` pins a subset of the shunts, the rest become
    /// box variables in [0, 1]. Problems carrying `Direction::Both` must be
    /// split before calling.
    pub fn new(problem: &RopfProblem, fix: &Fixings) -> Result<Self, ModelBuildError> {
        let net = &problem.net;
        let bus_order = net.bus_order();
        let pos: BTreeMap<BusId, usize> = bus_order.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let n = bus_order.len();

        let direction_up = match &problem.variant {
            Variant::GenMoves { direction, .. } => match (direction, fix.delta_up) {
                (Direction::Up, _) => Some(true),
                (Direction::Down, _) => Some(false),
                (Direction::Both, Some(up)) => Some(up),
                (Direction::Both, None) => {
                    return Err(ModelBuildError("direction unresolved".into()))
                }
            },
            _ => None,
        };

        let mut free_shunt_buses = Vec::new();
        let mut shunts = BTreeMap::new();
        for (&bus, data) in &net.buses {
            let Some(sh) = data.shunt else { continue };
            let dense = pos[&bus];
            match fix.shunts.get(&bus) {
                Some(&on) => {
                    shunts.insert(
                        dense,
                        BusShunt { g: sh.g, b: sh.b, state: ShuntState::Fixed(on as u8 as f64) },
                    );
                }
                None => {
                    free_shunt_buses.push(dense);
                    shunts.insert(
                        dense,
                        BusShunt {
                            g: sh.g,
                            b: sh.b,
                            state: ShuntState::Variable(free_shunt_buses.len() - 1),
                        },
                    );
                }
            }
        }
        let u_offset = 2 * n;
        let mut n_vars = 2 * n + free_shunt_buses.len();
        let lambda_index = direction_up.map(|_| {
            n_vars += 1;
            n_vars - 1
        });

        let branches: Vec<BranchForms> =
            net.branches.iter().map(|br| branch_forms(pos[&br.from], pos[&br.to], br)).collect();

        let gens: BTreeMap<usize, crate::network::Generator> =
            net.generators.iter().map(|(&b, g)| (pos[&b], g.clone())).collect();
        let gen_buses: Vec<usize> = gens.keys().copied().collect();
        let nongen_buses: Vec<usize> = (0..n).filter(|i| !gens.contains_key(i)).collect();

        let mut plan_terms = BTreeMap::new();
        let mut lambda_range = None;
        if let (Variant::GenMoves { plan, .. }, Some(up)) = (&problem.variant, direction_up) {
            for (&bus, gen) in &net.generators {
                let p0 = plan[&bus];
                let (a, slope) = if up {
                    (2.0 * p0 - gen.pmax, 2.0 * (gen.pmax - p0))
                } else {
                    (gen.pmin, 2.0 * (p0 - gen.pmin))
                };
                plan_terms.insert(pos[&bus], (a, slope));
            }
            lambda_range = Some(if up { (0.5, 1.0) } else { (0.0, 0.5) });
        }

        // Remaining budget of the cardinality/moves row over the free shunts.
        let budget_row = match &problem.variant {
            Variant::MaxKShunts { k } => {
                let budget = *k as f64 - fix.shunts.values().filter(|&&v| v).count() as f64;
                let coeffs = free_shunt_buses
                    .iter()
                    .enumerate()
                    .map(|(j, _)| (j, 1.0))
                    .collect::<Vec<_>>();
                Some((budget, coeffs))
            }
            Variant::MaxKMoves { k, initial } => {
                let fixed_moves = fix
                    .shunts
                    .iter()
                    .filter(|(bus, &on)| initial[*bus] != on)
                    .count();
                let mut budget = *k as f64 - fixed_moves as f64;
                let mut coeffs = Vec::new();
                for (j, &dense) in free_shunt_buses.iter().enumerate() {
                    let bus = bus_order[dense];
                    if initial[&bus] {
                        budget -= 1.0;
                        coeffs.push((j, -1.0));
                    } else {
                        coeffs.push((j, 1.0));
                    }
                }
                Some((budget, coeffs))
            }
            Variant::GenMoves { .. } => None,
        };
        if let Some((budget, coeffs)) = &budget_row {
            if coeffs.is_empty() && *budget < 0.0 {
                return Err(ModelBuildError("fixed activations exceed the move budget".into()));
            }
        }

        let mut eq_kinds = Vec::new();
        for &i in &nongen_buses {
            eq_kinds.push(EqKind::BalanceRe(i));
            eq_kinds.push(EqKind::BalanceIm(i));
        }
        if lambda_index.is_some() {
            for &g in &gen_buses {
                eq_kinds.push(EqKind::PlanCoupling(g));
            }
        }

        let mut ineq_kinds = Vec::new();
        for i in 0..n {
            ineq_kinds.push(IneqKind::VLower(i));
            ineq_kinds.push(IneqKind::VUpper(i));
        }
        for &g in &gen_buses {
            if lambda_index.is_none() {
                ineq_kinds.push(IneqKind::PMin(g));
                ineq_kinds.push(IneqKind::PMax(g));
            }
            ineq_kinds.push(IneqKind::QMin(g));
            ineq_kinds.push(IneqKind::QMax(g));
        }
        if lambda_index.is_some() {
            ineq_kinds.push(IneqKind::LambdaLower);
            ineq_kinds.push(IneqKind::LambdaUpper);
        }
        for (l, bf) in branches.iter().enumerate() {
            if bf.imax.is_finite() {
                ineq_kinds.push(IneqKind::CurrentOrig(l));
                ineq_kinds.push(IneqKind::CurrentDest(l));
            }
        }
        for j in 0..free_shunt_buses.len() {
            ineq_kinds.push(IneqKind::ShuntLower(j));
            ineq_kinds.push(IneqKind::ShuntUpper(j));
        }
        if budget_row.as_ref().is_some_and(|(_, c)| !c.is_empty()) {
            ineq_kinds.push(IneqKind::Budget);
        }

        let cost0_total = net.generators.values().map(|g| g.cost0).sum();
        Ok(Self {
            problem: problem.clone(),
            bus_order,
            n,
            n_vars,
            branches,
            shunts,
            gens,
            gen_buses,
            nongen_buses,
            free_shunt_buses,
            u_offset,
            lambda_index,
            plan_terms,
            lambda_range,
            budget_row,
            eq_kinds,
            ineq_kinds,
            objective_offset: 0.0,
            penalty: 0.0,
            cost0_total,
        })
    }

    pub fn n_eq(&self) -> usize {
        self.eq_kinds.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq_kinds.len()
    }

    pub fn n_free_shunts(&self) -> usize {
        self.free_shunt_buses.len()
    }

    /// Flat start: unit voltage, half-on shunts, mid-range lambda.
    pub fn flat_start(&self) -> Array1<f64> {
        let mut x = Array1::zeros(self.n_vars);
        for i in 0..self.n {
            x[i] = 1.0;
        }
        for j in 0..self.free_shunt_buses.len() {
            x[self.u_offset + j] = 0.5;
        }
        if let (Some(li), Some((lo, hi))) = (self.lambda_index, self.lambda_range) {
            x[li] = 0.5 * (lo + hi);
        }
        x
    }

    /// Start vector from a candidate (voltages, free activations, lambda).
    pub fn start_from(&self, cand: &Candidate) -> Array1<f64> {
        let mut x = self.flat_start();
        for (i, &bus) in self.bus_order.iter().enumerate() {
            if let Some(v) = cand.voltage.get(&bus) {
                x[i] = v.re;
                x[self.n + i] = v.im;
            }
        }
        for (j, &dense) in self.free_shunt_buses.iter().enumerate() {
            if let Some(&u) = cand.shunt_state.get(&self.bus_order[dense]) {
                x[self.u_offset + j] = u.clamp(1e-3, 1.0 - 1e-3);
            }
        }
        if let (Some(li), Some(rd)) = (self.lambda_index, cand.redispatch) {
            let (lo, hi) = self.lambda_range.unwrap();
            x[li] = rd.lambda.clamp(lo + 1e-6, hi - 1e-6);
        }
        x
    }

    fn z4(&self, x: &Array1<f64>, o: usize, d: usize) -> [f64; 4] {
        [x[o], x[self.n + o], x[d], x[self.n + d]]
    }

    fn shunt_activation(&self, x: &Array1<f64>, sh: &BusShunt) -> f64 {
        match sh.state {
            ShuntState::Fixed(v) => v,
            ShuntState::Variable(j) => x[self.u_offset + j],
        }
    }

    /// Complex required generation per dense bus (load + shunt draw + branch
    /// flows); zero demand means the bus balances without generation.
    pub fn injections(&self, x: &Array1<f64>) -> Vec<Complex64> {
        let net = &self.problem.net;
        let mut s: Vec<Complex64> =
            self.bus_order.iter().map(|b| net.buses[b].load).collect();
        for (i, sh) in &self.shunts {
            let u = self.shunt_activation(x, sh);
            let v2 = x[*i] * x[*i] + x[self.n + i] * x[self.n + i];
            s[*i] += Complex64::new(sh.g, -sh.b) * v2 * u;
        }
        for bf in &self.branches {
            let z = self.z4(x, bf.o, bf.d);
            s[bf.o] += Complex64::new(bf.s_orig_re.value(&z), bf.s_orig_im.value(&z));
            s[bf.d] += Complex64::new(bf.s_dest_re.value(&z), bf.s_dest_im.value(&z));
        }
        s
    }

    /// Objective value (original units, constant included) plus the MPEC
    /// penalty term if one is set.
    pub fn objective(&self, x: &Array1<f64>, inj: &[Complex64]) -> f64 {
        let mut obj = self.cost0_total + self.objective_offset;
        for (&g, gen) in &self.gens {
            obj += gen.cost * inj[g].re;
        }
        if self.penalty != 0.0 {
            for j in 0..self.free_shunt_buses.len() {
                let u = x[self.u_offset + j];
                obj += self.penalty * u * (1.0 - u);
            }
        }
        obj
    }

    /// Accumulate `weight * grad(Re S_i)` and `weight_im * grad(Im S_i)` for
    /// every dense bus i with nonzero weights.
    fn accumulate_injection_grad(
        &self,
        x: &Array1<f64>,
        w_re: &[f64],
        w_im: &[f64],
        out: &mut Array1<f64>,
    ) {
        for (i, sh) in &self.shunts {
            let (wr, wi) = (w_re[*i], w_im[*i]);
            if wr == 0.0 && wi == 0.0 {
                continue;
            }
            let u = self.shunt_activation(x, sh);
            let (e, f) = (x[*i], x[self.n + i]);
            let w = wr * sh.g - wi * sh.b;
            out[*i] += 2.0 * w * e * u;
            out[self.n + i] += 2.0 * w * f * u;
            if let ShuntState::Variable(j) = sh.state {
                out[self.u_offset + j] += w * (e * e + f * f);
            }
        }
        for bf in &self.branches {
            let (wro, wio) = (w_re[bf.o], w_im[bf.o]);
            let (wrd, wid) = (w_re[bf.d], w_im[bf.d]);
            if wro == 0.0 && wio == 0.0 && wrd == 0.0 && wid == 0.0 {
                continue;
            }
            let z = self.z4(x, bf.o, bf.d);
            let mut g = [0.0; 4];
            for (w, form) in [
                (wro, &bf.s_orig_re),
                (wio, &bf.s_orig_im),
                (wrd, &bf.s_dest_re),
                (wid, &bf.s_dest_im),
            ] {
                if w != 0.0 {
                    let gq = form.grad(&z);
                    for t in 0..4 {
                        g[t] += w * gq[t];
                    }
                }
            }
            out[bf.o] += g[0];
            out[self.n + bf.o] += g[1];
            out[bf.d] += g[2];
            out[self.n + bf.d] += g[3];
        }
    }

    /// Accumulate the weighted Hessians of the injections.
    fn accumulate_injection_hess(
        &self,
        x: &Array1<f64>,
        w_re: &[f64],
        w_im: &[f64],
        out: &mut Array2<f64>,
    ) {
        for (i, sh) in &self.shunts {
            let (wr, wi) = (w_re[*i], w_im[*i]);
            if wr == 0.0 && wi == 0.0 {
                continue;
            }
            let u = self.shunt_activation(x, sh);
            let (e, f) = (x[*i], x[self.n + i]);
            let w = wr * sh.g - wi * sh.b;
            out[[*i, *i]] += 2.0 * w * u;
            out[[self.n + i, self.n + i]] += 2.0 * w * u;
            if let ShuntState::Variable(j) = sh.state {
                let uj = self.u_offset + j;
                out[[*i, uj]] += 2.0 * w * e;
                out[[uj, *i]] += 2.0 * w * e;
                out[[self.n + i, uj]] += 2.0 * w * f;
                out[[uj, self.n + i]] += 2.0 * w * f;
            }
        }
        for bf in &self.branches {
            let (wro, wio) = (w_re[bf.o], w_im[bf.o]);
            let (wrd, wid) = (w_re[bf.d], w_im[bf.d]);
            if wro == 0.0 && wio == 0.0 && wrd == 0.0 && wid == 0.0 {
                continue;
            }
            let idx = [bf.o, self.n + bf.o, bf.d, self.n + bf.d];
            for (w, form) in [
                (wro, &bf.s_orig_re),
                (wio, &bf.s_orig_im),
                (wrd, &bf.s_dest_re),
                (wid, &bf.s_dest_im),
            ] {
                if w != 0.0 {
                    for a in 0..4 {
                        for b in 0..4 {
                            out[[idx[a], idx[b]]] += w * form.0[a][b];
                        }
                    }
                }
            }
        }
    }

    pub fn objective_grad(&self, x: &Array1<f64>) -> Array1<f64> {
        let mut w_re = vec![0.0; self.n];
        let w_im = vec![0.0; self.n];
        for (&g, gen) in &self.gens {
            w_re[g] = gen.cost;
        }
        let mut out = Array1::zeros(self.n_vars);
        self.accumulate_injection_grad(x, &w_re, &w_im, &mut out);
        if self.penalty != 0.0 {
            for j in 0..self.free_shunt_buses.len() {
                let u = x[self.u_offset + j];
                out[self.u_offset + j] += self.penalty * (1.0 - 2.0 * u);
            }
        }
        out
    }

    /// Equality constraint values.
    pub fn eq_values(&self, x: &Array1<f64>, inj: &[Complex64]) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_eq());
        for (r, kind) in self.eq_kinds.iter().enumerate() {
            out[r] = match kind {
                EqKind::BalanceRe(i) => inj[*i].re,
                EqKind::BalanceIm(i) => inj[*i].im,
                EqKind::PlanCoupling(g) => {
                    let (a, slope) = self.plan_terms[g];
                    inj[*g].re - a - slope * x[self.lambda_index.unwrap()]
                }
            };
        }
        out
    }

    /// Inequality constraint values, all in `c(x) >= 0` form.
    pub fn ineq_values(&self, x: &Array1<f64>, inj: &[Complex64]) -> Array1<f64> {
        let net = &self.problem.net;
        let mut out = Array1::zeros(self.n_ineq());
        for (r, kind) in self.ineq_kinds.iter().enumerate() {
            out[r] = match kind {
                IneqKind::VLower(i) => {
                    let v2 = x[*i] * x[*i] + x[self.n + i] * x[self.n + i];
                    let b = &net.buses[&self.bus_order[*i]];
                    v2 - b.vmin * b.vmin
                }
                IneqKind::VUpper(i) => {
                    let v2 = x[*i] * x[*i] + x[self.n + i] * x[self.n + i];
                    let b = &net.buses[&self.bus_order[*i]];
                    b.vmax * b.vmax - v2
                }
                IneqKind::PMin(g) => inj[*g].re - self.gens[g].pmin,
                IneqKind::PMax(g) => self.gens[g].pmax - inj[*g].re,
                IneqKind::QMin(g) => inj[*g].im - self.gens[g].qmin,
                IneqKind::QMax(g) => self.gens[g].qmax - inj[*g].im,
                IneqKind::LambdaLower => x[self.lambda_index.unwrap()] - self.lambda_range.unwrap().0,
                IneqKind::LambdaUpper => self.lambda_range.unwrap().1 - x[self.lambda_index.unwrap()],
                IneqKind::CurrentOrig(l) => {
                    let bf = &self.branches[*l];
                    let z = self.z4(x, bf.o, bf.d);
                    bf.imax * bf.imax - bf.i_orig_sq.value(&z)
                }
                IneqKind::CurrentDest(l) => {
                    let bf = &self.branches[*l];
                    let z = self.z4(x, bf.o, bf.d);
                    bf.imax * bf.imax - bf.i_dest_sq.value(&z)
                }
                IneqKind::ShuntLower(j) => x[self.u_offset + j],
                IneqKind::ShuntUpper(j) => 1.0 - x[self.u_offset + j],
                IneqKind::Budget => {
                    let (budget, coeffs) = self.budget_row.as_ref().unwrap();
                    budget - coeffs.iter().map(|(j, c)| c * x[self.u_offset + j]).sum::<f64>()
                }
            };
        }
        out
    }

    /// Dense Jacobian of the equality constraints.
    pub fn eq_jacobian(&self, x: &Array1<f64>) -> Array2<f64> {
        let mut jac = Array2::zeros((self.n_eq(), self.n_vars));
        let mut w_re = vec![0.0; self.n];
        let mut w_im = vec![0.0; self.n];
        for (r, kind) in self.eq_kinds.iter().enumerate() {
            for v in w_re.iter_mut() {
                *v = 0.0;
            }
            for v in w_im.iter_mut() {
                *v = 0.0;
            }
            let mut row = Array1::zeros(self.n_vars);
            match kind {
                EqKind::BalanceRe(i) => w_re[*i] = 1.0,
                EqKind::BalanceIm(i) => w_im[*i] = 1.0,
                EqKind::PlanCoupling(g) => {
                    w_re[*g] = 1.0;
                    row[self.lambda_index.unwrap()] = -self.plan_terms[g].1;
                }
            }
            self.accumulate_injection_grad(x, &w_re, &w_im, &mut row);
            jac.row_mut(r).assign(&row);
        }
        jac
    }

    /// Dense Jacobian of the inequality constraints.
    pub fn ineq_jacobian(&self, x: &Array1<f64>) -> Array2<f64> {
        let mut jac = Array2::zeros((self.n_ineq(), self.n_vars));
        let mut w_re = vec![0.0; self.n];
        let mut w_im = vec![0.0; self.n];
        for (r, kind) in self.ineq_kinds.iter().enumerate() {
            let mut row = Array1::zeros(self.n_vars);
            match kind {
                IneqKind::VLower(i) => {
                    row[*i] = 2.0 * x[*i];
                    row[self.n + i] = 2.0 * x[self.n + i];
                }
                IneqKind::VUpper(i) => {
                    row[*i] = -2.0 * x[*i];
                    row[self.n + i] = -2.0 * x[self.n + i];
                }
                IneqKind::PMin(g) | IneqKind::PMax(g) => {
                    for v in w_re.iter_mut() {
                        *v = 0.0;
                    }
                    w_re[*g] = if matches!(kind, IneqKind::PMin(_)) { 1.0 } else { -1.0 };
                    self.accumulate_injection_grad(x, &w_re, &w_im, &mut row);
                    w_re[*g] = 0.0;
                }
                IneqKind::QMin(g) | IneqKind::QMax(g) => {
                    for v in w_im.iter_mut() {
                        *v = 0.0;
                    }
                    w_im[*g] = if matches!(kind, IneqKind::QMin(_)) { 1.0 } else { -1.0 };
                    self.accumulate_injection_grad(x, &w_re, &w_im, &mut row);
                    w_im[*g] = 0.0;
                }
                IneqKind::LambdaLower => row[self.lambda_index.unwrap()] = 1.0,
                IneqKind::LambdaUpper => row[self.lambda_index.unwrap()] = -1.0,
                IneqKind::CurrentOrig(l) | IneqKind::CurrentDest(l) => {
                    let bf = &self.branches[*l];
                    let z = self.z4(x, bf.o, bf.d);
                    let form = if matches!(kind, IneqKind::CurrentOrig(_)) {
                        &bf.i_orig_sq
                    } else {
                        &bf.i_dest_sq
                    };
                    let g4 = form.grad(&z);
                    row[bf.o] = -g4[0];
                    row[self.n + bf.o] = -g4[1];
                    row[bf.d] = -g4[2];
                    row[self.n + bf.d] = -g4[3];
                }
                IneqKind::ShuntLower(j) => row[self.u_offset + j] = 1.0,
                IneqKind::ShuntUpper(j) => row[self.u_offset + j] = -1.0,
                IneqKind::Budget => {
                    let (_, coeffs) = self.budget_row.as_ref().unwrap();
                    for (j, c) in coeffs {
                        row[self.u_offset + j] = -c;
                    }
                }
            }
            jac.row_mut(r).assign(&row);
        }
        jac
    }

    /// Hessian of `w_obj * objective + eq_mults' h + ineq_mults' c`.
    pub fn lagrangian_hessian(
        &self,
        x: &Array1<f64>,
        w_obj: f64,
        eq_mults: &Array1<f64>,
        ineq_mults: &Array1<f64>,
    ) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_vars, self.n_vars));
        let mut w_re = vec![0.0; self.n];
        let mut w_im = vec![0.0; self.n];
        for (&g, gen) in &self.gens {
            w_re[g] += w_obj * gen.cost;
        }
        for (r, kind) in self.eq_kinds.iter().enumerate() {
            match kind {
                EqKind::BalanceRe(i) => w_re[*i] += eq_mults[r],
                EqKind::BalanceIm(i) => w_im[*i] += eq_mults[r],
                EqKind::PlanCoupling(g) => w_re[*g] += eq_mults[r],
            }
        }
        for (r, kind) in self.ineq_kinds.iter().enumerate() {
            let m = ineq_mults[r];
            if m == 0.0 {
                continue;
            }
            match kind {
                IneqKind::PMin(g) => w_re[*g] += m,
                IneqKind::PMax(g) => w_re[*g] -= m,
                IneqKind::QMin(g) => w_im[*g] += m,
                IneqKind::QMax(g) => w_im[*g] -= m,
                _ => {}
            }
        }
        self.accumulate_injection_hess(x, &w_re, &w_im, &mut out);
        // Direct quadratic inequality rows.
        for (r, kind) in self.ineq_kinds.iter().enumerate() {
            let m = ineq_mults[r];
            if m == 0.0 {
                continue;
            }
            match kind {
                IneqKind::VLower(i) => {
                    out[[*i, *i]] += 2.0 * m;
                    out[[self.n + i, self.n + i]] += 2.0 * m;
                }
                IneqKind::VUpper(i) => {
                    out[[*i, *i]] -= 2.0 * m;
                    out[[self.n + i, self.n + i]] -= 2.0 * m;
                }
                IneqKind::CurrentOrig(l) | IneqKind::CurrentDest(l) => {
                    let bf = &self.branches[*l];
                    let idx = [bf.o, self.n + bf.o, bf.d, self.n + bf.d];
                    let form = if matches!(kind, IneqKind::CurrentOrig(_)) {
                        &bf.i_orig_sq
                    } else {
                        &bf.i_dest_sq
                    };
                    for a in 0..4 {
                        for b in 0..4 {
                            out[[idx[a], idx[b]]] -= m * form.0[a][b];
                        }
                    }
                }
                _ => {}
            }
        }
        if self.penalty != 0.0 && w_obj != 0.0 {
            for j in 0..self.free_shunt_buses.len() {
                let uj = self.u_offset + j;
                out[[uj, uj]] += -2.0 * self.penalty * w_obj;
            }
        }
        out
    }

    /// Assemble the candidate a solution vector describes.
    pub fn candidate(&self, x: &Array1<f64>) -> Candidate {
        let inj = self.injections(x);
        let mut voltage = BTreeMap::new();
        for (i, &bus) in self.bus_order.iter().enumerate() {
            voltage.insert(bus, Complex64::new(x[i], x[self.n + i]));
        }
        let mut generation = BTreeMap::new();
        for &g in &self.gen_buses {
            generation.insert(self.bus_order[g], inj[g]);
        }
        let mut shunt_state = BTreeMap::new();
        for (i, sh) in &self.shunts {
            shunt_state.insert(self.bus_order[*i], self.shunt_activation(x, sh));
        }
        let redispatch = self.lambda_index.map(|li| Redispatch {
            up: self.lambda_range.unwrap().0 >= 0.5,
            lambda: x[li],
        });
        let mut cand = Candidate {
            voltage,
            generation,
            shunt_state,
            redispatch,
            objective: 0.0,
        };
        cand.objective = cand.cost(&self.problem.net);
        cand
    }

    pub fn free_shunt_bus_ids(&self) -> Vec<BusId> {
        self.free_shunt_buses.iter().map(|&d| self.bus_order[d]).collect()
    }
}
