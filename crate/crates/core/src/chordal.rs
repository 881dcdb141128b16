//! Sparsity-graph machinery for the lifted voltage matrix: fill-reducing
//! ordering, chordal extension with maximal-clique extraction, clique trees
//! with running-intersection links, and greedy clique merging.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::network::{BusId, Network};

#[derive(Debug, Error)]
pub enum ChordalError {
    #[error("ordering is not a permutation of the graph vertices")]
    BadOrdering,
    #[error("clique set does not admit a running-intersection tree")]
    NoRipTree,
    #[error("vertex {0} out of range")]
    VertexRange(usize),
}

/// Undirected graph over vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityGraph {
    adj: Vec<BTreeSet<usize>>,
}

impl SparsityGraph {
    pub fn new(n: usize) -> Self {
        Self { adj: vec![BTreeSet::new(); n] }
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.adj[a].insert(b);
            self.adj[b].insert(a);
        }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(&b)
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adj[v]
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|s| s.len()).sum::<usize>() / 2
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, nbrs) in self.adj.iter().enumerate() {
            for &b in nbrs.iter().filter(|&&b| b > a) {
                out.push((a, b));
            }
        }
        out
    }

    /// Sparsity pattern of the real lifted matrix: vertex `2i` is the real
    /// coordinate of bus `i` (dense order), `2i + 1` the imaginary one. The
    /// two coordinates of a bus are always connected, and every branch
    /// connects all four coordinates of its terminals.
    pub fn lifted_from_network(net: &Network) -> (Self, Vec<BusId>) {
        let order = net.bus_order();
        let pos: BTreeMap<BusId, usize> = order.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let mut g = Self::new(2 * order.len());
        for i in 0..order.len() {
            g.add_edge(2 * i, 2 * i + 1);
        }
        for br in &net.branches {
            let (i, j) = (pos[&br.from], pos[&br.to]);
            for a in [2 * i, 2 * i + 1] {
                for b in [2 * j, 2 * j + 1] {
                    g.add_edge(a, b);
                }
            }
        }
        (g, order)
    }

    /// Bus-level quotient of the lifted pattern: one vertex per bus.
    pub fn bus_graph(net: &Network) -> (Self, Vec<BusId>) {
        let order = net.bus_order();
        let pos: BTreeMap<BusId, usize> = order.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let mut g = Self::new(order.len());
        for br in &net.branches {
            g.add_edge(pos[&br.from], pos[&br.to]);
        }
        (g, order)
    }

    /// Chordality test via maximum-cardinality search: the reverse MCS order
    /// is a perfect elimination ordering iff the graph is chordal.
    pub fn is_chordal(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return true;
        }
        let mut weight = vec![0usize; n];
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for _ in 0..n {
            let v = (0..n)
                .filter(|&v| !visited[v])
                .max_by_key(|&v| (weight[v], std::cmp::Reverse(v)))
                .unwrap();
            visited[v] = true;
            order.push(v);
            for &w in &self.adj[v] {
                if !visited[w] {
                    weight[w] += 1;
                }
            }
        }
        // Perfect elimination check on the reversed order.
        order.reverse();
        let pos: Vec<usize> = {
            let mut p = vec![0; n];
            for (i, &v) in order.iter().enumerate() {
                p[v] = i;
            }
            p
        };
        for &v in &order {
            let later: Vec<usize> =
                self.adj[v].iter().copied().filter(|&w| pos[w] > pos[v]).collect();
            if let Some(&m) = later.iter().min_by_key(|&&w| pos[w]) {
                for &w in later.iter().filter(|&&w| w != m) {
                    if !self.has_edge(m, w) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Greedy minimum-degree elimination ordering in multiple-elimination
/// rounds: each round removes an independent set of currently
/// minimum-degree vertices in ascending id order, so degree-1 vertices of a
/// path go before its center and the result is deterministic.
pub fn amd_ordering(g: &SparsityGraph) -> Vec<usize> {
    let n = g.n();
    let mut adj: Vec<BTreeSet<usize>> = (0..n).map(|v| g.neighbors(v).clone()).collect();
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    let eliminate = |v: usize, adj: &mut Vec<BTreeSet<usize>>, alive: &mut Vec<bool>| {
        alive[v] = false;
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
        }
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        adj[v].clear();
    };
    while order.len() < n {
        let dmin = (0..n).filter(|&v| alive[v]).map(|v| adj[v].len()).min().unwrap();
        let candidates: Vec<usize> =
            (0..n).filter(|&v| alive[v] && adj[v].len() == dmin).collect();
        let mut picked: Vec<usize> = Vec::new();
        for &v in &candidates {
            if picked.iter().all(|&p| !adj[p].contains(&v)) {
                picked.push(v);
            }
        }
        for &v in &picked {
            order.push(v);
            eliminate(v, &mut adj, &mut alive);
        }
    }
    order
}

/// Eliminate along `order`, returning the filled (chordal) graph and its
/// maximal cliques.
pub fn chordal_extension(
    g: &SparsityGraph,
    order: &[usize],
) -> Result<(SparsityGraph, Vec<Vec<usize>>), ChordalError> {
    let n = g.n();
    if order.len() != n {
        return Err(ChordalError::BadOrdering);
    }
    let mut pos = vec![usize::MAX; n];
    for (i, &v) in order.iter().enumerate() {
        if v >= n || pos[v] != usize::MAX {
            return Err(ChordalError::BadOrdering);
        }
        pos[v] = i;
    }

    let mut filled = g.clone();
    // Working copy of the monotone adjacency; grows as fill is added.
    for &v in order {
        let later: Vec<usize> =
            filled.neighbors(v).iter().copied().filter(|&w| pos[w] > pos[v]).collect();
        for (i, &a) in later.iter().enumerate() {
            for &b in &later[i + 1..] {
                filled.add_edge(a, b);
            }
        }
    }

    // Elimination cliques: v plus its later neighborhood in the filled graph.
    let mut candidates: Vec<Vec<usize>> = order
        .iter()
        .map(|&v| {
            let mut c: Vec<usize> =
                filled.neighbors(v).iter().copied().filter(|&w| pos[w] > pos[v]).collect();
            c.push(v);
            c.sort_unstable();
            c
        })
        .collect();
    candidates.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    let mut cliques: Vec<Vec<usize>> = Vec::new();
    for cand in candidates {
        if !cliques.iter().any(|kept| is_subset(&cand, kept)) {
            cliques.push(cand);
        }
    }
    cliques.sort();
    Ok((filled, cliques))
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    if small.len() > big.len() {
        return false;
    }
    let mut it = big.iter();
    'outer: for &x in small {
        for &y in it.by_ref() {
            match y.cmp(&x) {
                std::cmp::Ordering::Equal => continue 'outer,
                std::cmp::Ordering::Greater => return false,
                std::cmp::Ordering::Less => {}
            }
        }
        return false;
    }
    true
}

/// A linking edge of the clique tree: the shared vertices of two adjacent
/// cliques, whose lifted-matrix entries must agree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliqueLink {
    pub child: usize,
    pub parent: usize,
    pub shared: Vec<usize>,
}

impl CliqueLink {
    /// Number of matrix entries tied by this link: the upper triangle
    /// (diagonal included) over the shared vertex set.
    pub fn entry_count(&self) -> usize {
        let s = self.shared.len();
        s * (s + 1) / 2
    }
}

/// Ordered maximal cliques with a running-intersection tree and the list of
/// linking entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliqueDecomposition {
    pub cliques: Vec<Vec<usize>>,
    /// Parent of each clique in the tree; roots carry `None`.
    pub parent: Vec<Option<usize>>,
    pub links: Vec<CliqueLink>,
}

impl CliqueDecomposition {
    pub fn linking_entry_count(&self) -> usize {
        self.links.iter().map(CliqueLink::entry_count).sum()
    }

    pub fn max_clique_size(&self) -> usize {
        self.cliques.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Every edge of `g` must live inside some clique.
    pub fn covers(&self, g: &SparsityGraph) -> bool {
        g.edges().iter().all(|&(a, b)| {
            self.cliques.iter().any(|c| c.binary_search(&a).is_ok() && c.binary_search(&b).is_ok())
        })
    }

    /// Running-intersection property: for every vertex, the cliques that
    /// contain it induce a connected subforest.
    pub fn has_running_intersection(&self) -> bool {
        let nverts = self.cliques.iter().flatten().copied().max().map_or(0, |m| m + 1);
        let mut holding: Vec<Vec<usize>> = vec![Vec::new(); nverts];
        for (ci, c) in self.cliques.iter().enumerate() {
            for &v in c {
                holding[v].push(ci);
            }
        }
        for cliques_of_v in holding.iter().filter(|h| h.len() > 1) {
            let inside: BTreeSet<usize> = cliques_of_v.iter().copied().collect();
            // Count members whose parent is also a member; a connected
            // subtree of size s has exactly s - 1 such members.
            let internal = cliques_of_v
                .iter()
                .filter(|&&c| matches!(self.parent[c], Some(p) if inside.contains(&p)))
                .count();
            if internal + 1 != cliques_of_v.len() {
                return false;
            }
        }
        true
    }

    /// One JSON object per clique, for external inspection.
    pub fn dump_json_lines(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.cliques.iter().enumerate() {
            out.push_str(
                &serde_json::json!({"clique": i, "vertices": c, "parent": self.parent[i]})
                    .to_string(),
            );
            out.push('\n');
        }
        out
    }
}

/// Build a maximum-weight spanning forest over clique intersection sizes and
/// derive the linking list. Fails when the forest violates the
/// running-intersection property (non-chordal clique covers).
pub fn clique_tree(cliques: &[Vec<usize>]) -> Result<CliqueDecomposition, ChordalError> {
    let k = cliques.len();
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let w = intersection(&cliques[i], &cliques[j]).len();
            if w > 0 {
                edges.push((w, i, j));
            }
        }
    }
    edges.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| (a.1, a.2).cmp(&(b.1, b.2))));

    let mut dsu: Vec<usize> = (0..k).collect();
    fn find(dsu: &mut Vec<usize>, x: usize) -> usize {
        if dsu[x] != x {
            let r = find(dsu, dsu[x]);
            dsu[x] = r;
        }
        dsu[x]
    }
    let mut chosen: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &(_, i, j) in &edges {
        let (ri, rj) = (find(&mut dsu, i), find(&mut dsu, j));
        if ri != rj {
            dsu[ri] = rj;
            chosen[i].push(j);
            chosen[j].push(i);
        }
    }

    // Root each component at its lowest clique index and orient.
    let mut parent = vec![None; k];
    let mut seen = vec![false; k];
    for root in 0..k {
        if seen[root] {
            continue;
        }
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(c) = stack.pop() {
            for &nb in &chosen[c] {
                if !seen[nb] {
                    seen[nb] = true;
                    parent[nb] = Some(c);
                    stack.push(nb);
                }
            }
        }
    }

    let links = (0..k)
        .filter_map(|c| {
            parent[c].map(|p| CliqueLink {
                child: c,
                parent: p,
                shared: intersection(&cliques[c], &cliques[p]),
            })
        })
        .collect();

    let deco = CliqueDecomposition { cliques: cliques.to_vec(), parent, links };
    if !deco.has_running_intersection() {
        return Err(ChordalError::NoRipTree);
    }
    Ok(deco)
}

fn intersection(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    out
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b.iter()).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Weight of one avoided linking entry in the merge score.
pub const LINK_MERGE_WEIGHT: f64 = 100.0;

/// Greedy parent-child merging: a merge is accepted when the estimated
/// factorization cost of the union block does not exceed the cost of the two
/// separate blocks plus the linking entries it removes,
/// `|u|^3 <= |p|^3 + |c|^3 + LINK_MERGE_WEIGHT * entries(p, c)`.
/// Runs `k_max` passes over the tree; the result is a valid decomposition
/// with no more cliques and no more linking entries than the input.
pub fn merge_cliques(deco: &CliqueDecomposition, k_max: usize) -> CliqueDecomposition {
    let mut cliques: Vec<Option<Vec<usize>>> = deco.cliques.iter().cloned().map(Some).collect();
    let mut parent: Vec<Option<usize>> = deco.parent.clone();

    for _pass in 0..k_max {
        let mut merged_any = false;
        for child in 0..cliques.len() {
            let Some(c) = cliques[child].clone() else { continue };
            let Some(p_idx) = parent[child] else { continue };
            let p = cliques[p_idx].clone().expect("parent alive");
            let shared = intersection(&c, &p).len();
            let entries = (shared * (shared + 1) / 2) as f64;
            let cost_union = (c.len() + p.len() - shared).pow(3) as f64;
            let cost_split = (c.len().pow(3) + p.len().pow(3)) as f64 + LINK_MERGE_WEIGHT * entries;
            if cost_union <= cost_split {
                let u = union(&c, &p);
                cliques[p_idx] = Some(u.clone());
                cliques[child] = None;
                for q in 0..cliques.len() {
                    if parent[q] == Some(child) {
                        parent[q] = Some(p_idx);
                    }
                }
                // Absorb neighbors that became subsets of the union.
                loop {
                    let mut absorbed = false;
                    for q in 0..cliques.len() {
                        if q == p_idx {
                            continue;
                        }
                        let adjacent = parent[q] == Some(p_idx) || parent[p_idx] == Some(q);
                        if !adjacent {
                            continue;
                        }
                        if let Some(cq) = cliques[q].clone() {
                            if is_subset(&cq, cliques[p_idx].as_ref().unwrap()) {
                                if parent[p_idx] == Some(q) {
                                    parent[p_idx] = parent[q];
                                }
                                cliques[q] = None;
                                for r in 0..cliques.len() {
                                    if parent[r] == Some(q) {
                                        parent[r] = Some(p_idx);
                                    }
                                }
                                absorbed = true;
                            }
                        }
                    }
                    if !absorbed {
                        break;
                    }
                }
                merged_any = true;
            }
        }
        if !merged_any {
            break;
        }
    }

    let remaining: Vec<Vec<usize>> = cliques.into_iter().flatten().collect();
    clique_tree(&remaining).expect("merged cliques keep the running-intersection property")
}

/// Clique decomposition of a network's lifted matrix, with the bus-index maps
/// the relaxation builder needs.
#[derive(Debug, Clone)]
pub struct NetworkDecomposition {
    /// Dense bus order; bus `order[i]` owns lifted coordinates `2i, 2i+1`.
    pub bus_order: Vec<BusId>,
    pub bus_pos: BTreeMap<BusId, usize>,
    /// Decomposition over the 2n lifted coordinates; every clique holds
    /// complete (Re, Im) pairs.
    pub deco: CliqueDecomposition,
    /// Designated owner clique for each unordered dense bus pair that the
    /// constraints reference.
    owner: BTreeMap<(usize, usize), usize>,
}

impl NetworkDecomposition {
    /// Lowest-index clique whose vertex set contains both coordinate pairs.
    pub fn owner_clique(&self, bus_a: usize, bus_b: usize) -> Option<usize> {
        let key = (bus_a.min(bus_b), bus_a.max(bus_b));
        self.owner.get(&key).copied()
    }

    /// Dense buses of a clique, recovered from its coordinate pairs.
    pub fn clique_buses(&self, clique: usize) -> Vec<usize> {
        self.deco.cliques[clique].iter().filter(|v| *v % 2 == 0).map(|v| v / 2).collect()
    }
}

/// Decompose a network: fill-reducing ordering and chordal extension on the
/// bus-level graph, expansion to (Re, Im) coordinate pairs, clique tree and
/// `k_max` merge passes. `k_max = 0` keeps the unmerged decomposition; a
/// dense single-block decomposition is available through
/// [`decompose_network_dense`].
pub fn decompose_network(net: &Network, k_max: usize) -> NetworkDecomposition {
    let (bus_g, bus_order) = SparsityGraph::bus_graph(net);
    let order = amd_ordering(&bus_g);
    let (_, bus_cliques) = chordal_extension(&bus_g, &order).expect("order is a permutation");
    let expanded: Vec<Vec<usize>> = bus_cliques
        .iter()
        .map(|c| c.iter().flat_map(|&i| [2 * i, 2 * i + 1]).collect())
        .collect();
    let deco = clique_tree(&expanded).expect("expanded cliques form a RIP tree");
    let deco = merge_cliques(&deco, k_max);
    finish_network_decomposition(net, bus_order, deco)
}

/// Single dense block over all 2n coordinates; the undecomposed reference.
pub fn decompose_network_dense(net: &Network) -> NetworkDecomposition {
    let bus_order = net.bus_order();
    let all: Vec<usize> = (0..2 * bus_order.len()).collect();
    let deco = clique_tree(&[all]).expect("single clique");
    finish_network_decomposition(net, bus_order, deco)
}

fn finish_network_decomposition(
    net: &Network,
    bus_order: Vec<BusId>,
    deco: CliqueDecomposition,
) -> NetworkDecomposition {
    let bus_pos: BTreeMap<BusId, usize> =
        bus_order.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let mut owner = BTreeMap::new();
    let mut want: BTreeSet<(usize, usize)> = (0..bus_order.len()).map(|i| (i, i)).collect();
    for br in &net.branches {
        let (a, b) = (bus_pos[&br.from], bus_pos[&br.to]);
        want.insert((a.min(b), a.max(b)));
    }
    for key in want {
        let found = deco.cliques.iter().position(|c| {
            c.binary_search(&(2 * key.0)).is_ok() && c.binary_search(&(2 * key.1)).is_ok()
        });
        owner.insert(key, found.expect("decomposition covers every constrained pair"));
    }
    NetworkDecomposition { bus_order, bus_pos, deco, owner }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> SparsityGraph {
        let mut g = SparsityGraph::new(n);
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    #[test]
    fn path_orders_endpoints_first() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let order = amd_ordering(&g);
        assert_eq!(order, vec![0, 2, 1], "endpoints precede the center");
    }

    #[test]
    fn star_center_eliminated_last() {
        let g = graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let order = amd_ordering(&g);
        assert_eq!(*order.last().unwrap(), 0);
        // Min-degree incurs zero fill on a star.
        let (filled, _) = chordal_extension(&g, &order).unwrap();
        assert_eq!(filled.edge_count(), g.edge_count());
    }

    #[test]
    fn complete_graph_any_order_no_fill() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let order = amd_ordering(&g);
        let (filled, cliques) = chordal_extension(&g, &order).unwrap();
        assert_eq!(filled.edge_count(), 6);
        assert_eq!(cliques, vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn four_cycle_gets_one_chord_two_triangles() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let (filled, cliques) = chordal_extension(&g, &[0, 1, 2, 3]).unwrap();
        assert_eq!(filled.edge_count(), 5);
        assert_eq!(cliques.len(), 2);
        assert!(cliques.iter().all(|c| c.len() == 3));
        assert!(filled.is_chordal());
    }

    #[test]
    fn tree_input_cliques_are_edges() {
        let g = graph(5, &[(0, 1), (1, 2), (1, 3), (3, 4)]);
        let order = amd_ordering(&g);
        let (filled, cliques) = chordal_extension(&g, &order).unwrap();
        assert_eq!(filled.edge_count(), 4);
        assert_eq!(cliques.len(), 4);
        assert!(cliques.iter().all(|c| c.len() == 2));
    }

    #[test]
    fn shared_edge_link() {
        let deco = clique_tree(&[vec![0, 1, 2], vec![1, 2, 3]]).unwrap();
        assert_eq!(deco.links.len(), 1);
        assert_eq!(deco.links[0].shared, vec![1, 2]);
        assert_eq!(deco.linking_entry_count(), 3);
    }

    #[test]
    fn disjoint_cliques_form_forest() {
        let deco = clique_tree(&[vec![0, 1], vec![2, 3]]).unwrap();
        assert_eq!(deco.links.len(), 0);
        assert_eq!(deco.parent.iter().filter(|p| p.is_none()).count(), 2);
    }

    #[test]
    fn non_chordal_cover_rejected() {
        // Edges of a 4-cycle as cliques cannot satisfy RIP on any tree.
        let cliques = vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![0, 3]];
        assert!(matches!(clique_tree(&cliques), Err(ChordalError::NoRipTree)));
    }

    #[test]
    fn merge_zero_passes_is_identity() {
        let deco = clique_tree(&[vec![0, 1, 2], vec![2, 3, 4]]).unwrap();
        assert_eq!(merge_cliques(&deco, 0), deco);
    }

    #[test]
    fn overlapping_pair_merges() {
        let deco = clique_tree(&[vec![0, 1, 2], vec![1, 2, 3]]).unwrap();
        let merged = merge_cliques(&deco, 1);
        assert_eq!(merged.cliques, vec![vec![0, 1, 2, 3]]);
        assert_eq!(merged.linking_entry_count(), 0);
    }
}
