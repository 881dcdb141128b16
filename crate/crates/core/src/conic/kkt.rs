//! Per-iteration KKT system: the Schur complement `G = A_K H A_K'` over the
//! scaled cone part, bordered by the free-variable columns, factorized dense.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Factorize, LUFactorized, Solve};

use super::scaling::{ConeLayout, NtScaling};
use super::{ConicProgram, SQRT2};

/// Constraint-matrix sections reorganized for fast Schur assembly; built once
/// per solve.
pub struct KktPrep {
    pub m: usize,
    pub n_free: usize,
    /// Per free column: (row, value) list.
    free_cols: Vec<Vec<(usize, f64)>>,
    /// Per nonnegative column: (row, value) list.
    nn_cols: Vec<Vec<(usize, f64)>>,
    /// Per PSD block: rows touching it with their local svec entries.
    block_rows: Vec<Vec<(usize, Vec<(usize, f64)>)>>,
}

impl KktPrep {
    pub fn new(prog: &ConicProgram, layout: &ConeLayout) -> Self {
        use std::collections::BTreeMap;
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(r, c, v) in &prog.a_triplets {
            *merged.entry((c, r)).or_default() += v;
        }
        let mut free_cols = vec![Vec::new(); layout.n_free];
        let mut nn_cols = vec![Vec::new(); layout.n_nonneg];
        let mut block_maps: Vec<BTreeMap<usize, Vec<(usize, f64)>>> =
            vec![BTreeMap::new(); layout.dims.len()];
        for (&(c, r), &v) in &merged {
            if v == 0.0 {
                continue;
            }
            if c < layout.n_free {
                free_cols[c].push((r, v));
            } else if c < layout.n_free + layout.n_nonneg {
                nn_cols[c - layout.n_free].push((r, v));
            } else {
                let k = layout
                    .block_offsets
                    .partition_point(|&off| off <= c)
                    .checked_sub(1)
                    .expect("column belongs to a block");
                let local = c - layout.block_offsets[k];
                block_maps[k].entry(r).or_default().push((local, v));
            }
        }
        let block_rows = block_maps
            .into_iter()
            .map(|m| m.into_iter().collect::<Vec<_>>())
            .collect();
        Self { m: prog.n_rows(), n_free: layout.n_free, free_cols, nn_cols, block_rows }
    }
}

/// Matrix entries (row, col, coeff) of a sparse svec vector, with the svec
/// off-diagonal scaling undone; both (i, j) and (j, i) are emitted.
fn svec_entries(d: usize, sparse: &[(usize, f64)]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(sparse.len() * 2);
    for &(idx, v) in sparse {
        let (i, j) = svec_unindex(d, idx);
        if i == j {
            out.push((i, i, v));
        } else {
            let w = v / SQRT2;
            out.push((i, j, w));
            out.push((j, i, w));
        }
    }
    out
}

/// Inverse of `svec_index`: local index -> (i, j) with i >= j.
fn svec_unindex(d: usize, idx: usize) -> (usize, usize) {
    let mut j = 0;
    let mut off = 0;
    loop {
        let col_len = d - j;
        if idx < off + col_len {
            return (j + (idx - off), j);
        }
        off += col_len;
        j += 1;
    }
}

pub struct KktFactor {
    lu: LUFactorized<ndarray::OwnedRepr<f64>>,
    /// Unregularized saddle matrix; refinement measures defects against it
    /// so the regularization error is iterated away.
    matrix: Array2<f64>,
    pub size: usize,
}

/// Assemble and factorize the saddle matrix
/// `[[G + δI, A_f], [A_f', -δI]]` with `G = A_K H A_K'`.
pub fn factor(prep: &KktPrep, scaling: &NtScaling, layout: &ConeLayout) -> Option<KktFactor> {
    let m = prep.m;
    let size = m + prep.n_free;
    let mut mat: Array2<f64> = Array2::zeros((size, size));

    // Nonnegative section: rank-one per column with weight w^2.
    for (j, col) in prep.nn_cols.iter().enumerate() {
        let w2 = scaling.w2[j];
        for (a, &(r1, v1)) in col.iter().enumerate() {
            for &(r2, v2) in &col[a..] {
                let add = w2 * v1 * v2;
                mat[[r1, r2]] += add;
                if r1 != r2 {
                    mat[[r2, r1]] += add;
                }
            }
        }
    }

    // PSD blocks: U_i = T mat(a_i) T per touching row, then sparse dots.
    for (k, rows) in prep.block_rows.iter().enumerate() {
        let d = layout.dims[k];
        let t = &scaling.blocks[k].t;
        let mut dense: Vec<Array2<f64>> = Vec::with_capacity(rows.len());
        for (_, sparse) in rows {
            let entries = svec_entries(d, sparse);
            // B = mat(a_i) * T, only rows in the support are nonzero.
            let mut u = Array2::<f64>::zeros((d, d));
            let mut b = Array2::<f64>::zeros((d, d));
            let mut support = Vec::new();
            for &(r, s, coeff) in &entries {
                if !support.contains(&r) {
                    support.push(r);
                }
                let trow = t.row(s);
                let mut brow = b.row_mut(r);
                brow.scaled_add(coeff, &trow);
            }
            // U = T * B using only the support rows of B.
            for &r in &support {
                let brow = b.row(r).to_owned();
                let tcol = t.column(r);
                for i in 0..d {
                    let ti = tcol[i];
                    if ti != 0.0 {
                        u.row_mut(i).scaled_add(ti, &brow);
                    }
                }
            }
            dense.push(u);
        }
        for (ai, (row_i, _)) in rows.iter().enumerate() {
            let u = &dense[ai];
            for (al, (row_l, sparse_l)) in rows.iter().enumerate().take(ai + 1) {
                let mut dot = 0.0;
                for &(idx, v) in sparse_l {
                    let (i, j) = svec_unindex(d, idx);
                    dot += if i == j { u[[i, i]] * v } else { SQRT2 * u[[i, j]] * v };
                }
                let _ = al;
                mat[[*row_i, *row_l]] += dot;
                if row_i != row_l {
                    mat[[*row_l, *row_i]] += dot;
                }
            }
        }
    }

    // Free border.
    for (j, col) in prep.free_cols.iter().enumerate() {
        for &(r, v) in col {
            mat[[r, m + j]] = v;
            mat[[m + j, r]] = v;
        }
    }

    // Quasi-definite static regularization keeps the factorization stable on
    // degenerate instances; refinement against the unregularized matrix
    // recovers the true solution.
    let scale = (0..m).map(|i| mat[[i, i]].abs()).fold(0.0f64, f64::max).max(1.0);
    let delta = 1e-8 * scale;
    let mut reg = mat.clone();
    for i in 0..m {
        reg[[i, i]] += delta;
    }
    for i in m..size {
        reg[[i, i]] -= delta;
    }

    let lu = reg.factorize().ok()?;
    Some(KktFactor { lu, matrix: mat, size })
}

impl KktFactor {
    /// Solve with iterative refinement against the unregularized matrix.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let b = Array1::from_vec(rhs.to_vec());
        let mut x = self.lu.solve(&b).ok()?;
        let norm_b = b.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        for _ in 0..4 {
            let r = &b - &self.matrix.dot(&x);
            let norm_r = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if norm_r <= 1e-14 * norm_b {
                break;
            }
            let Ok(corr) = self.lu.solve(&r) else { break };
            x += &corr;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(x.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unindex_inverts_index() {
        for d in 1..6 {
            for j in 0..d {
                for i in j..d {
                    let idx = super::super::svec_index(d, i, j);
                    assert_eq!(svec_unindex(d, idx), (i, j));
                }
            }
        }
    }
}
