//! Nesterov-Todd scaling for the symmetric-cone part and the Jordan-algebra
//! operations the predictor-corrector needs.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Cholesky, Eigh, SVD, UPLO};

use super::{mat_to_svec, svec_to_mat, ConicProgram};

/// Partition of a cone vector into its sections.
#[derive(Debug, Clone)]
pub struct ConeLayout {
    pub n_free: usize,
    pub n_nonneg: usize,
    pub dims: Vec<usize>,
    pub block_offsets: Vec<usize>,
    pub n_total: usize,
}

impl ConeLayout {
    pub fn of(prog: &ConicProgram) -> Self {
        let block_offsets = (0..prog.psd_dims.len()).map(|k| prog.block_offset(k)).collect();
        Self {
            n_free: prog.n_free,
            n_nonneg: prog.n_nonneg,
            dims: prog.psd_dims.clone(),
            block_offsets,
            n_total: prog.n_cols(),
        }
    }

    pub fn nonneg_range(&self) -> std::ops::Range<usize> {
        self.n_free..self.n_free + self.n_nonneg
    }

    pub fn block_slice<'a>(&self, v: &'a [f64], k: usize) -> &'a [f64] {
        let off = self.block_offsets[k];
        &v[off..off + super::svec_len(self.dims[k])]
    }

    /// The cone identity element (zeros on the free section).
    pub fn identity(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.n_total];
        for v in &mut e[self.nonneg_range()] {
            *v = 1.0;
        }
        for (k, &d) in self.dims.iter().enumerate() {
            let off = self.block_offsets[k];
            for i in 0..d {
                e[off + super::svec_index(d, i, i)] = 1.0;
            }
        }
        e
    }
}

/// NT scaling state: diagonal weights for the nonnegative part, one
/// `R`-factor per PSD block, and the scaled point λ (diagonal per block).
pub struct NtScaling {
    /// `w_i^2 = x_i / z_i` per nonnegative coordinate.
    pub w2: Array1<f64>,
    /// `λ_i = sqrt(x_i z_i)` per nonnegative coordinate.
    pub lambda_nn: Array1<f64>,
    pub blocks: Vec<NtBlock>,
}

pub struct NtBlock {
    pub r: Array2<f64>,
    pub rt: Array2<f64>,
    /// `T = R R'`; the quadratic representation `H(V) = T V T`.
    pub t: Array2<f64>,
    /// Diagonal of the scaled point.
    pub lambda: Array1<f64>,
}

impl NtScaling {
    /// Compute the scaling from strictly interior `x`, `z`.
    ///
    /// Per PSD block: with Cholesky factors `X = L1 L1'`, `Z = L2 L2'` and the
    /// SVD `L2' L1 = U Σ V'`, the factor `R = L1 V Σ^{-1/2}` satisfies
    /// `R^{-1} X R^{-T} = R' Z R = Σ`.
    pub fn compute(layout: &ConeLayout, x: &[f64], z: &[f64]) -> Option<Self> {
        let nn = layout.nonneg_range();
        let xs = &x[nn.clone()];
        let zs = &z[nn];
        if xs.iter().any(|&v| v <= 0.0) || zs.iter().any(|&v| v <= 0.0) {
            return None;
        }
        let w2 = Array1::from_iter(xs.iter().zip(zs).map(|(&a, &b)| a / b));
        let lambda_nn = Array1::from_iter(xs.iter().zip(zs).map(|(&a, &b)| (a * b).sqrt()));

        let mut blocks = Vec::with_capacity(layout.dims.len());
        for (k, &d) in layout.dims.iter().enumerate() {
            let xm = svec_to_mat(d, layout.block_slice(x, k));
            let zm = svec_to_mat(d, layout.block_slice(z, k));
            let l1 = xm.cholesky(UPLO::Lower).ok()?;
            let l2 = zm.cholesky(UPLO::Lower).ok()?;
            let prod = l2.t().dot(&l1);
            let (u, s, vt) = prod.svd(true, true).ok()?;
            let (u, vt) = (u.unwrap(), vt.unwrap());
            if s.iter().any(|&v| v <= 0.0) {
                return None;
            }
            let s_isqrt = s.mapv(|v| 1.0 / v.sqrt());
            // R = L1 V Σ^{-1/2}
            let mut r = l1.dot(&vt.t());
            for (mut col, &sc) in r.columns_mut().into_iter().zip(s_isqrt.iter()) {
                col *= sc;
            }
            // R^{-T} = L2 U Σ^{-1/2} is implied; only R itself is needed.
            let _ = u;
            let rt = r.t().to_owned();
            let t = r.dot(&rt);
            // The singular values are exactly the scaled point: R^{-1} X R^{-T} = Σ.
            blocks.push(NtBlock { r, rt, t, lambda: s });
        }
        Some(Self { w2, lambda_nn, blocks })
    }

    /// Duality measure contribution `<x, z>` implied by λ.
    pub fn lambda_sq_sum(&self) -> f64 {
        self.lambda_nn.iter().map(|v| v * v).sum::<f64>()
            + self
                .blocks
                .iter()
                .map(|b| b.lambda.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
    }

    /// `W' v` on the cone part: `w ∘ v` on the nonnegative section and
    /// `R V R'` per block. Free section passes through untouched.
    pub fn apply_wt(&self, layout: &ConeLayout, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        let nn = layout.nonneg_range();
        for (o, w2) in out[nn].iter_mut().zip(self.w2.iter()) {
            *o *= w2.sqrt();
        }
        for (k, blk) in self.blocks.iter().enumerate() {
            let d = layout.dims[k];
            let m = svec_to_mat(d, layout.block_slice(v, k));
            let scaled = blk.r.dot(&m).dot(&blk.rt);
            let off = layout.block_offsets[k];
            out[off..off + super::svec_len(d)].copy_from_slice(&mat_to_svec(&scaled));
        }
        out
    }

    /// `W^{-T} v`: `v / w` on the nonnegative section and `R^{-1} V R^{-T}`
    /// per block (computed by triangular-free dense solves).
    pub fn apply_w_inv_t(&self, layout: &ConeLayout, v: &[f64]) -> Vec<f64> {
        use ndarray_linalg::Solve;
        let mut out = v.to_vec();
        let nn = layout.nonneg_range();
        for (o, w2) in out[nn].iter_mut().zip(self.w2.iter()) {
            *o /= w2.sqrt();
        }
        for (k, blk) in self.blocks.iter().enumerate() {
            let d = layout.dims[k];
            let m = svec_to_mat(d, layout.block_slice(v, k));
            // Solve R B = M for B, then R C' = B' for C = B R^{-T}.
            let mut b = Array2::zeros((d, d));
            for j in 0..d {
                let col = blk.r.solve(&m.column(j).to_owned()).expect("R invertible");
                b.column_mut(j).assign(&col);
            }
            let mut c = Array2::zeros((d, d));
            for i in 0..d {
                let row = blk.r.solve(&b.row(i).to_owned()).expect("R invertible");
                c.row_mut(i).assign(&row);
            }
            let c = 0.5 * (&c + &c.t());
            let off = layout.block_offsets[k];
            out[off..off + super::svec_len(d)].copy_from_slice(&mat_to_svec(&c));
        }
        out
    }

    /// `W v`: `w ∘ v` on the nonnegative section and `R' V R` per block.
    pub fn apply_w(&self, layout: &ConeLayout, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        let nn = layout.nonneg_range();
        for (o, w2) in out[nn].iter_mut().zip(self.w2.iter()) {
            *o *= w2.sqrt();
        }
        for (k, blk) in self.blocks.iter().enumerate() {
            let d = layout.dims[k];
            let m = svec_to_mat(d, layout.block_slice(v, k));
            let scaled = blk.rt.dot(&m).dot(&blk.r);
            let off = layout.block_offsets[k];
            out[off..off + super::svec_len(d)].copy_from_slice(&mat_to_svec(&scaled));
        }
        out
    }

    /// `H v = W' W v`: `w^2 ∘ v` on the nonnegative section, `T V T` per block.
    pub fn apply_h(&self, layout: &ConeLayout, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        let nn = layout.nonneg_range();
        for (o, w2) in out[nn].iter_mut().zip(self.w2.iter()) {
            *o *= *w2;
        }
        for (k, blk) in self.blocks.iter().enumerate() {
            let d = layout.dims[k];
            let m = svec_to_mat(d, layout.block_slice(v, k));
            let scaled = blk.t.dot(&m).dot(&blk.t);
            let off = layout.block_offsets[k];
            out[off..off + super::svec_len(d)].copy_from_slice(&mat_to_svec(&scaled));
        }
        out
    }

    /// Solve `λ ∘ t = d` in scaled space (λ is diagonal there).
    pub fn jordan_div_lambda(&self, layout: &ConeLayout, d_vec: &[f64]) -> Vec<f64> {
        let mut out = d_vec.to_vec();
        let nn = layout.nonneg_range();
        for (o, l) in out[nn].iter_mut().zip(self.lambda_nn.iter()) {
            *o /= *l;
        }
        for (k, blk) in self.blocks.iter().enumerate() {
            let d = layout.dims[k];
            let m = svec_to_mat(d, layout.block_slice(d_vec, k));
            let mut t = Array2::zeros((d, d));
            for i in 0..d {
                for j in 0..d {
                    t[[i, j]] = 2.0 * m[[i, j]] / (blk.lambda[i] + blk.lambda[j]);
                }
            }
            let off = layout.block_offsets[k];
            out[off..off + super::svec_len(d)].copy_from_slice(&mat_to_svec(&t));
        }
        out
    }

    /// Jordan product `u ∘ v` of two scaled-space vectors.
    pub fn jordan_product(&self, layout: &ConeLayout, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; layout.n_total];
        let nn = layout.nonneg_range();
        for i in nn {
            out[i] = u[i] * v[i];
        }
        for (k, &d) in layout.dims.iter().enumerate() {
            let um = svec_to_mat(d, layout.block_slice(u, k));
            let vm = svec_to_mat(d, layout.block_slice(v, k));
            let prod = um.dot(&vm);
            let sym = 0.5 * (&prod + &prod.t());
            let off = layout.block_offsets[k];
            out[off..off + super::svec_len(d)].copy_from_slice(&mat_to_svec(&sym));
        }
        out
    }

    /// `λ ∘ λ` — squared scaled point.
    pub fn lambda_sq(&self, layout: &ConeLayout) -> Vec<f64> {
        let mut out = vec![0.0; layout.n_total];
        let nn_off = layout.n_free;
        for (i, l) in self.lambda_nn.iter().enumerate() {
            out[nn_off + i] = l * l;
        }
        for (k, blk) in self.blocks.iter().enumerate() {
            let d = layout.dims[k];
            let off = layout.block_offsets[k];
            for i in 0..d {
                out[off + super::svec_index(d, i, i)] = blk.lambda[i] * blk.lambda[i];
            }
        }
        out
    }

    /// Largest feasible fraction of a scaled step direction: the returned
    /// `alpha` keeps `λ + alpha * dir` in the cone interior margin-free.
    /// `dir` must already be expressed in scaled coordinates.
    pub fn max_step_scaled(&self, layout: &ConeLayout, dir: &[f64]) -> f64 {
        let mut min_ratio = f64::INFINITY;
        let nn_off = layout.n_free;
        for (i, l) in self.lambda_nn.iter().enumerate() {
            min_ratio = min_ratio.min(dir[nn_off + i] / l);
        }
        for (k, blk) in self.blocks.iter().enumerate() {
            let d = layout.dims[k];
            let m = svec_to_mat(d, layout.block_slice(dir, k));
            // min eigenvalue of Λ^{-1/2} M Λ^{-1/2}
            let li = blk.lambda.mapv(|v| 1.0 / v.sqrt());
            let mut scaled = m;
            for i in 0..d {
                for j in 0..d {
                    scaled[[i, j]] *= li[i] * li[j];
                }
            }
            if let Ok((vals, _)) = scaled.eigh(UPLO::Lower) {
                min_ratio = min_ratio.min(vals[0]);
            } else {
                return 0.0;
            }
        }
        if min_ratio >= 0.0 {
            f64::INFINITY
        } else {
            -1.0 / min_ratio
        }
    }
}
