//! Block covariance `S_m(B, v)` and the quasi-log-likelihood.
//!
//! For block `m` with per-component increment counts `k^1, …, k^γ`,
//! `S_m(B, v)` has diagonal blocks `B_kk diag(|I^k_i|) + v_k M(k^k)` and
//! off-diagonal blocks `B_kl 𝔊_{k,l}`. The per-block contribution to `H_n` is
//! `-½(Zᵀ S⁻¹ Z + log det S)`.

use nalgebra::{Cholesky, Dyn};

use crate::observation::{block_increments, local_average, overlap_matrix, tridiag_m, BlockLayout, ObservationSet};
use crate::{Error, Mat, Result, Vector};

/// Everything an objective needs about one block, fixed once per dataset.
#[derive(Debug, Clone)]
pub struct BlockData {
    pub m: usize,
    /// `s_{m-1}`.
    pub t: f64,
    /// `X̂_{m-1}`.
    pub x: Vec<f64>,
    pub sizes: Vec<usize>,
    pub offsets: Vec<usize>,
    pub z: Vector,
    /// `𝔊_{k,l}` for every ordered pair; diagonal ones are diagonal.
    pub overlaps: Vec<Vec<Mat>>,
}

impl BlockData {
    pub fn new(obs: &ObservationSet, layout: &BlockLayout, m: usize) -> Result<Self> {
        let z = block_increments(obs, layout, m)?;
        let x = local_average(obs.explanatory_series(), layout, m - 1)?;
        let sizes = layout.sizes(m);
        let mut offsets = vec![0; sizes.len()];
        for j in 1..sizes.len() {
            offsets[j] = offsets[j - 1] + sizes[j - 1];
        }
        let g = layout.dim();
        let overlaps = (0..g).map(|k| (0..g).map(|l| overlap_matrix(obs, layout, m, k, l)).collect()).collect();
        Ok(Self { m, t: layout.start(m), x, sizes, offsets, z, overlaps })
    }

    pub fn dim(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Increments of component `j`.
    pub fn component_z(&self, j: usize) -> &[f64] {
        &self.z.as_slice()[self.offsets[j]..self.offsets[j] + self.sizes[j]]
    }

    /// `D'_k = diag(|I^k_i|)` as a vector.
    pub fn lengths(&self, k: usize) -> Vec<f64> {
        let g = &self.overlaps[k][k];
        (0..self.sizes[k]).map(|i| g[(i, i)]).collect()
    }
}

/// Per-dataset preparation: usable blocks `m ≥ 2` and bookkeeping.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub layout: BlockLayout,
    pub blocks: Vec<BlockData>,
    /// Blocks `m ≥ 2` left out, with the reason.
    pub skipped: Vec<(usize, String)>,
}

impl Prepared {
    /// Keeps blocks `m = 2..ℓ` where every component has at least `min_k`
    /// increments and `X̂_{m-1}` exists.
    pub fn new(obs: &ObservationSet, layout: BlockLayout, min_k: usize) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut skipped = Vec::new();
        for m in 2..=layout.n_blocks {
            if let Some(j) = (0..layout.dim()).find(|&j| layout.k(m, j) < min_k.max(1)) {
                skipped.push((m, format!("component {j} has {} increments", layout.k(m, j))));
                continue;
            }
            match BlockData::new(obs, &layout, m) {
                Ok(b) => blocks.push(b),
                Err(e) => skipped.push((m, e.to_string())),
            }
        }
        if blocks.is_empty() {
            return Err(Error::NoUsableBlocks);
        }
        Ok(Self { layout, blocks, skipped })
    }
}

/// `S_m(B, v)` with its Cholesky factor when positive definite.
pub struct LocalCovariance {
    pub block: usize,
    pub s: Mat,
    pub chol: Option<Cholesky<f64, Dyn>>,
}

impl LocalCovariance {
    pub fn is_pd(&self) -> bool {
        self.chol.is_some()
    }

    pub fn logdet(&self) -> Result<f64> {
        let ch = self.chol.as_ref().ok_or(Error::NotPd { block: self.block })?;
        Ok(2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }
}

/// Assembles `S_m(B, v)` without factorizing.
pub fn assemble_matrix(b: &Mat, v: &[f64], blk: &BlockData) -> Mat {
    let n = blk.total();
    let mut s = Mat::zeros(n, n);
    for k in 0..blk.dim() {
        let (ok, nk) = (blk.offsets[k], blk.sizes[k]);
        for l in 0..blk.dim() {
            let (ol, nl) = (blk.offsets[l], blk.sizes[l]);
            let mut view = s.view_mut((ok, ol), (nk, nl));
            view += &blk.overlaps[k][l] * b[(k, l)];
        }
        if v[k] != 0.0 {
            let mut view = s.view_mut((ok, ok), (nk, nk));
            view += tridiag_m(nk) * v[k];
        }
    }
    s
}

pub fn assemble_s(b: &Mat, v: &[f64], blk: &BlockData) -> LocalCovariance {
    let s = assemble_matrix(b, v, blk);
    let chol = Cholesky::new(s.clone());
    LocalCovariance { block: blk.m, s, chol }
}

/// Contracts a block-structured `k × k` matrix `W` against the assembly
/// patterns: `out_kl = Σ_ij W[k-block i, l-block j] 𝔊_{k,l}[i, j]`.
pub fn pattern_contract(w: &Mat, blk: &BlockData) -> Mat {
    let g = blk.dim();
    let mut out = Mat::zeros(g, g);
    for k in 0..g {
        for l in 0..g {
            let ov = &blk.overlaps[k][l];
            let mut acc = 0.0;
            for i in 0..blk.sizes[k] {
                let row = blk.offsets[k] + i;
                for j in 0..blk.sizes[l] {
                    let o = ov[(i, j)];
                    if o != 0.0 {
                        acc += w[(row, blk.offsets[l] + j)] * o;
                    }
                }
            }
            out[(k, l)] = acc;
        }
    }
    (&out + out.transpose()) * 0.5
}

/// Value `-½(ZᵀS⁻¹Z + log det S)` and `Ḡ = ∂/∂Σ_m` for one block.
pub fn block_loglik(sigma: &Mat, v: &[f64], blk: &BlockData) -> Result<(f64, Mat)> {
    let lc = assemble_s(sigma, v, blk);
    let ch = lc.chol.as_ref().ok_or(Error::NotPd { block: blk.m })?;
    let u = ch.solve(&blk.z);
    let value = -0.5 * (blk.z.dot(&u) + lc.logdet()?);
    let w = ch.inverse() - &u * u.transpose();
    Ok((value, pattern_contract(&w, blk) * -0.5))
}

/// `‖B'^{-1/2} Abs(B − B') B'^{-1/2}‖` with `B' = diag(B)`.
pub fn contraction_norm(b: &Mat) -> f64 {
    let g = b.nrows();
    let m = Mat::from_fn(g, g, |i, j| if i == j { 0.0 } else { b[(i, j)].abs() / (b[(i, i)] * b[(j, j)]).sqrt() });
    crate::matan::op_norm(&m)
}

struct SeriesParts {
    dinv: Vec<Mat>,
    logdet_d: f64,
    // t[i][j] = B_ij D_i⁻¹ 𝔊_ij for i ≠ j
    t: Vec<Vec<Option<Mat>>>,
}

fn series_parts(b: &Mat, v: &[f64], blk: &BlockData) -> Result<SeriesParts> {
    let c = contraction_norm(b);
    if !(c < 1.0) {
        return Err(Error::ContractionViolated(c));
    }
    let g = blk.dim();
    let mut dinv = Vec::with_capacity(g);
    let mut logdet_d = 0.0;
    for k in 0..g {
        let d = Mat::from_diagonal(&Vector::from_vec(blk.lengths(k))) * b[(k, k)] + tridiag_m(blk.sizes[k]) * v[k];
        let ch = Cholesky::new(d).ok_or(Error::NotPd { block: blk.m })?;
        logdet_d += 2.0 * ch.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        dinv.push(ch.inverse());
    }
    let t = (0..g)
        .map(|i| (0..g).map(|j| (i != j).then(|| &dinv[i] * &blk.overlaps[i][j] * b[(i, j)])).collect())
        .collect();
    Ok(SeriesParts { dinv, logdet_d, t })
}

/// Sums over paths `i₀ → … → i_p` with consecutive indices distinct,
/// grouped by endpoints: returns `W_p[i₀][i_p]` for `p = 0..=P`.
fn path_sums(parts: &SeriesParts, blk: &BlockData, p_max: usize) -> Vec<Vec<Vec<Mat>>> {
    let g = blk.dim();
    let mut all = Vec::with_capacity(p_max + 1);
    let w0: Vec<Vec<Mat>> = (0..g)
        .map(|i| {
            (0..g)
                .map(|j| if i == j { Mat::identity(blk.sizes[i], blk.sizes[i]) } else { Mat::zeros(blk.sizes[i], blk.sizes[j]) })
                .collect()
        })
        .collect();
    all.push(w0);
    for p in 1..=p_max {
        let prev = &all[p - 1];
        let next: Vec<Vec<Mat>> = (0..g)
            .map(|i0| {
                (0..g)
                    .map(|j| {
                        let mut acc = Mat::zeros(blk.sizes[i0], blk.sizes[j]);
                        for h in 0..g {
                            // at p = 1 only the path starting at i0 contributes
                            if h == j || (p == 1 && h != i0) {
                                continue;
                            }
                            if let Some(t) = &parts.t[h][j] {
                                acc += &prev[i0][h] * t;
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        all.push(next);
    }
    all
}

/// Truncated series `Σ_{p≤P} (−1)^p (D'⁻¹(S−D'))^p D'⁻¹` for `S_m⁻¹`, built
/// from path sums over component indices.
pub fn inverse_series_oracle(b: &Mat, v: &[f64], blk: &BlockData, p_max: usize) -> Result<Mat> {
    let parts = series_parts(b, v, blk)?;
    let w = path_sums(&parts, blk, p_max);
    let n = blk.total();
    let mut out = Mat::zeros(n, n);
    for (p, wp) in w.iter().enumerate() {
        let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
        for i0 in 0..blk.dim() {
            for ip in 0..blk.dim() {
                let term = &wp[i0][ip] * &parts.dinv[ip] * sign;
                let mut view = out.view_mut((blk.offsets[i0], blk.offsets[ip]), (blk.sizes[i0], blk.sizes[ip]));
                view += term;
            }
        }
    }
    Ok(out)
}

/// Truncated series `Σ_i log det D_i − Σ_{1≤p≤P} ((−1)^p/p) Σ_{cycles} tr(∏ D⁻¹𝔊 B)`.
pub fn logdet_series_oracle(b: &Mat, v: &[f64], blk: &BlockData, p_max: usize) -> Result<f64> {
    let parts = series_parts(b, v, blk)?;
    let w = path_sums(&parts, blk, p_max);
    let mut total = parts.logdet_d;
    for (p, wp) in w.iter().enumerate().skip(1) {
        let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
        let tr: f64 = (0..blk.dim()).map(|i| wp[i][i].trace()).sum();
        total -= sign / p as f64 * tr;
    }
    Ok(total)
}
