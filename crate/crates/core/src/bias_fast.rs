//! Pre-averaging, the bias-corrected objective Ȟ_n and the fast objective Ḣ_n.
//!
//! With `A(a) = diag(√a)`, `D̂ = A Σ A` and `D̂_† = A B_{m,n} A`, both
//! objectives only need `tr((D̂_† + D̂) D̂^{-1/2})` and its derivative in `Σ`,
//! which is `A φ_{D̂}(I − D̂^{-1/2} D̂_† D̂^{-1/2}) A`.

use std::io::Write;

use crate::matan::{phi, sym_inv_sqrt, sym_sqrt, EigenFactorization};
use crate::observation::BlockLayout;
use crate::quasilik::{assemble_matrix, assemble_s, pattern_contract, BlockData};
use crate::{Error, Mat, Result};

/// Pre-averaging weight `g` on `[0, 1]` with `Ψ₁ = ∫g²`, `Ψ₂ = ∫g'²`.
#[derive(Debug, Clone, Copy)]
pub struct WeightFn {
    pub g: fn(f64) -> f64,
    pub psi1: f64,
    pub psi2: f64,
}

fn triangle(x: f64) -> f64 {
    x.min(1.0 - x)
}

#[cfg(test)]
fn triangle_prime(x: f64) -> f64 {
    if x < 0.5 {
        1.0
    } else {
        -1.0
    }
}

impl WeightFn {
    /// `g(x) = x ∧ (1 − x)`: `Ψ₁ = 1/12`, `Ψ₂ = 1`.
    pub fn triangle() -> Self {
        Self { g: triangle, psi1: 1.0 / 12.0, psi2: 1.0 }
    }

    /// Builds `Ψ₁`, `Ψ₂` by composite Simpson on `n` (even) panels.
    pub fn from_fn(g: fn(f64) -> f64, dg: fn(f64) -> f64, n: usize) -> Self {
        let n = n + n % 2;
        let h = 1.0 / n as f64;
        let simpson = |f: &dyn Fn(f64) -> f64| {
            let mut s = f(0.0) + f(1.0);
            for i in 1..n {
                // one-sided evaluation at kinks on the grid is fine for piecewise C¹ g
                let x = i as f64 * h;
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
            }
            s * h / 3.0
        };
        let psi1 = simpson(&|x| g(x).powi(2));
        // g' is only piecewise continuous: integrate each panel pair at interior points
        let psi2 = (0..n / 2)
            .map(|p| {
                let (a, b) = (2.0 * p as f64 * h, 2.0 * (p + 1) as f64 * h);
                let m = 0.5 * (a + b);
                let r = 0.5 * (b - a) / 3f64.sqrt();
                0.5 * (b - a) * (dg(m - r).powi(2) + dg(m + r).powi(2))
            })
            .sum();
        Self { g, psi1, psi2 }
    }
}

/// `B_{m,n}` and `â_m` for every block of a prepared problem.
#[derive(Debug, Clone)]
pub struct PreAveraged {
    pub blocks: Vec<usize>,
    pub b: Vec<Mat>,
    pub a_hat: Vec<Vec<f64>>,
}

/// `Σ_l g(l/(k+1)) Z_l`, `l = 1..k`.
fn weighted_sum(z: &[f64], w: &WeightFn) -> f64 {
    let k = z.len();
    z.iter().enumerate().map(|(i, zi)| (w.g)((i + 1) as f64 / (k + 1) as f64) * zi).sum()
}

/// `[B]_ij = (ℓ/(TΨ₁)) [(Σ_l g^i_l Z^i_l)(Σ_l g^j_l Z^j_l) − (v̂_i/k^i) Ψ₂ 1{i=j}]`.
pub fn preaveraged_b(blk: &BlockData, layout: &BlockLayout, v_hat: &[f64], w: &WeightFn) -> Result<Mat> {
    let g = blk.dim();
    for (j, k) in blk.sizes.iter().enumerate() {
        if *k < 2 {
            return Err(Error::BlockTooSmall { block: blk.m, component: j });
        }
    }
    let s: Vec<f64> = (0..g).map(|j| weighted_sum(blk.component_z(j), w)).collect();
    let scale = layout.n_blocks as f64 / (layout.horizon * w.psi1);
    Ok(Mat::from_fn(g, g, |i, j| {
        let noise = if i == j { v_hat[i] / blk.sizes[i] as f64 * w.psi2 } else { 0.0 };
        scale * (s[i] * s[j] - noise)
    }))
}

/// `â^i = k^i / (T k_n v̂_i)`, zero when `v̂_i = 0`.
pub fn intensity_estimate(blk: &BlockData, layout: &BlockLayout, v_hat: &[f64]) -> Vec<f64> {
    blk.sizes
        .iter()
        .zip(v_hat)
        .map(|(k, v)| if *v > 0.0 { *k as f64 / (v * layout.horizon * layout.k_n) } else { 0.0 })
        .collect()
}

impl PreAveraged {
    pub fn compute(blocks: &[BlockData], layout: &BlockLayout, v_hat: &[f64], w: &WeightFn) -> Result<Self> {
        let mut out = Self { blocks: Vec::new(), b: Vec::new(), a_hat: Vec::new() };
        for blk in blocks {
            out.blocks.push(blk.m);
            out.b.push(preaveraged_b(blk, layout, v_hat, w)?);
            out.a_hat.push(intensity_estimate(blk, layout, v_hat));
        }
        Ok(out)
    }

    /// Rows `m,i,j,value` for every entry of every `B_{m,n}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["m", "i", "j", "value"])?;
        for (m, b) in self.blocks.iter().zip(&self.b) {
            for i in 0..b.nrows() {
                for j in 0..b.ncols() {
                    wr.serialize((m, i, j, b[(i, j)]))?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn scale_by(a: &[f64], x: &Mat) -> Mat {
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| (a[i] * a[j]).sqrt() * x[(i, j)])
}

/// `tr((D_† + D) D^{-1/2})` with `D = AΣA`, `D_† = A B A`, and its gradient in `Σ`.
pub fn root_trace_term(sigma: &Mat, b: &Mat, a: &[f64]) -> Result<(f64, Mat)> {
    let d = scale_by(a, sigma);
    let dd = scale_by(a, b);
    let e = EigenFactorization::new(&d);
    let lmin = e.lambda[e.lambda.len() - 1];
    if !(lmin > 0.0) {
        return Err(Error::Singular);
    }
    let dinv = e.map(|l| 1.0 / l.sqrt());
    let value = ((&dd + &d) * &dinv).trace();
    let m = Mat::identity(d.nrows(), d.nrows()) - &dinv * &dd * &dinv;
    let gd = phi(&d, &m)?;
    let sa: Vec<f64> = a.iter().map(|x| x.sqrt()).collect();
    let g = Mat::from_fn(d.nrows(), d.nrows(), |i, j| sa[i] * sa[j] * gd[(i, j)]);
    Ok((value, (&g + g.transpose()) * 0.5))
}

/// Ḣ contribution of one block: `-c tr((D̂_† + D̂) D̂^{-1/2})` and `∂/∂Σ`.
pub fn dot_block(sigma: &Mat, b: &Mat, a: &[f64], c: f64, block: usize) -> Result<(f64, Mat)> {
    let (v, g) = root_trace_term(sigma, b, a).map_err(|_| Error::NotPd { block })?;
    Ok((-c * v, g * -c))
}

/// Simplified Ȟ contribution of one block:
/// `-½ tr(S⁻¹(ZZᵀ − S(B_{m,n}))) − κ tr((D̂ + D̂_†) D̂^{-1/2})`, and `∂/∂Σ`.
pub fn check_block(sigma: &Mat, v: &[f64], blk: &BlockData, b: &Mat, a: &[f64], kappa: f64) -> Result<(f64, Mat)> {
    let lc = assemble_s(sigma, v, blk);
    let ch = lc.chol.as_ref().ok_or(Error::NotPd { block: blk.m })?;
    let sc = assemble_matrix(b, v, blk);
    let u = ch.solve(&blk.z);
    let x = ch.solve(&sc);
    let first = -0.5 * (blk.z.dot(&u) - x.trace());
    // ∂/∂S of the first term is ½(uuᵀ − S⁻¹ S(C) S⁻¹)
    let xs = ch.solve(&x.transpose());
    let w = &u * u.transpose() - xs;
    let g1 = pattern_contract(&w, blk) * 0.5;
    let (rv, rg) = root_trace_term(sigma, b, a).map_err(|_| Error::NotPd { block: blk.m })?;
    Ok((first - kappa * rv, g1 - rg * kappa))
}

/// `(E_m, F_m, G_m)` for intensity `a`, model matrix `B`, data matrix `C`.
pub fn bias_terms(a: &[f64], b: &Mat, c: &Mat, v: &[f64], blk: &BlockData, layout: &BlockLayout) -> Result<(f64, f64, f64)> {
    let lc = assemble_s(b, v, blk);
    let ch = lc.chol.as_ref().ok_or(Error::NotPd { block: blk.m })?;
    let sc = assemble_matrix(c, v, blk);
    let tr = ch.solve(&sc).trace();
    let ld = lc.logdet()?;
    let kp = layout.horizon * layout.b_n.sqrt() / layout.n_blocks as f64;
    // components with a_j = 0 drop out of A(a)(·)A(a)
    let keep: Vec<usize> = (0..a.len()).filter(|&j| a[j] > 0.0).collect();
    let (mut te, mut tf) = (0.0, 0.0);
    if !keep.is_empty() {
        let sub = |x: &Mat| Mat::from_fn(keep.len(), keep.len(), |i, j| x[(keep[i], keep[j])]);
        let ak: Vec<f64> = keep.iter().map(|&j| a[j]).collect();
        let aba = scale_by(&ak, &sub(b));
        let diff = scale_by(&ak, &(sub(c) - sub(b)));
        te = (diff * sym_inv_sqrt(&aba)?).trace();
        tf = sym_sqrt(&aba)?.trace();
    }
    let e = tr - 0.5 * kp * te;
    let f = ld - kp * tf;
    Ok((e, f, e + f))
}

/// `Ȟ` prefactor `κ = T b_n^{1/2} / (4ℓ)` of the simplified form.
pub fn check_kappa(layout: &BlockLayout) -> f64 {
    layout.horizon * layout.b_n.sqrt() / (4.0 * layout.n_blocks as f64)
}

/// `Ḣ` prefactor `T / (4ℓ)`.
pub fn dot_prefactor(layout: &BlockLayout) -> f64 {
    layout.horizon / (4.0 * layout.n_blocks as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::{ObservationSet, Series};

    #[test]
    fn triangle_constants_by_quadrature() {
        let w = WeightFn::from_fn(triangle, triangle_prime, 1000);
        assert!((w.psi1 - 1.0 / 12.0).abs() < 1e-12);
        assert!((w.psi2 - 1.0).abs() < 1e-12);
    }

    fn block(values: Vec<f64>) -> (BlockLayout, BlockData) {
        let n = values.len() - 1;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64 * 0.999).collect();
        let obs = ObservationSet::new(1.0, vec![Series::new(times, values)]).unwrap();
        let lay = BlockLayout::build(&obs, Some(2), None).unwrap();
        let blk = BlockData::new(&obs, &lay, 2).unwrap();
        (lay, blk)
    }

    #[test]
    fn zero_data_noise_correction_only() {
        let (lay, blk) = block(vec![0.0; 21]);
        let k = blk.sizes[0] as f64;
        let b = preaveraged_b(&blk, &lay, &[0.3], &WeightFn::triangle()).unwrap();
        let want = -(2.0 * 0.3 * 1.0) / (1.0 / 12.0 * k);
        assert!((b[(0, 0)] - want).abs() < 1e-12);
    }

    #[test]
    fn a_hat_halves_when_v_doubles() {
        let (lay, blk) = block((0..21).map(|i| (i as f64).sin()).collect());
        let a1 = intensity_estimate(&blk, &lay, &[0.2]);
        let a2 = intensity_estimate(&blk, &lay, &[0.4]);
        assert_eq!(a1[0], 2.0 * a2[0]);
        assert_eq!(intensity_estimate(&blk, &lay, &[0.0])[0], 0.0);
    }

    #[test]
    fn stationary_when_data_matches_model() {
        let s = Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let (_, g) = dot_block(&s, &s, &[2.0, 3.0], 0.25, 1).unwrap();
        assert!(g.amax() < 1e-14);
    }

    #[test]
    fn zero_intensity_kills_correction() {
        let (lay, blk) = block((0..21).map(|i| (i as f64 * 0.7).cos() * 0.1).collect());
        let b = Mat::from_element(1, 1, 1.2);
        let c = Mat::from_element(1, 1, 0.8);
        let (e, f, g) = bias_terms(&[0.0], &b, &c, &[0.01], &blk, &lay).unwrap();
        let lc = assemble_s(&b, &[0.01], &blk);
        let tr = lc.chol.as_ref().unwrap().solve(&assemble_matrix(&c, &[0.01], &blk)).trace();
        assert!((e - tr).abs() < 1e-12);
        assert!((f - lc.logdet().unwrap()).abs() < 1e-12);
        assert!((g - e - f).abs() == 0.0);
    }
}
