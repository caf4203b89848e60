//! Distances between co-volatility paths and asymptotic-variance quantities.
//!
//! Paths live on a time grid together with the observation intensities `a_t^j`
//! and noise variances `v_j`. The scaled matrix is
//! `𝒟_ij = Σ_ij (a^i a^j)^{1/2} (v_i v_j)^{-1/2}`, i.e. `Λ Σ Λ` with
//! `Λ = diag((a^j / v_j)^{1/2})`. All time integrals use the trapezoid rule on
//! the path grid.

use rayon::prelude::*;
use serde::Serialize;

use crate::matan::{frak_k1, frak_k2, sym_inv_sqrt, sym_sqrt, sym_sqrt_derivative, symmetrize, EigenFactorization};
use crate::models::VolModel;
use crate::{Error, Mat, Result};

#[derive(Debug, Clone)]
pub struct ScaledVolPath {
    pub times: Vec<f64>,
    pub sigma: Vec<Mat>,
    /// `a_t^j` per grid point.
    pub intensity: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
}

impl ScaledVolPath {
    pub fn new(times: Vec<f64>, sigma: Vec<Mat>, intensity: Vec<Vec<f64>>, noise: Vec<f64>) -> Result<Self> {
        let g = noise.len();
        if times.len() < 2 || sigma.len() != times.len() || intensity.len() != times.len() {
            return Err(Error::ShapeMismatch("path grid lengths differ or fewer than two points".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::BadConfig("path grid must be strictly increasing".into()));
        }
        if sigma.iter().any(|s| s.nrows() != g || s.ncols() != g) || intensity.iter().any(|a| a.len() != g) {
            return Err(Error::ShapeMismatch(format!("expected {g}-dimensional path")));
        }
        if noise.iter().chain(intensity.iter().flatten()).any(|v| !(*v > 0.0)) {
            return Err(Error::BadConfig("intensities and noise variances must be positive".into()));
        }
        Ok(Self { times, sigma, intensity, noise })
    }

    /// Path with time-constant intensities.
    pub fn with_constant_intensity(times: Vec<f64>, sigma: Vec<Mat>, a: Vec<f64>, noise: Vec<f64>) -> Result<Self> {
        let intensity = vec![a; times.len()];
        Self::new(times, sigma, intensity, noise)
    }

    pub fn dim(&self) -> usize {
        self.noise.len()
    }

    /// Same grid, intensities and noise with another Σ.
    pub fn with_sigma(&self, sigma: Vec<Mat>) -> Result<Self> {
        Self::new(self.times.clone(), sigma, self.intensity.clone(), self.noise.clone())
    }

    fn lambda(&self, k: usize) -> Vec<f64> {
        self.intensity[k].iter().zip(&self.noise).map(|(a, v)| (a / v).sqrt()).collect()
    }

    /// `Λ_k A Λ_k` at grid point `k`.
    pub fn scale(&self, k: usize, a: &Mat) -> Mat {
        let l = self.lambda(k);
        Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * l[i] * l[j])
    }

    pub fn scaled(&self, k: usize) -> Mat {
        self.scale(k, &self.sigma[k])
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if self.times != other.times || self.dim() != other.dim() {
            return Err(Error::ShapeMismatch("paths are on different grids".into()));
        }
        Ok(())
    }
}

pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

fn trapezoid_mat(times: &[f64], values: &[Mat]) -> Mat {
    let mut acc = Mat::zeros(values[0].nrows(), values[0].ncols());
    for (t, v) in times.windows(2).zip(values.windows(2)) {
        acc += (&v[0] + &v[1]) * (0.5 * (t[1] - t[0]));
    }
    acc
}

/// Both pointwise integrands of D: the three-term form and the squared form.
fn divergence_integrands(d1: &Mat, d2: &Mat) -> Result<(f64, f64)> {
    let r1 = sym_inv_sqrt(d1)?;
    let s1 = sym_sqrt(d1)?;
    let s2 = sym_sqrt(d2)?;
    let three = 0.25 * ((d2 - d1) * &r1).trace() - 0.5 * s2.trace() + 0.5 * s1.trace();
    let diff = &s2 - &s1;
    let square = 0.25 * (&diff * &diff * &r1).trace();
    Ok((three, square))
}

/// `(three-term form, squared form)` of `D(Σ₁, Σ₂)`.
pub fn divergence_forms(p1: &ScaledVolPath, p2: &ScaledVolPath) -> Result<(f64, f64)> {
    p1.same_grid(p2)?;
    let pts = (0..p1.times.len())
        .into_par_iter()
        .map(|k| divergence_integrands(&p1.scaled(k), &p2.scaled(k)))
        .collect::<Result<Vec<_>>>()?;
    let three: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let square: Vec<f64> = pts.iter().map(|p| p.1).collect();
    Ok((trapezoid(&p1.times, &three), trapezoid(&p1.times, &square)))
}

/// `D(Σ₁, Σ₂)`; Σ₁ must be positive definite on the grid.
pub fn divergence_d(p1: &ScaledVolPath, p2: &ScaledVolPath) -> Result<f64> {
    let (three, square) = divergence_forms(p1, p2)?;
    debug_assert!(
        (three - square).abs() <= 1e-9 * square.abs().max(1e-3),
        "divergence forms disagree: {three} vs {square}"
    );
    Ok(square)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct L2Sandwich {
    pub l2: f64,
    pub d: f64,
    pub c1: f64,
    pub c2: f64,
    pub holds: bool,
}

/// Checks `C₁ ∫|Σ₁−Σ₂|² ≤ D(Σ₁,Σ₂) ≤ C₂ ∫|Σ₁−Σ₂|²` with Frobenius norm.
///
/// With `ã = a/v` and grid suprema `‖Σ₁⁻¹‖ ≤ s_inv`, `‖Σ_k‖ ≤ s_k`:
/// `C₂ = ¼ (s_inv / ã_min)^{3/2} ã_max²` and
/// `C₁ = ¼ ã_min² / (√(ã_max s₁) (√(ã_max s₁) + √(ã_max s₂))²)`.
pub fn l2_sandwich_check(p1: &ScaledVolPath, p2: &ScaledVolPath) -> Result<L2Sandwich> {
    p1.same_grid(p2)?;
    let d = divergence_d(p1, p2)?;
    let sq: Vec<f64> = p1.sigma.iter().zip(&p2.sigma).map(|(a, b)| (a - b).norm_squared()).collect();
    let l2 = trapezoid(&p1.times, &sq);

    let (mut a_min, mut a_max) = (f64::INFINITY, 0.0_f64);
    for k in 0..p1.times.len() {
        for (a, v) in p1.intensity[k].iter().zip(&p1.noise).chain(p2.intensity[k].iter().zip(&p2.noise)) {
            a_min = a_min.min(a / v);
            a_max = a_max.max(a / v);
        }
    }
    let (mut s_inv, mut s1, mut s2) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (a, b) in p1.sigma.iter().zip(&p2.sigma) {
        let e = EigenFactorization::new(a);
        let lmin = e.lambda[e.lambda.len() - 1];
        if !(lmin > 0.0) {
            return Err(Error::Singular);
        }
        s_inv = s_inv.max(1.0 / lmin);
        s1 = s1.max(e.lambda[0]);
        s2 = s2.max(EigenFactorization::new(b).lambda[0].max(0.0));
    }
    let c2 = 0.25 * (s_inv / a_min).powf(1.5) * a_max * a_max;
    let r1 = (a_max * s1).sqrt();
    let r2 = (a_max * s2).sqrt();
    let c1 = 0.25 * a_min * a_min / (r1 * (r1 + r2).powi(2));
    let slack = 1e-12 * (d.abs() + c2 * l2) + 1e-300;
    let holds = c1 * l2 <= d + slack && d <= c2 * l2 + slack;
    Ok(L2Sandwich { l2, d, c1, c2, holds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MseGrid {
    /// `x_i = 0.1 i`.
    Mse1,
    /// `x_i = 0.1 + 0.1 i`.
    Mse2,
}

impl MseGrid {
    pub fn points(self) -> Vec<f64> {
        let off = match self {
            MseGrid::Mse1 => 0.0,
            MseGrid::Mse2 => 0.1,
        };
        (1..=20).map(|i| off + 0.1 * i as f64).collect()
    }
}

/// Root-mean-square error of `Σ(·, θ)` against `truth` on an evaluation grid.
///
/// One-dimensional models are compared at `t = 0` over the 20 grid points.
/// Two-dimensional models are compared over `t_j = 0.05 j` and all pairs
/// `(x_i, x_l)`, i.e. 8000 points, summing squared entries.
pub fn mse_grid(model: &dyn VolModel, theta: &[f64], truth: &dyn Fn(f64, &[f64]) -> Mat, grid: MseGrid) -> f64 {
    let xs = grid.points();
    if model.dim() == 1 {
        let s: f64 = xs.iter().map(|&x| (model.eval(theta, 0.0, &[x]) - truth(0.0, &[x])).norm_squared()).sum();
        return (s / xs.len() as f64).sqrt();
    }
    let ts: Vec<f64> = (1..=20).map(|j| 0.05 * j as f64).collect();
    let mut s = 0.0;
    for &t in &ts {
        for &xi in &xs {
            for &xl in &xs {
                let x = [xi, xl];
                s += (model.eval(theta, t, &x) - truth(t, &x)).norm_squared();
            }
        }
    }
    (s / (ts.len() * xs.len() * xs.len()) as f64).sqrt()
}

/// `∂Σ/∂θ_p` for every parameter, from the model's vector-Jacobian product.
pub fn sigma_jacobian(model: &dyn VolModel, theta: &[f64], t: f64, x: &[f64]) -> Vec<Mat> {
    let g = model.dim();
    let mut out = vec![Mat::zeros(g, g); theta.len()];
    for k in 0..g {
        for l in k..g {
            let mut gbar = Mat::zeros(g, g);
            gbar[(k, l)] += 0.5;
            gbar[(l, k)] += 0.5;
            for (p, d) in model.vjp(theta, t, x, &gbar).into_iter().enumerate() {
                out[p][(k, l)] = d;
                out[p][(l, k)] = d;
            }
        }
    }
    out
}

/// Model Σ evaluated along a truth path at the given states.
pub fn model_path(model: &dyn VolModel, theta: &[f64], truth: &ScaledVolPath, states: &[Vec<f64>]) -> Result<ScaledVolPath> {
    let sigma = truth.times.iter().zip(states).map(|(&t, x)| model.eval(theta, t, x)).collect();
    truth.with_sigma(sigma)
}

struct Local {
    d: Mat,
    dd: Vec<Mat>,
    dsqrt: Vec<Mat>,
}

fn local(model: &dyn VolModel, theta: &[f64], truth: &ScaledVolPath, k: usize, x: &[f64]) -> Result<Local> {
    let t = truth.times[k];
    let d = truth.scale(k, &model.eval(theta, t, x));
    let dd: Vec<Mat> = sigma_jacobian(model, theta, t, x).iter().map(|m| truth.scale(k, m)).collect();
    let dsqrt = dd.iter().map(|m| sym_sqrt_derivative(&d, m)).collect::<Result<Vec<_>>>()?;
    Ok(Local { d, dd, dsqrt })
}

fn check_states(truth: &ScaledVolPath, states: &[Vec<f64>]) -> Result<()> {
    if states.len() != truth.times.len() {
        return Err(Error::ShapeMismatch("one state per grid point required".into()));
    }
    Ok(())
}

/// `Γ₂ = ∂²_θ D(Σ(θ), Σ_†)` in closed form, second derivatives of `𝒟^{1/2}`
/// by central differences of the analytic first derivative.
pub fn gamma2(model: &dyn VolModel, theta: &[f64], truth: &ScaledVolPath, states: &[Vec<f64>]) -> Result<Mat> {
    check_states(truth, states)?;
    let p = theta.len();
    let vals = (0..truth.times.len())
        .into_par_iter()
        .map(|k| -> Result<Mat> {
            let x = &states[k];
            let here = local(model, theta, truth, k, x)?;
            let r = sym_inv_sqrt(&here.d)?;
            let dt = truth.scaled(k);
            let m = Mat::identity(dt.nrows(), dt.nrows()) - &r * &dt * &r;
            // ∂_j (∂_i 𝒟^{1/2}) for all i
            let mut second: Vec<Vec<Mat>> = Vec::with_capacity(p);
            for j in 0..p {
                let h = 1e-4 * (1.0 + theta[j].abs());
                let mut tp = theta.to_vec();
                let mut tm = theta.to_vec();
                tp[j] += h;
                tm[j] -= h;
                let up = local(model, &tp, truth, k, x)?;
                let dn = local(model, &tm, truth, k, x)?;
                second.push((0..p).map(|i| (&up.dsqrt[i] - &dn.dsqrt[i]) / (2.0 * h)).collect());
            }
            let rq: Vec<Mat> = here.dsqrt.iter().map(|q| q * &r).collect();
            let mut g = Mat::zeros(p, p);
            for i in 0..p {
                for j in i..p {
                    let d2 = symmetrize(&((&second[j][i] + &second[i][j]) * 0.5));
                    let curv = (&d2 * &m).trace();
                    let cross = (&dt * &r * &rq[i] * &rq[j]).trace() + (&dt * &r * &rq[j] * &rq[i]).trace();
                    g[(i, j)] = 0.25 * (curv + cross);
                    g[(j, i)] = g[(i, j)];
                }
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid_mat(&truth.times, &vals))
}

/// `Γ₁` at `θ`: the variance of the normalised score, including the 𝔎₁ and
/// 𝔎₂ terms driven by `C = 𝒟_† − 𝒟_θ`. Off-diagonal entries use polarisation.
pub fn gamma1(model: &dyn VolModel, theta: &[f64], truth: &ScaledVolPath, states: &[Vec<f64>]) -> Result<Mat> {
    check_states(truth, states)?;
    let p = theta.len();
    let vals = (0..truth.times.len())
        .into_par_iter()
        .map(|k| -> Result<Mat> {
            let here = local(model, theta, truth, k, &states[k])?;
            let r = sym_inv_sqrt(&here.d)?;
            let c = truth.scaled(k) - &here.d;
            let kk = |a: &Mat| -> Result<f64> { Ok(frak_k1(&here.d, a, &c)? + frak_k2(&here.d, a, &c)?) };
            let mut g = Mat::zeros(p, p);
            for i in 0..p {
                for j in i..p {
                    let base = 0.5
                        * ((&r * &here.dsqrt[i] * &here.dsqrt[j]).trace()
                            + (&r * &here.dsqrt[j] * &here.dsqrt[i]).trace());
                    let corr = if i == j {
                        kk(&here.dd[i])?
                    } else {
                        0.25 * (kk(&(&here.dd[i] + &here.dd[j]))? - kk(&(&here.dd[i] - &here.dd[j]))?)
                    };
                    g[(i, j)] = 0.5 * (base + corr);
                    g[(j, i)] = g[(i, j)];
                }
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid_mat(&truth.times, &vals))
}

/// Standard errors of the bias-corrected estimator:
/// `sqrt(diag(Γ₂⁻¹ Γ₁ Γ₂⁻¹) / √b_n)`.
pub fn standard_errors(gamma1: &Mat, gamma2: &Mat, b_n: f64) -> Result<Vec<f64>> {
    let inv = gamma2.clone().try_inverse().ok_or(Error::Singular)?;
    let cov = &inv * gamma1 * &inv / b_n.sqrt();
    Ok(cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect())
}
