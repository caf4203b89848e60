//! Path simulation, Poisson sampling times and noisy observations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::models::SEASONAL_ABC;
use crate::observation::{ObservationSet, Series};
use crate::{Error, Mat, Result};

/// Latent diffusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathModel {
    /// `dY = (α₁ − α₂Y)dt + σ√Y dW`.
    Cir1d { alpha1: f64, alpha2: f64, sigma: f64, y0: f64 },
    /// `dY¹ = (α₁ − α₃Y¹)dt + f(t)σ₁√Y¹ dW¹`,
    /// `dY² = (α₂ − α₄Y²)dt + f(t)√Y²(σ₃dW¹ + σ₂dW²)`, `f(t) = at² + bt + c`.
    Cir2dSeasonal { alpha: [f64; 4], abc: [f64; 3], sigma: [f64; 3], y0: [f64; 2] },
    /// Brownian motion with constant covariance.
    Brownian { cov: Vec<Vec<f64>>, y0: Vec<f64> },
}

impl PathModel {
    pub fn cir_default() -> Self {
        PathModel::Cir1d { alpha1: 1.0, alpha2: 1.0, sigma: 1.0, y0: 1.0 }
    }

    pub fn seasonal_default() -> Self {
        PathModel::Cir2dSeasonal { alpha: [1.0; 4], abc: SEASONAL_ABC, sigma: [1.0, 0.75f64.sqrt(), 0.5], y0: [1.0, 1.0] }
    }

    pub fn dim(&self) -> usize {
        match self {
            PathModel::Cir1d { .. } => 1,
            PathModel::Cir2dSeasonal { .. } => 2,
            PathModel::Brownian { y0, .. } => y0.len(),
        }
    }

    fn cov_matrix(cov: &[Vec<f64>]) -> Mat {
        let g = cov.len();
        Mat::from_fn(g, g, |i, j| cov[i][j])
    }

    /// True `Σ_†(t, y)`.
    pub fn true_sigma(&self, t: f64, y: &[f64]) -> Mat {
        match self {
            PathModel::Cir1d { sigma, .. } => Mat::from_element(1, 1, sigma * sigma * y[0].max(0.0)),
            PathModel::Cir2dSeasonal { abc, sigma, .. } => {
                let f = abc[0] * t * t + abc[1] * t + abc[2];
                let (y1, y2) = (y[0].max(0.0), y[1].max(0.0));
                let c = sigma[0] * sigma[2] * (y1 * y2).sqrt();
                Mat::from_row_slice(2, 2, &[sigma[0].powi(2) * y1, c, c, (sigma[1].powi(2) + sigma[2].powi(2)) * y2])
                    * (f * f)
            }
            PathModel::Brownian { cov, .. } => Self::cov_matrix(cov),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PathModel::Cir1d { alpha1, sigma, y0, .. } => {
                // equality admitted so that the degenerate σ = α = 0 path is allowed
                if !(2.0 * alpha1 >= sigma * sigma) {
                    return Err(Error::BadConfig("CIR requires 2α₁ > σ²".into()));
                }
                if *y0 < 0.0 {
                    return Err(Error::BadConfig("CIR start must be nonnegative".into()));
                }
            }
            PathModel::Cir2dSeasonal { y0, .. } => {
                if y0.iter().any(|v| *v < 0.0) {
                    return Err(Error::BadConfig("CIR start must be nonnegative".into()));
                }
            }
            PathModel::Brownian { cov, y0 } => {
                let g = y0.len();
                if cov.len() != g || cov.iter().any(|r| r.len() != g) {
                    return Err(Error::BadConfig("covariance shape does not match start".into()));
                }
                crate::matan::sym_sqrt(&Self::cov_matrix(cov)).map_err(|_| Error::BadConfig("covariance not PSD".into()))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub horizon: f64,
    pub grid_steps: usize,
    pub model: PathModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// `λ_k` per component.
    pub rates: Vec<f64>,
    /// Frequency scale; arrivals have intensity `λ_k n`.
    pub n: f64,
    /// `v*_k` per component.
    pub noise_var: Vec<f64>,
}

impl SamplingConfig {
    /// Grid resolution of 20 Euler steps per expected inter-arrival.
    pub fn default_grid_steps(&self, horizon: f64) -> usize {
        let lmax = self.rates.iter().cloned().fold(0.0, f64::max);
        (20.0 * lmax * self.n * horizon).ceil().max(10.0) as usize
    }

    fn validate(&self) -> Result<()> {
        if self.rates.iter().any(|r| !(*r > 0.0)) || self.noise_var.iter().any(|v| *v < 0.0) || !(self.n >= 1.0) {
            return Err(Error::BadConfig("need λ > 0, v* ≥ 0, n ≥ 1".into()));
        }
        if self.rates.len() != self.noise_var.len() {
            return Err(Error::BadConfig("rates and noise variances differ in length".into()));
        }
        Ok(())
    }
}

/// Latent path on a uniform grid.
#[derive(Debug, Clone)]
pub struct DensePath {
    pub horizon: f64,
    pub dt: f64,
    /// `values[k][i]` is component `k` at time `i·dt`.
    pub values: Vec<Vec<f64>>,
    /// Euler steps at which the raw CIR state went negative.
    pub truncated_steps: usize,
}

impl DensePath {
    /// Linear interpolation of component `k` at time `t`.
    pub fn value_at(&self, k: usize, t: f64) -> f64 {
        let v = &self.values[k];
        let pos = (t / self.dt).clamp(0.0, (v.len() - 1) as f64);
        let i = (pos.floor() as usize).min(v.len() - 2);
        let w = pos - i as f64;
        v[i] * (1.0 - w) + v[i + 1] * w
    }

    pub fn state_at(&self, t: f64) -> Vec<f64> {
        (0..self.values.len()).map(|k| self.value_at(k, t)).collect()
    }

    pub fn grid_len(&self) -> usize {
        self.values[0].len()
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Euler–Maruyama with full truncation (`max(Y, 0)` in drift and diffusion).
pub fn simulate_path(cfg: &PathConfig, seed: u64) -> Result<DensePath> {
    cfg.model.validate()?;
    if !(cfg.horizon > 0.0) || cfg.grid_steps < 10 {
        return Err(Error::BadConfig("need T > 0 and at least 10 grid steps".into()));
    }
    let mut rng = rng_stream(seed, 0);
    let n = cfg.grid_steps;
    let dt = cfg.horizon / n as f64;
    let sdt = dt.sqrt();
    let g = cfg.model.dim();
    let mut values = vec![Vec::with_capacity(n + 1); g];
    let mut truncated = 0;
    match &cfg.model {
        PathModel::Cir1d { alpha1, alpha2, sigma, y0 } => {
            let mut y = *y0;
            values[0].push(y.max(0.0));
            for _ in 0..n {
                let yp = y.max(0.0);
                let dw: f64 = rng.sample::<f64, _>(StandardNormal) * sdt;
                y += (alpha1 - alpha2 * yp) * dt + sigma * yp.sqrt() * dw;
                if y < 0.0 {
                    truncated += 1;
                }
                values[0].push(y.max(0.0));
            }
        }
        PathModel::Cir2dSeasonal { alpha, abc, sigma, y0 } => {
            let (mut y1, mut y2) = (y0[0], y0[1]);
            values[0].push(y1.max(0.0));
            values[1].push(y2.max(0.0));
            for i in 0..n {
                let t = i as f64 * dt;
                let f = abc[0] * t * t + abc[1] * t + abc[2];
                let (p1, p2) = (y1.max(0.0), y2.max(0.0));
                let dw1: f64 = rng.sample::<f64, _>(StandardNormal) * sdt;
                let dw2: f64 = rng.sample::<f64, _>(StandardNormal) * sdt;
                y1 += (alpha[0] - alpha[2] * p1) * dt + f * sigma[0] * p1.sqrt() * dw1;
                y2 += (alpha[1] - alpha[3] * p2) * dt + f * p2.sqrt() * (sigma[2] * dw1 + sigma[1] * dw2);
                if y1 < 0.0 || y2 < 0.0 {
                    truncated += 1;
                }
                values[0].push(y1.max(0.0));
                values[1].push(y2.max(0.0));
            }
        }
        PathModel::Brownian { cov, y0 } => {
            let l = crate::matan::sym_sqrt(&PathModel::cov_matrix(cov))?;
            let mut y = y0.clone();
            for k in 0..g {
                values[k].push(y[k]);
            }
            for _ in 0..n {
                let dw: Vec<f64> = (0..g).map(|_| rng.sample::<f64, _>(StandardNormal) * sdt).collect();
                for k in 0..g {
                    y[k] += (0..g).map(|j| l[(k, j)] * dw[j]).sum::<f64>();
                    values[k].push(y[k]);
                }
            }
        }
    }
    Ok(DensePath { horizon: cfg.horizon, dt, values, truncated_steps: truncated })
}

/// Poisson arrival times `0 = S₀ < S₁ < … ≤ T` with intensity `λ_k n`.
pub fn sample_arrival_times(cfg: &SamplingConfig, horizon: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let mut rng = rng_stream(seed, 1);
    Ok(cfg
        .rates
        .iter()
        .map(|lam| {
            let exp = Exp::new(lam * cfg.n).expect("positive rate");
            let mut times = vec![0.0];
            let mut t = 0.0;
            loop {
                t += exp.sample(&mut rng);
                if t > horizon {
                    break;
                }
                times.push(t);
            }
            times
        })
        .collect())
}

/// Path values at `times` plus independent Gaussian noise of variance `v*_k`.
pub fn observe(path: &DensePath, times: &[Vec<f64>], noise_var: &[f64], seed: u64) -> Result<ObservationSet> {
    let mut rng = rng_stream(seed, 2);
    let comps = times
        .iter()
        .enumerate()
        .map(|(k, ts)| {
            let sd = noise_var[k].sqrt();
            let vals = ts
                .iter()
                .map(|t| path.value_at(k, *t) + sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Series::new(ts.clone(), vals)
        })
        .collect();
    ObservationSet::new(path.horizon, comps)
}

/// Everything needed to reproduce and score a simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathConfig,
    pub sampling: SamplingConfig,
    pub seed: u64,
    pub counts: Vec<usize>,
    pub truncated_steps: usize,
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub path: DensePath,
    pub obs: ObservationSet,
    pub provenance: Provenance,
}

impl SimulatedDataset {
    pub fn true_sigma(&self, t: f64) -> Mat {
        self.provenance.path.model.true_sigma(t, &self.path.state_at(t))
    }
}

pub fn simulate(path_cfg: &PathConfig, sampling: &SamplingConfig, seed: u64) -> Result<SimulatedDataset> {
    if sampling.rates.len() != path_cfg.model.dim() {
        return Err(Error::BadConfig("sampling rates must match path dimension".into()));
    }
    let path = simulate_path(path_cfg, seed)?;
    let times = sample_arrival_times(sampling, path_cfg.horizon, seed)?;
    let obs = observe(&path, &times, &sampling.noise_var, seed)?;
    let provenance = Provenance {
        path: path_cfg.clone(),
        sampling: sampling.clone(),
        seed,
        counts: obs.counts(),
        truncated_steps: path.truncated_steps,
    };
    Ok(SimulatedDataset { path, obs, provenance })
}

/// The one-dimensional CIR scenario (`T = 1`, `λ = 1`, `α₁ = α₂ = σ* = 1`).
pub fn cir_scenario(n: f64, noise_var: f64) -> (PathConfig, SamplingConfig) {
    let sampling = SamplingConfig { rates: vec![1.0], n, noise_var: vec![noise_var] };
    let path = PathConfig { horizon: 1.0, grid_steps: sampling.default_grid_steps(1.0), model: PathModel::cir_default() };
    (path, sampling)
}

/// The two-dimensional seasonal CIR scenario.
pub fn seasonal_scenario(n: f64, noise_var: f64) -> (PathConfig, SamplingConfig) {
    let sampling = SamplingConfig { rates: vec![1.0, 1.0], n, noise_var: vec![noise_var; 2] };
    let path =
        PathConfig { horizon: 1.0, grid_steps: sampling.default_grid_steps(1.0), model: PathModel::seasonal_default() };
    (path, sampling)
}
