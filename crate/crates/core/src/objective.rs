//! Objective evaluation for any model and the fitting loops.
//!
//! A [`Problem`] fixes one dataset: usable blocks, `v̂`, and the pre-averaged
//! `B_{m,n}`, `â_m`. Each objective is a sum of per-block terms that depend on
//! `Σ_m = Σ(s_{m-1}, X̂_{m-1}, θ)`; the per-block gradient in `Σ_m` is pulled
//! back to `θ` through the model's vector-Jacobian product.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias_fast::{bias_terms, check_block, check_kappa, dot_block, dot_prefactor, PreAveraged, WeightFn};
use crate::models::{Adadelta, VolModel};
use crate::observation::{estimate_noise_variance, BlockLayout, ObservationSet};
use crate::quasilik::{block_loglik, Prepared};
use crate::{pairwise_sum, Error, Mat, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Quasi-log-likelihood `H_n`.
    H,
    /// Bias-corrected `Ȟ_n`.
    Check,
    /// Fast `Ḣ_n`.
    Dot,
}

#[derive(Debug, Clone)]
pub struct Eval {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub prep: Prepared,
    pub v_hat: Vec<f64>,
    pub preavg: PreAveraged,
}

impl Problem {
    /// Uses blocks with at least two increments per component so that every
    /// objective runs over the same set of blocks.
    pub fn new(obs: &ObservationSet, layout: BlockLayout) -> Result<Self> {
        let v_hat = estimate_noise_variance(obs, &layout);
        Self::with_noise(obs, layout, v_hat)
    }

    pub fn with_noise(obs: &ObservationSet, layout: BlockLayout, v_hat: Vec<f64>) -> Result<Self> {
        let prep = Prepared::new(obs, layout, 2)?;
        let preavg = PreAveraged::compute(&prep.blocks, &prep.layout, &v_hat, &WeightFn::triangle())?;
        Ok(Self { prep, v_hat, preavg })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.prep.layout
    }

    pub fn n_blocks_used(&self) -> usize {
        self.prep.blocks.len()
    }

    fn block_term(&self, kind: ObjectiveKind, idx: usize, sigma: &Mat) -> Result<(f64, Mat)> {
        let blk = &self.prep.blocks[idx];
        let (b, a) = (&self.preavg.b[idx], &self.preavg.a_hat[idx]);
        match kind {
            ObjectiveKind::H => block_loglik(sigma, &self.v_hat, blk),
            ObjectiveKind::Check => check_block(sigma, &self.v_hat, blk, b, a, check_kappa(self.layout())),
            ObjectiveKind::Dot => dot_block(sigma, b, a, dot_prefactor(self.layout()), blk.m),
        }
    }

    /// Value and θ-gradient of the chosen objective.
    pub fn evaluate(&self, model: &dyn VolModel, theta: &[f64], kind: ObjectiveKind) -> Result<Eval> {
        let parts: Vec<Result<(f64, Vec<f64>)>> = (0..self.prep.blocks.len())
            .into_par_iter()
            .map(|i| {
                let blk = &self.prep.blocks[i];
                let sigma = model.eval(theta, blk.t, &blk.x);
                let (v, g) = self.block_term(kind, i, &sigma)?;
                Ok((v, model.vjp(theta, blk.t, &blk.x, &g)))
            })
            .collect();
        let mut values = Vec::with_capacity(parts.len());
        let mut grad = vec![0.0; theta.len()];
        for p in parts {
            let (v, g) = p?;
            values.push(v);
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let value = pairwise_sum(&values);
        if !value.is_finite() {
            return Err(Error::NonFinite);
        }
        // the term-by-term form costs as much again, so only small problems are cross-checked
        #[cfg(debug_assertions)]
        if kind == ObjectiveKind::Check && self.prep.blocks.iter().map(|b| b.z.len()).sum::<usize>() <= 2000 {
            let def = self.check_definitional(model, theta)?;
            debug_assert!(
                (def - value).abs() <= 1e-8 * (1.0 + value.abs()),
                "bias-corrected forms disagree: {def} vs {value}"
            );
        }
        Ok(Eval { value, grad })
    }

    /// `H_n + ½ Σ_m G_m(â_m, Σ_m, B_{m,n}, v̂)` evaluated term by term.
    pub fn check_definitional(&self, model: &dyn VolModel, theta: &[f64]) -> Result<f64> {
        let parts: Vec<Result<f64>> = (0..self.prep.blocks.len())
            .into_par_iter()
            .map(|i| {
                let blk = &self.prep.blocks[i];
                let sigma = model.eval(theta, blk.t, &blk.x);
                let (h, _) = block_loglik(&sigma, &self.v_hat, blk)?;
                let (_, _, g) =
                    bias_terms(&self.preavg.a_hat[i], &sigma, &self.preavg.b[i], &self.v_hat, blk, self.layout())?;
                Ok(h + 0.5 * g)
            })
            .collect();
        let vals = parts.into_iter().collect::<Result<Vec<f64>>>()?;
        Ok(pairwise_sum(&vals))
    }
}

/// Maximises `f` on `[lo, hi]` by golden-section search.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Zero of a decreasing derivative `g` on `[lo, hi]`. If `g` does not change
/// sign the endpoint it points to is returned.
pub fn gradient_root(g: &mut dyn FnMut(f64) -> Result<f64>, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let (mut glo, mut ghi) = (g(lo)?, g(hi)?);
    if glo <= 0.0 {
        return Ok(lo);
    }
    if ghi >= 0.0 {
        return Ok(hi);
    }
    let mut side = 0;
    let mut prev = f64::NAN;
    for _ in 0..200 {
        let x = (lo * ghi - hi * glo) / (ghi - glo);
        let gx = g(x)?;
        if gx == 0.0 {
            return Ok(x);
        }
        if gx > 0.0 {
            lo = x;
            glo = gx;
            if side == 1 {
                ghi *= 0.5;
            }
            side = 1;
        } else {
            hi = x;
            ghi = gx;
            if side == -1 {
                glo *= 0.5;
            }
            side = -1;
        }
        if hi - lo <= tol || (x - prev).abs() <= 0.1 * tol {
            return Ok(x);
        }
        prev = x;
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Optimizer {
    /// One-parameter bracketed search.
    GoldenSection { lo: f64, hi: f64, tol: f64 },
    /// One-parameter root of the gradient on a bracket (Illinois false position).
    GradientRoot { lo: f64, hi: f64, tol: f64 },
    /// Gradient ascent with Barzilai–Borwein steps and backtracking.
    LineSearch { max_iter: usize, tol: f64 },
    /// ADADELTA on the loss `-objective`, one randomly chosen dataset per step.
    Adadelta { epochs: usize, rho: f64, eps: f64, weight_decay: f64, lr: f64 },
}

impl Optimizer {
    pub fn adadelta(epochs: usize) -> Self {
        Optimizer::Adadelta { epochs, rho: 0.95, eps: 1e-6, weight_decay: 0.005, lr: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitTrace {
    pub theta: Vec<f64>,
    /// Objective value per iteration (per epoch for ADADELTA).
    pub values: Vec<f64>,
    /// Parameters recorded at the requested epochs.
    pub checkpoints: Vec<(usize, Vec<f64>)>,
    pub rejected_steps: usize,
}

fn sum_over(problems: &[Problem], model: &dyn VolModel, theta: &[f64], kind: ObjectiveKind) -> Result<Eval> {
    let mut value = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for p in problems {
        let e = p.evaluate(model, theta, kind)?;
        value += e.value;
        for (a, b) in grad.iter_mut().zip(&e.grad) {
            *a += b;
        }
    }
    Ok(Eval { value, grad })
}

/// Maximises the summed objective over `problems` starting from `theta0`.
pub fn fit_argmax(
    problems: &[Problem],
    model: &dyn VolModel,
    theta0: &[f64],
    kind: ObjectiveKind,
    opt: &Optimizer,
    seed: u64,
    checkpoints: &[usize],
) -> Result<FitTrace> {
    if problems.is_empty() {
        return Err(Error::BadConfig("no datasets".into()));
    }
    match opt {
        Optimizer::GoldenSection { lo, hi, tol } => {
            if theta0.len() != 1 {
                return Err(Error::BadConfig("golden section needs a one-parameter model".into()));
            }
            let mut values = Vec::new();
            let x = golden_section(
                |s| {
                    let v = sum_over(problems, model, &[s], kind).map(|e| e.value).unwrap_or(f64::NEG_INFINITY);
                    values.push(v);
                    v
                },
                *lo,
                *hi,
                *tol,
            );
            let v = sum_over(problems, model, &[x], kind)?.value;
            values.push(v);
            Ok(FitTrace { theta: vec![x], values, checkpoints: Vec::new(), rejected_steps: 0 })
        }
        Optimizer::GradientRoot { lo, hi, tol } => {
            if theta0.len() != 1 {
                return Err(Error::BadConfig("gradient root search needs a one-parameter model".into()));
            }
            let mut values = Vec::new();
            let mut eval = |s: f64| -> Result<f64> {
                let e = sum_over(problems, model, &[s], kind)?;
                values.push(e.value);
                Ok(e.grad[0])
            };
            let x = gradient_root(&mut eval, *lo, *hi, *tol)?;
            Ok(FitTrace { theta: vec![x], values, checkpoints: Vec::new(), rejected_steps: 0 })
        }
        Optimizer::LineSearch { max_iter, tol } => line_search(problems, model, theta0, kind, *max_iter, *tol),
        Optimizer::Adadelta { epochs, rho, eps, weight_decay, lr } => {
            let mut state = Adadelta::new(theta0.len(), *rho, *eps, *weight_decay);
            state.lr = *lr;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut theta = theta0.to_vec();
            let mut values = Vec::with_capacity(*epochs);
            let mut saved = Vec::new();
            let mut rejected = 0;
            let mut streak = 0;
            for epoch in 1..=*epochs {
                let p = &problems[rng.gen_range(0..problems.len())];
                match p.evaluate(model, &theta, kind) {
                    Ok(e) => {
                        streak = 0;
                        values.push(e.value);
                        let loss_grad: Vec<f64> = e.grad.iter().map(|g| -g).collect();
                        state.step(&mut theta, &loss_grad);
                    }
                    Err(Error::NotPd { .. }) | Err(Error::NonFinite) => {
                        rejected += 1;
                        streak += 1;
                        values.push(f64::NAN);
                        if streak > 50 {
                            return Err(Error::NonFinite);
                        }
                    }
                    Err(e) => return Err(e),
                }
                if checkpoints.contains(&epoch) {
                    saved.push((epoch, theta.clone()));
                }
            }
            Ok(FitTrace { theta, values, checkpoints: saved, rejected_steps: rejected })
        }
    }
}

fn line_search(
    problems: &[Problem],
    model: &dyn VolModel,
    theta0: &[f64],
    kind: ObjectiveKind,
    max_iter: usize,
    tol: f64,
) -> Result<FitTrace> {
    let eval = |t: &[f64]| sum_over(problems, model, t, kind);
    let mut theta = theta0.to_vec();
    let mut cur = eval(&theta)?;
    let mut values = vec![cur.value];
    let mut step = 1e-3 / cur.grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-12);
    let mut rejected = 0;
    for _ in 0..max_iter {
        let gnorm2: f64 = cur.grad.iter().map(|g| g * g).sum();
        if gnorm2.sqrt() <= tol * (1.0 + cur.value.abs()) {
            break;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&cur.grad).map(|(t, g)| t + step * g).collect();
            match eval(&cand) {
                Ok(e) if e.value >= cur.value + 1e-4 * step * gnorm2 => {
                    accepted = Some((cand, e));
                    break;
                }
                Ok(_) | Err(Error::NotPd { .. }) | Err(Error::NonFinite) => {
                    rejected += 1;
                    step *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        let Some((cand, e)) = accepted else { break };
        // Barzilai–Borwein step for the next iteration
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = e.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy < 0.0 { ss / -sy } else { step * 2.0 };
        let rel = (e.value - cur.value).abs() / (1.0 + cur.value.abs());
        theta = cand;
        cur = e;
        values.push(cur.value);
        if rel < 1e-14 {
            break;
        }
    }
    Ok(FitTrace { theta, values, checkpoints: Vec::new(), rejected_steps: rejected })
}
