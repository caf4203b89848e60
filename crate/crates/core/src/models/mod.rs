//! Volatility model families `Σ(t, x, θ)`.
//!
//! Every family maps a time `t` and explanatory vector `x` to a γ×γ symmetric
//! matrix and supplies the vector-Jacobian product
//! `θ ↦ ∂⟨Ḡ, Σ(t, x, θ)⟩/∂θ` with `⟨A, B⟩ = Σ_ij A_ij B_ij`.

mod adadelta;
mod cir;
mod constant;
mod nn;
mod poly;

pub use adadelta::Adadelta;
pub use cir::{CirModel, SeasonalCirModel, SEASONAL_ABC};
pub use constant::ConstantModel;
pub use nn::{NeuralNet, NnCache};
pub use poly::PolyModel;

use serde::{Deserialize, Serialize};

use crate::Mat;

pub trait VolModel: Send + Sync {
    /// Output dimension γ.
    fn dim(&self) -> usize;
    fn n_params(&self) -> usize;
    fn eval(&self, theta: &[f64], t: f64, x: &[f64]) -> Mat;
    /// `∂⟨Ḡ, Σ⟩/∂θ` for symmetric `Ḡ`.
    fn vjp(&self, theta: &[f64], t: f64, x: &[f64], gbar: &Mat) -> Vec<f64>;
}

/// Serializable description of a model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Cir,
    SeasonalCir {
        #[serde(default = "default_abc")]
        abc: [f64; 3],
    },
    Poly {
        degree: usize,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Constant {
        dim: usize,
    },
    NeuralNet {
        dim: usize,
        input_dim: usize,
        hidden: Vec<usize>,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_abc() -> [f64; 3] {
    SEASONAL_ABC
}

fn default_eps() -> f64 {
    1e-4
}

impl ModelSpec {
    pub fn build(&self) -> Box<dyn VolModel> {
        match self {
            ModelSpec::Cir => Box::new(CirModel),
            ModelSpec::SeasonalCir { abc } => Box::new(SeasonalCirModel { abc: *abc }),
            ModelSpec::Poly { degree, eps } => Box::new(PolyModel::new(*degree, *eps)),
            ModelSpec::Constant { dim } => Box::new(ConstantModel::new(*dim)),
            ModelSpec::NeuralNet { dim, input_dim, hidden, eps } => {
                Box::new(NeuralNet::new(*dim, *input_dim, hidden.clone(), *eps))
            }
        }
    }
}

/// Central finite-difference check helper shared by tests.
#[cfg(test)]
pub(crate) fn fd_vjp(m: &dyn VolModel, theta: &[f64], t: f64, x: &[f64], g: &Mat) -> Vec<f64> {
    let h = 1e-6;
    (0..theta.len())
        .map(|i| {
            let mut p = theta.to_vec();
            let mut q = theta.to_vec();
            p[i] += h;
            q[i] -= h;
            (m.eval(&p, t, x) - m.eval(&q, t, x)).component_mul(g).sum() / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
pub(crate) fn assert_vjp(m: &dyn VolModel, theta: &[f64], t: f64, x: &[f64], g: &Mat) {
    let a = m.vjp(theta, t, x, g);
    let f = fd_vjp(m, theta, t, x, g);
    let scale = f.iter().fold(1e-8_f64, |s, v| s.max(v.abs()));
    for (u, v) in a.iter().zip(&f) {
        assert!((u - v).abs() <= 1e-5 * scale, "vjp {u} vs fd {v}");
    }
}
