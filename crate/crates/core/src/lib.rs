//! Estimation of the co-volatility function Σ(t, x) of a multi-dimensional
//! diffusion from noisy, nonsynchronous high-frequency observations.
//!
//! The crate is organised bottom-up:
//!
//! - [`matan`]: symmetric square roots, their derivatives, the half-Sylvester
//!   operator φ_B and closed-form matrix integrals.
//! - [`sim`]: CIR-type path simulation, Poisson sampling and noisy observation.
//! - [`observation`]: block partition, increments, overlap matrices, noise
//!   variance estimate.
//! - [`quasilik`]: block covariance assembly and the quasi-log-likelihood H_n.
//! - [`bias_fast`]: pre-averaging, the bias-corrected objective Ȟ_n and the
//!   fast objective Ḣ_n.
//! - [`models`]: parametric, polynomial and neural-network volatility models,
//!   plus the ADADELTA optimizer.
//! - [`objective`]: one entry point evaluating any objective for any model,
//!   and the fitting loops built on it.
//! - [`metrics`]: divergence D, L² sandwich, MSE grids and Γ₁/Γ₂.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bias_fast;
pub mod error;
pub mod matan;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod observation;
pub mod quasilik;
pub mod sim;

pub use error::{Error, Result};

/// Dense real matrix used throughout.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense real vector used throughout.
pub type Vector = nalgebra::DVector<f64>;

/// Pairwise summation; gives the same result for the same input order.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}
