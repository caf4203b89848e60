use serde::{Deserialize, Serialize};

/// ADADELTA state for minimising a loss.
///
/// `E[g²] ← ρE[g²] + (1−ρ)g²`, `Δ = −√(E[Δ²]+ε)/√(E[g²]+ε)·g`,
/// `E[Δ²] ← ρE[Δ²] + (1−ρ)Δ²`, `θ ← θ + lr·Δ`. Weight decay adds
/// `2·wd·θ` to the loss gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adadelta {
    pub rho: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub acc_grad: Vec<f64>,
    pub acc_update: Vec<f64>,
}

impl Adadelta {
    pub fn new(n: usize, rho: f64, eps: f64, weight_decay: f64) -> Self {
        Self { rho, eps, weight_decay, lr: 1.0, acc_grad: vec![0.0; n], acc_update: vec![0.0; n] }
    }

    /// One step on `theta` given the loss gradient.
    pub fn step(&mut self, theta: &mut [f64], loss_grad: &[f64]) {
        let (rho, eps) = (self.rho, self.eps);
        for i in 0..theta.len() {
            let g = loss_grad[i] + 2.0 * self.weight_decay * theta[i];
            self.acc_grad[i] = rho * self.acc_grad[i] + (1.0 - rho) * g * g;
            let dx = -((self.acc_update[i] + eps).sqrt() / (self.acc_grad[i] + eps).sqrt()) * g;
            self.acc_update[i] = rho * self.acc_update[i] + (1.0 - rho) * dx * dx;
            theta[i] += self.lr * dx;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_move() {
        let mut a = Adadelta::new(2, 0.95, 1e-6, 0.0);
        let mut th = vec![1.0, -2.0];
        a.step(&mut th, &[0.0, 0.0]);
        assert_eq!(th, vec![1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_by_hand() {
        let (rho, eps) = (0.95, 1e-6);
        let mut a = Adadelta::new(1, rho, eps, 0.0);
        let mut th = vec![0.0];
        let (mut eg, mut ex, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..3 {
            a.step(&mut th, &[2.0]);
            eg = rho * eg + (1.0 - rho) * 4.0;
            let dx = -((ex + eps).sqrt() / (eg + eps).sqrt()) * 2.0;
            ex = rho * ex + (1.0 - rho) * dx * dx;
            x += dx;
            assert!((th[0] - x).abs() < 1e-15);
        }
        assert!(th[0] < 0.0);
    }
}
