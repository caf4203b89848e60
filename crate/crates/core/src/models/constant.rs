use crate::Mat;

use super::VolModel;

/// Time- and state-independent `Σ = LLᵀ`, `L` lower triangular.
///
/// Parameters are the entries of `L` in row-major lower-triangular order, so
/// for γ = 1 this is `Σ = σ²`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantModel {
    pub dim: usize,
}

impl ConstantModel {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    fn lower(&self, theta: &[f64]) -> Mat {
        let mut l = Mat::zeros(self.dim, self.dim);
        let mut p = 0;
        for i in 0..self.dim {
            for j in 0..=i {
                l[(i, j)] = theta[p];
                p += 1;
            }
        }
        l
    }
}

impl VolModel for ConstantModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_params(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    fn eval(&self, theta: &[f64], _t: f64, _x: &[f64]) -> Mat {
        let l = self.lower(theta);
        &l * l.transpose()
    }

    fn vjp(&self, theta: &[f64], _t: f64, _x: &[f64], g: &Mat) -> Vec<f64> {
        let l = self.lower(theta);
        let dl = (g + g.transpose()) * l;
        let mut out = Vec::with_capacity(self.n_params());
        for i in 0..self.dim {
            for j in 0..=i {
                out.push(dl[(i, j)]);
            }
        }
        out
    }
}
