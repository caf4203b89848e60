use crate::Mat;

use super::VolModel;

/// Scalar polynomial family
/// `Σ(t, x, β) = (β₀ + Σ_{j≤p} (β_j t^j + β_{j+p} x^j))² + ε`.
#[derive(Debug, Clone, Copy)]
pub struct PolyModel {
    pub degree: usize,
    pub eps: f64,
}

impl PolyModel {
    pub fn new(degree: usize, eps: f64) -> Self {
        assert!((1..=3).contains(&degree), "polynomial degree must be 1, 2 or 3");
        Self { degree, eps }
    }

    fn features(&self, t: f64, x: f64) -> Vec<f64> {
        let p = self.degree;
        let mut f = vec![0.0; 2 * p + 1];
        f[0] = 1.0;
        for j in 1..=p {
            f[j] = t.powi(j as i32);
            f[j + p] = x.powi(j as i32);
        }
        f
    }
}

impl VolModel for PolyModel {
    fn dim(&self) -> usize {
        1
    }

    fn n_params(&self) -> usize {
        2 * self.degree + 1
    }

    fn eval(&self, theta: &[f64], t: f64, x: &[f64]) -> Mat {
        let s: f64 = self.features(t, x[0]).iter().zip(theta).map(|(f, b)| f * b).sum();
        Mat::from_element(1, 1, s * s + self.eps)
    }

    fn vjp(&self, theta: &[f64], t: f64, x: &[f64], g: &Mat) -> Vec<f64> {
        let f = self.features(t, x[0]);
        let s: f64 = f.iter().zip(theta).map(|(f, b)| f * b).sum();
        f.iter().map(|fi| g[(0, 0)] * 2.0 * s * fi).collect()
    }
}
