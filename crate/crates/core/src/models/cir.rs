use crate::Mat;

use super::VolModel;

/// Seasonal polynomial coefficients `(a, b, c)` of `at² + bt + c`.
pub const SEASONAL_ABC: [f64; 3] = [1.0, -4.0 / 3.0, 2.0 / 3.0];

/// `Σ(t, x, σ) = σ² x` with `x` clipped at 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct CirModel;

impl VolModel for CirModel {
    fn dim(&self) -> usize {
        1
    }

    fn n_params(&self) -> usize {
        1
    }

    fn eval(&self, theta: &[f64], _t: f64, x: &[f64]) -> Mat {
        Mat::from_element(1, 1, theta[0] * theta[0] * x[0].max(0.0))
    }

    fn vjp(&self, theta: &[f64], _t: f64, x: &[f64], gbar: &Mat) -> Vec<f64> {
        vec![gbar[(0, 0)] * 2.0 * theta[0] * x[0].max(0.0)]
    }
}

/// Two-dimensional CIR family with known intraday seasonality:
/// `f(t)² [[σ₁²x₁, σ₁σ₃√(x₁x₂)], [σ₁σ₃√(x₁x₂), (σ₂²+σ₃²)x₂]]`, `f(t) = at² + bt + c`.
#[derive(Debug, Clone, Copy)]
pub struct SeasonalCirModel {
    pub abc: [f64; 3],
}

impl Default for SeasonalCirModel {
    fn default() -> Self {
        Self { abc: SEASONAL_ABC }
    }
}

impl SeasonalCirModel {
    pub fn seasonal(&self, t: f64) -> f64 {
        let [a, b, c] = self.abc;
        a * t * t + b * t + c
    }
}

impl VolModel for SeasonalCirModel {
    fn dim(&self) -> usize {
        2
    }

    fn n_params(&self) -> usize {
        3
    }

    fn eval(&self, th: &[f64], t: f64, x: &[f64]) -> Mat {
        let f2 = self.seasonal(t).powi(2);
        let (x1, x2) = (x[0].max(0.0), x[1].max(0.0));
        let c = th[0] * th[2] * (x1 * x2).sqrt();
        Mat::from_row_slice(2, 2, &[th[0] * th[0] * x1, c, c, (th[1] * th[1] + th[2] * th[2]) * x2]) * f2
    }

    fn vjp(&self, th: &[f64], t: f64, x: &[f64], g: &Mat) -> Vec<f64> {
        let f2 = self.seasonal(t).powi(2);
        let (x1, x2) = (x[0].max(0.0), x[1].max(0.0));
        let r = (x1 * x2).sqrt();
        let g12 = g[(0, 1)] + g[(1, 0)];
        vec![
            f2 * (g[(0, 0)] * 2.0 * th[0] * x1 + g12 * th[2] * r),
            f2 * g[(1, 1)] * 2.0 * th[1] * x2,
            f2 * (g12 * th[0] * r + g[(1, 1)] * 2.0 * th[2] * x2),
        ]
    }
}
