use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Mat, Result};

use super::VolModel;

/// Feed-forward network `Σ = bbᵀ + εI` with Swish hidden units.
///
/// Hidden layers: `u^k_j = h(Σ_l β^k_{l,j} u^{k-1}_l)`, no bias terms, input
/// `u⁰ = (t, x)`. Output: `[b]_ij = Σ_l β^K_{ij,l} u^{K-1}_l` for `i ≤ j`,
/// mirrored to `i > j`.
///
/// Parameter layout: each hidden matrix `β^k` row-major as `[l][j]`, then the
/// output weights as `[pair][l]` with pairs `(i, j), i ≤ j` in row-major
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralNet {
    pub dim: usize,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub eps: f64,
}

/// Forward-pass values needed by the backward pass.
#[derive(Debug, Clone)]
pub struct NnCache {
    /// Pre-activations of each hidden layer.
    pub pre: Vec<Vec<f64>>,
    /// `u⁰ … u^{K-1}`.
    pub acts: Vec<Vec<f64>>,
    pub b: Mat,
    pub sigma: Mat,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn swish(z: f64) -> f64 {
    z * logistic(z)
}

pub fn swish_prime(z: f64) -> f64 {
    let s = logistic(z);
    s * (1.0 + z * (1.0 - s))
}

impl NeuralNet {
    pub fn new(dim: usize, input_dim: usize, hidden: Vec<usize>, eps: f64) -> Self {
        assert!(!hidden.is_empty(), "need at least one hidden layer");
        Self { dim, input_dim, hidden, eps }
    }

    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w
    }

    fn n_pairs(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    fn n_hidden_params(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// Uniform on `±√(6/(fan_in + fan_out))` per layer.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let w = self.widths();
        let mut theta = Vec::with_capacity(self.n_params());
        for pair in w.windows(2) {
            let r = (6.0 / (pair[0] + pair[1]) as f64).sqrt();
            theta.extend((0..pair[0] * pair[1]).map(|_| rng.gen_range(-r..r)));
        }
        let last = *w.last().unwrap();
        let r = (6.0 / (last + self.n_pairs()) as f64).sqrt();
        theta.extend((0..last * self.n_pairs()).map(|_| rng.gen_range(-r..r)));
        theta
    }

    fn input(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.input_dim);
        u.push(t);
        u.extend_from_slice(x);
        debug_assert_eq!(u.len(), self.input_dim, "input is (t, x)");
        u
    }

    pub fn forward(&self, theta: &[f64], t: f64, x: &[f64]) -> NnCache {
        let w = self.widths();
        let mut acts = vec![self.input(t, x)];
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut off = 0;
        for k in 1..w.len() {
            let (lin, lout) = (w[k - 1], w[k]);
            let prev = &acts[k - 1];
            let mut z = vec![0.0; lout];
            for (l, ul) in prev.iter().enumerate() {
                let row = &theta[off + l * lout..off + (l + 1) * lout];
                for (zj, bj) in z.iter_mut().zip(row) {
                    *zj += bj * ul;
                }
            }
            off += lin * lout;
            acts.push(z.iter().map(|v| swish(*v)).collect());
            pre.push(z);
        }
        let last = &acts[acts.len() - 1];
        let nl = last.len();
        let mut b = Mat::zeros(self.dim, self.dim);
        let mut p = 0;
        for i in 0..self.dim {
            for j in i..self.dim {
                let row = &theta[off + p * nl..off + (p + 1) * nl];
                let v: f64 = row.iter().zip(last).map(|(a, u)| a * u).sum();
                b[(i, j)] = v;
                b[(j, i)] = v;
                p += 1;
            }
        }
        let sigma = &b * b.transpose() + Mat::identity(self.dim, self.dim) * self.eps;
        NnCache { pre, acts, b, sigma }
    }

    /// Backpropagates `Ḡ = ∂L/∂Σ` to `∂L/∂β`.
    pub fn backward(&self, theta: &[f64], cache: &NnCache, gbar: &Mat) -> Result<Vec<f64>> {
        if gbar.nrows() != self.dim || gbar.ncols() != self.dim || theta.len() != self.n_params() {
            return Err(Error::ShapeMismatch("network backward".into()));
        }
        let w = self.widths();
        let mut grad = vec![0.0; theta.len()];
        // ∂L/∂b for unconstrained b is Ḡb + bḠ (Ḡ symmetric, b symmetric)
        let gs = (gbar + gbar.transpose()) * 0.5;
        let db = &gs * &cache.b + &cache.b * &gs;
        let last = &cache.acts[cache.acts.len() - 1];
        let nl = last.len();
        let off = self.n_hidden_params();
        let mut delta = vec![0.0; nl];
        let mut p = 0;
        for i in 0..self.dim {
            for j in i..self.dim {
                let gp = if i == j { db[(i, i)] } else { db[(i, j)] + db[(j, i)] };
                let base = off + p * nl;
                for l in 0..nl {
                    grad[base + l] = gp * last[l];
                    delta[l] += gp * theta[base + l];
                }
                p += 1;
            }
        }
        let mut end = off;
        for k in (1..w.len()).rev() {
            let (lin, lout) = (w[k - 1], w[k]);
            let start = end - lin * lout;
            let d: Vec<f64> = delta.iter().zip(&cache.pre[k - 1]).map(|(dv, z)| dv * swish_prime(*z)).collect();
            let prev = &cache.acts[k - 1];
            let mut next = vec![0.0; lin];
            for l in 0..lin {
                for j in 0..lout {
                    let idx = start + l * lout + j;
                    grad[idx] = d[j] * prev[l];
                    next[l] += theta[idx] * d[j];
                }
            }
            delta = next;
            end = start;
        }
        Ok(grad)
    }
}

impl VolModel for NeuralNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_params(&self) -> usize {
        self.n_hidden_params() + self.hidden.last().unwrap() * self.n_pairs()
    }

    fn eval(&self, theta: &[f64], t: f64, x: &[f64]) -> Mat {
        self.forward(theta, t, x).sigma
    }

    fn vjp(&self, theta: &[f64], t: f64, x: &[f64], gbar: &Mat) -> Vec<f64> {
        let cache = self.forward(theta, t, x);
        self.backward(theta, &cache, gbar).expect("shapes fixed by the model")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::assert_vjp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights() {
        let nn = NeuralNet::new(2, 3, vec![4, 4], 1e-4);
        let s = nn.eval(&vec![0.0; nn.n_params()], 0.5, &[1.0, 2.0]);
        assert!((s - Mat::identity(2, 2) * 1e-4).amax() == 0.0);
    }

    #[test]
    fn hand_value() {
        // K = 2, L1 = 1, input (t, x) = (0, 1), weights 0 then 1, output weight 1
        let nn = NeuralNet::new(1, 2, vec![1], 0.0);
        let s = nn.eval(&[0.0, 1.0, 1.0], 0.0, &[1.0]);
        let h1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((s[(0, 0)] - h1 * h1).abs() < 1e-15);
    }

    #[test]
    fn swish_derivative() {
        for z in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let fd = (swish(z + 1e-6) - swish(z - 1e-6)) / 2e-6;
            assert!((fd - swish_prime(z)).abs() < 1e-8);
        }
    }

    #[test]
    fn backprop_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (dim, hidden) in [(1usize, vec![4usize, 4]), (2, vec![5, 3]), (2, vec![6])] {
            let nn = NeuralNet::new(dim, 1 + dim, hidden, 1e-4);
            let th = nn.init(&mut rng);
            let x: Vec<f64> = (0..dim).map(|i| 0.7 + 0.4 * i as f64).collect();
            let g = Mat::from_fn(dim, dim, |i, j| 0.3 + (i + j) as f64 * 0.5 - i as f64 * j as f64);
            let g = (&g + g.transpose()) * 0.5;
            assert_vjp(&nn, &th, 0.4, &x, &g);
        }
    }

    #[test]
    fn output_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nn = NeuralNet::new(2, 3, vec![4], 0.0);
        let th = nn.init(&mut rng);
        let mut th2 = th.clone();
        for v in &mut th2[nn.n_hidden_params()..] {
            *v *= 3.0;
        }
        let a = nn.forward(&th, 0.2, &[1.0, 0.5]);
        let b = nn.forward(&th2, 0.2, &[1.0, 0.5]);
        assert!((a.b * 3.0 - &b.b).amax() < 1e-14);
        assert!((a.sigma * 9.0 - &b.sigma).amax() < 1e-13);
    }

    #[test]
    fn zero_gbar_zero_grad_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nn = NeuralNet::new(1, 2, vec![3, 3], 1e-4);
        let th = nn.init(&mut rng);
        let z = nn.vjp(&th, 0.1, &[0.9], &Mat::zeros(1, 1));
        assert!(z.iter().all(|v| *v == 0.0));
        let g1 = nn.vjp(&th, 0.1, &[0.9], &Mat::from_element(1, 1, 0.7));
        let g2 = nn.vjp(&th, 0.1, &[0.9], &Mat::from_element(1, 1, 1.4));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }
}
