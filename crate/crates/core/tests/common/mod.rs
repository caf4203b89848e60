//! Test support: an adaptive quadrature oracle and random instance builders.
#![allow(dead_code)]

use covol::observation::{ObservationSet, Series};
use covol::Mat;
use rand::Rng;
use rand_distr::StandardNormal;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) on `[a, b]` with absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth > 40 || (b - a).abs() < 1e-13 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    rec(f, a, b, tol, 0)
}

/// `∫_{-∞}^{∞} f(t) dt` for even `f`, via `t = tan u` on `(0, π/2)`.
pub fn integrate_even_line(f: &dyn Fn(f64) -> f64, tol: f64) -> f64 {
    let g = |u: f64| {
        let c = u.cos();
        if c <= 0.0 {
            return 0.0;
        }
        f(u.tan()) / (c * c)
    };
    2.0 * integrate(&g, 0.0, std::f64::consts::FRAC_PI_2, 0.5 * tol)
}

pub fn random_sym<R: Rng>(rng: &mut R, n: usize) -> Mat {
    let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

/// `GGᵀ + floor·I` with standard normal `G`.
pub fn random_pd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Mat {
    let g = Mat::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &g * g.transpose() + Mat::identity(n, n) * floor
}

pub fn random_psd<R: Rng>(rng: &mut R, n: usize, rank: usize) -> Mat {
    let g = Mat::from_fn(n, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    &g * g.transpose()
}

/// Random nonsynchronous γ-dimensional data on `[0, 1]` with `n_blocks`
/// blocks of about `k` increments per component. Every block of every
/// component gets at least `min_per_block` observations so that `k ≥ 2`.
pub fn random_obs<R: Rng>(rng: &mut R, gamma: usize, n_blocks: usize, k: usize, noise: f64) -> ObservationSet {
    let comps = (0..gamma)
        .map(|_| {
            let mut times = vec![0.0];
            for m in 0..n_blocks {
                let lo = m as f64 / n_blocks as f64;
                let w = 1.0 / n_blocks as f64;
                let cnt = k + rng.gen_range(0..3);
                let mut ts: Vec<f64> = (0..cnt).map(|_| lo + w * rng.gen_range(0.02..0.98)).collect();
                ts.sort_by(f64::total_cmp);
                times.extend(ts);
            }
            let mut y = 1.0;
            let values = times
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    if i > 0 {
                        y += 0.1 * rng.sample::<f64, _>(StandardNormal);
                    }
                    y.abs() + 0.2 + noise * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            Series::new(times, values)
        })
        .collect();
    ObservationSet::new(1.0, comps).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
