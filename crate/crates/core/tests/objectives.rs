mod common;

use common::{random_obs, rel_err};
use covol::models::{CirModel, ConstantModel, NeuralNet, PolyModel, SeasonalCirModel, VolModel};
use covol::objective::{ObjectiveKind, Problem};
use covol::observation::BlockLayout;
use covol::quasilik::{assemble_matrix, contraction_norm, inverse_series_oracle, logdet_series_oracle};
use covol::{Mat, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn problem(seed: u64, gamma: usize, n_blocks: usize, k: usize) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = random_obs(&mut rng, gamma, n_blocks, k, 0.05);
    let layout = BlockLayout::build(&obs, Some(n_blocks), None).unwrap();
    Problem::new(&obs, layout).unwrap()
}

fn families(gamma: usize) -> Vec<(&'static str, Box<dyn VolModel>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    if gamma == 1 {
        let nn = NeuralNet::new(1, 2, vec![4, 3], 1e-3);
        let th = nn.init(&mut rng);
        vec![
            ("cir", Box::new(CirModel), vec![0.9]),
            ("poly", Box::new(PolyModel::new(2, 1e-4)), vec![0.8, 0.1, -0.05, 0.2, 0.03]),
            ("constant", Box::new(ConstantModel::new(1)), vec![1.1]),
            ("nn", Box::new(nn), th),
        ]
    } else {
        let nn = NeuralNet::new(2, 3, vec![5], 1e-3);
        let th = nn.init(&mut rng);
        vec![
            ("seasonal", Box::new(SeasonalCirModel::default()), vec![1.1, 0.8, 0.4]),
            ("constant", Box::new(ConstantModel::new(2)), vec![1.0, 0.3, 0.8]),
            ("nn", Box::new(nn), th),
        ]
    }
}

fn fd_grad(p: &Problem, m: &dyn VolModel, theta: &[f64], kind: ObjectiveKind) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let h = 1e-5 * (1.0 + theta[i].abs());
            let mut a = theta.to_vec();
            let mut b = theta.to_vec();
            a[i] += h;
            b[i] -= h;
            (p.evaluate(m, &a, kind).unwrap().value - p.evaluate(m, &b, kind).unwrap().value) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradients_match_finite_differences() {
    for gamma in 1..=2 {
        let p = problem(40 + gamma as u64, gamma, 5, 10);
        for (name, m, theta) in families(gamma) {
            for kind in [ObjectiveKind::H, ObjectiveKind::Check, ObjectiveKind::Dot] {
                let g = p.evaluate(m.as_ref(), &theta, kind).unwrap().grad;
                let f = fd_grad(&p, m.as_ref(), &theta, kind);
                let scale = f.iter().fold(1e-6_f64, |s, v| s.max(v.abs()));
                for (a, b) in g.iter().zip(&f) {
                    assert!((a - b).abs() <= 1e-4 * scale, "{name} {kind:?} γ={gamma}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn bias_corrected_forms_agree() {
    for seed in 0..40 {
        let gamma = 1 + (seed % 2) as usize;
        let p = problem(1000 + seed, gamma, 4 + (seed % 3) as usize, 6 + (seed % 5) as usize);
        for (name, m, theta) in families(gamma) {
            let simple = p.evaluate(m.as_ref(), &theta, ObjectiveKind::Check).unwrap().value;
            let def = p.check_definitional(m.as_ref(), &theta).unwrap();
            assert!(rel_err(simple, def) <= 1e-8, "{name}: {simple} vs {def}");
        }
    }
}

/// Dense `-½ Σ_m (ZᵀS⁻¹Z + log det S)` with `S` built entry by entry from
/// the raw observation intervals.
fn brute_force_h(p: &Problem, obs: &covol::observation::ObservationSet, sigma: &Mat, v: &[f64]) -> f64 {
    let lay = p.layout();
    let mut total = 0.0;
    for blk in &p.prep.blocks {
        let m = blk.m;
        let mut idx = Vec::new();
        for j in 0..lay.dim() {
            let t = &obs.components[j].times;
            let y = &obs.components[j].values;
            let (lo, hi) = (lay.bounds[m - 1], lay.bounds[m]);
            let inside: Vec<usize> = (0..t.len()).filter(|&i| t[i] >= lo && t[i] < hi).collect();
            for w in inside.windows(2) {
                idx.push((j, t[w[0]], t[w[1]], y[w[1]] - y[w[0]], w[0]));
            }
        }
        let n = idx.len();
        let s = Mat::from_fn(n, n, |a, b| {
            let (ja, a0, a1, _, ia) = idx[a];
            let (jb, b0, b1, _, ib) = idx[b];
            let ov = (a1.min(b1) - a0.max(b0)).max(0.0);
            let mut x = sigma[(ja, jb)] * ov;
            if ja == jb {
                if ia == ib {
                    x += 2.0 * v[ja];
                } else if ia.abs_diff(ib) == 1 {
                    x -= v[ja];
                }
            }
            x
        });
        let z = Vector::from_iterator(n, idx.iter().map(|e| e.3));
        let inv = s.clone().try_inverse().unwrap();
        total += -0.5 * (z.dot(&(&inv * &z)) + s.determinant().ln());
    }
    total
}

#[test]
fn quasi_likelihood_matches_dense_brute_force() {
    for gamma in 1..=2 {
        let mut rng = ChaCha8Rng::seed_from_u64(77 + gamma as u64);
        let obs = random_obs(&mut rng, gamma, 4, 6, 0.05);
        let layout = BlockLayout::build(&obs, Some(4), None).unwrap();
        let p = Problem::new(&obs, layout).unwrap();
        let model = ConstantModel::new(gamma);
        let theta = if gamma == 1 { vec![0.9] } else { vec![0.9, 0.2, 0.7] };
        let sigma = model.eval(&theta, 0.0, &[]);
        let h = p.evaluate(&model, &theta, ObjectiveKind::H).unwrap().value;
        let bf = brute_force_h(&p, &obs, &sigma, &p.v_hat);
        assert!(rel_err(h, bf) < 1e-10, "{h} vs {bf}");
    }
}

#[test]
fn series_oracles_converge_geometrically() {
    let p = problem(9, 2, 5, 10);
    for (rho, v) in [(0.2, 0.0), (0.35, 1e-3), (0.5, 1e-2)] {
        let b = Mat::from_row_slice(2, 2, &[1.0, rho * 0.6_f64.sqrt(), rho * 0.6_f64.sqrt(), 0.6]);
        assert!(contraction_norm(&b) < 1.0);
        let v = [v, v];
        for blk in &p.prep.blocks {
            let s = assemble_matrix(&b, &v, blk);
            let inv = s.clone().try_inverse().unwrap();
            let ld = s.determinant().ln();
            let mut prev = f64::INFINITY;
            for pm in [2, 5, 10, 20] {
                let err = (inverse_series_oracle(&b, &v, blk, pm).unwrap() - &inv).amax() / inv.amax();
                assert!(err < prev || err < 1e-14);
                prev = err;
            }
            // the error after P terms is about ρ^{P+1}, so the 1e-8 bar needs ρ ≲ 0.4
            let bar = if rho <= 0.4 { 1e-8 } else { 1e-6 };
            assert!(prev < bar);
            assert!((logdet_series_oracle(&b, &v, blk, 20).unwrap() - ld).abs() < bar * (1.0 + ld.abs()));
        }
    }
}

#[test]
fn dot_objective_is_stationary_when_data_matches_model() {
    let p = problem(3, 2, 5, 10);
    // replace the pre-averaged data by the model's own Σ on every block
    let model = ConstantModel::new(2);
    let theta = [1.0, 0.3, 0.8];
    let mut q = p.clone();
    let sigma = model.eval(&theta, 0.0, &[]);
    for b in q.preavg.b.iter_mut() {
        *b = sigma.clone();
    }
    let e = q.evaluate(&model, &theta, ObjectiveKind::Dot).unwrap();
    assert!(e.grad.iter().all(|g| g.abs() < 1e-10));
}
