//! Observations, block partition and per-block bookkeeping.
//!
//! Component `j` is observed at `0 = S_0 < S_1 < … < S_J ≤ T`. The horizon is
//! cut into `ℓ` blocks `[s_{m-1}, s_m)`, `s_m = mT/ℓ`. With `K_m` the index of
//! the last observation strictly before `s_m` (and `K_0 = -1`), block `m` holds
//! the `k_m = K_m - K_{m-1} - 1` increments over
//! `[S_{i+K_{m-1}}, S_{i+1+K_{m-1}})`, `i = 1..k_m`. The increment that
//! straddles a boundary is dropped. Blocks are numbered from 1.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Mat, Result, Vector};

/// One observed component: times and values of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        Self { times, values }
    }

    /// Number of increments `J`.
    pub fn count(&self) -> usize {
        self.times.len().saturating_sub(1)
    }
}

/// Noisy nonsynchronous observations of a γ-dimensional process.
///
/// `explanatory` holds the series behind X̂; when absent the observed
/// components themselves are used.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub horizon: f64,
    pub components: Vec<Series>,
    pub explanatory: Option<Vec<Series>>,
}

impl ObservationSet {
    pub fn new(horizon: f64, components: Vec<Series>) -> Result<Self> {
        let obs = Self { horizon, components, explanatory: None };
        obs.validate()?;
        Ok(obs)
    }

    pub fn with_explanatory(mut self, x: Vec<Series>) -> Result<Self> {
        for s in &x {
            check_series(s, self.horizon, 0)?;
        }
        self.explanatory = Some(x);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.components.iter().map(Series::count).collect()
    }

    pub fn explanatory_series(&self) -> &[Series] {
        self.explanatory.as_deref().unwrap_or(&self.components)
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::BadConfig("horizon must be positive".into()));
        }
        if self.components.is_empty() {
            return Err(Error::BadConfig("no components".into()));
        }
        for s in &self.components {
            check_series(s, self.horizon, 2)?;
        }
        Ok(())
    }

    /// Writes `component,index,time,value` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["component", "index", "time", "value"])?;
        for (k, s) in self.components.iter().enumerate() {
            for (i, (t, v)) in s.times.iter().zip(&s.values).enumerate() {
                wr.serialize((k, i, t, v))?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, horizon: f64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut comps: Vec<Series> = Vec::new();
        for rec in rd.deserialize() {
            let (k, i, t, v): (usize, usize, f64, f64) = rec?;
            while comps.len() <= k {
                comps.push(Series::new(Vec::new(), Vec::new()));
            }
            if comps[k].times.len() != i {
                return Err(Error::BadConfig(format!("component {k}: index {i} out of order")));
            }
            comps[k].times.push(t);
            comps[k].values.push(v);
        }
        Self::new(horizon, comps)
    }
}

fn check_series(s: &Series, horizon: f64, min_count: usize) -> Result<()> {
    if s.times.len() != s.values.len() {
        return Err(Error::ShapeMismatch("times and values differ in length".into()));
    }
    if s.count() < min_count {
        return Err(Error::BadConfig(format!("need at least {min_count} increments")));
    }
    if s.times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::BadConfig("times must be strictly increasing".into()));
    }
    if s.times.first().is_some_and(|t| *t < 0.0) || s.times.last().is_some_and(|t| *t > horizon) {
        return Err(Error::BadConfig("times outside [0, T]".into()));
    }
    Ok(())
}

/// Default block count `floor(b_n^0.45)`.
pub fn default_block_count(b_n: f64) -> usize {
    b_n.powf(0.45).floor() as usize
}

/// Partition of `[0, T]` into `ℓ` equal blocks with per-component indices.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub horizon: f64,
    pub n_blocks: usize,
    pub b_n: f64,
    pub k_n: f64,
    pub bounds: Vec<f64>,
    // cum[j][m] = K_m^j for m = 0..=ℓ
    cum: Vec<Vec<i64>>,
}

impl BlockLayout {
    /// `b_n` defaults to the mean increment count, `ℓ` to `floor(b_n^0.45)`.
    pub fn build(obs: &ObservationSet, n_blocks: Option<usize>, b_n: Option<f64>) -> Result<Self> {
        let counts = obs.counts();
        let b_n = b_n.unwrap_or_else(|| counts.iter().sum::<usize>() as f64 / counts.len() as f64);
        let ell = n_blocks.unwrap_or_else(|| default_block_count(b_n));
        if ell < 1 {
            return Err(Error::BadConfig("need at least one block".into()));
        }
        if b_n < ell as f64 {
            return Err(Error::BadConfig(format!("b_n = {b_n} smaller than block count {ell}")));
        }
        let t = obs.horizon;
        let bounds: Vec<f64> = (0..=ell).map(|m| m as f64 * t / ell as f64).collect();
        let cum = obs
            .components
            .iter()
            .map(|s| {
                let mut k = vec![-1i64; ell + 1];
                for m in 1..=ell {
                    k[m] = s.times.partition_point(|x| *x < bounds[m]) as i64 - 1;
                }
                k
            })
            .collect();
        Ok(Self { horizon: t, n_blocks: ell, b_n, k_n: b_n / ell as f64, bounds, cum })
    }

    pub fn dim(&self) -> usize {
        self.cum.len()
    }

    /// `K_m^j`.
    pub fn cum_index(&self, m: usize, j: usize) -> i64 {
        self.cum[j][m]
    }

    /// `k_m^j`, the number of increments of component `j` inside block `m`.
    pub fn k(&self, m: usize, j: usize) -> usize {
        (self.cum[j][m] - self.cum[j][m - 1] - 1).max(0) as usize
    }

    pub fn sizes(&self, m: usize) -> Vec<usize> {
        (0..self.dim()).map(|j| self.k(m, j)).collect()
    }

    /// Left end `s_{m-1}` of block `m`.
    pub fn start(&self, m: usize) -> f64 {
        self.bounds[m - 1]
    }

    /// Blocks with at least one component carrying no increment.
    pub fn empty_blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for m in 1..=self.n_blocks {
            for j in 0..self.dim() {
                if self.k(m, j) == 0 {
                    out.push((m, j));
                }
            }
        }
        out
    }

    /// Index of the first observation of component `j` used in block `m`
    /// (i.e. `1 + K_{m-1}`).
    fn first(&self, m: usize, j: usize) -> usize {
        (self.cum[j][m - 1] + 1) as usize
    }

    /// Intervals `I^j_{i,m}` as `(start, end)` pairs.
    pub fn intervals(&self, obs: &ObservationSet, m: usize, j: usize) -> Vec<(f64, f64)> {
        let f = self.first(m, j);
        let t = &obs.components[j].times;
        (0..self.k(m, j)).map(|i| (t[f + i], t[f + i + 1])).collect()
    }

    /// Increments `Z^j_{m,l}`, `l = 1..k_m^j`.
    pub fn component_increments(&self, obs: &ObservationSet, m: usize, j: usize) -> Vec<f64> {
        let f = self.first(m, j);
        let y = &obs.components[j].values;
        (0..self.k(m, j)).map(|i| y[f + i + 1] - y[f + i]).collect()
    }
}

/// Stacked increments of block `m` in component-major order.
pub fn block_increments(obs: &ObservationSet, layout: &BlockLayout, m: usize) -> Result<Vector> {
    let mut z = Vec::new();
    for j in 0..layout.dim() {
        if layout.k(m, j) == 0 {
            return Err(Error::EmptyBlock { block: m, component: j });
        }
        z.extend(layout.component_increments(obs, m, j));
    }
    Ok(Vector::from_vec(z))
}

/// `[𝔊_{k,l}]_{ij} = |I^k_{i,m} ∩ I^l_{j,m}|`.
pub fn overlap_matrix(obs: &ObservationSet, layout: &BlockLayout, m: usize, k: usize, l: usize) -> Mat {
    let a = layout.intervals(obs, m, k);
    let b = layout.intervals(obs, m, l);
    interval_overlaps(&a, &b)
}

/// Pairwise intersection lengths of two sorted interval lists.
pub fn interval_overlaps(a: &[(f64, f64)], b: &[(f64, f64)]) -> Mat {
    let mut g = Mat::zeros(a.len(), b.len());
    let mut lo = 0;
    for (i, &(a0, a1)) in a.iter().enumerate() {
        while lo < b.len() && b[lo].1 <= a0 {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() && b[j].0 < a1 {
            let w = a1.min(b[j].1) - a0.max(b[j].0);
            if w > 0.0 {
                g[(i, j)] = w;
            }
            j += 1;
        }
    }
    g
}

/// `M(l)`: 2 on the diagonal, −1 on the first off-diagonals.
pub fn tridiag_m(l: usize) -> Mat {
    Mat::from_fn(l, l, |i, j| {
        if i == j {
            2.0
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Component-wise mean of the explanatory series over `[s_{m-1}, s_m)`.
pub fn local_average(series: &[Series], layout: &BlockLayout, m: usize) -> Result<Vec<f64>> {
    let (lo, hi) = (layout.bounds[m - 1], layout.bounds[m]);
    series
        .iter()
        .map(|s| {
            let a = s.times.partition_point(|t| *t < lo);
            let b = s.times.partition_point(|t| *t < hi);
            if b <= a {
                return Err(Error::EmptyExplanatoryBlock { block: m });
            }
            Ok(s.values[a..b].iter().sum::<f64>() / (b - a) as f64)
        })
        .collect()
}

/// `v̂_j = (2J_j)⁻¹ Σ_m Σ_l (Z^j_{m,l})²` over all within-block increments.
pub fn estimate_noise_variance(obs: &ObservationSet, layout: &BlockLayout) -> Vec<f64> {
    (0..layout.dim())
        .map(|j| {
            let ss: f64 = (1..=layout.n_blocks)
                .flat_map(|m| layout.component_increments(obs, m, j))
                .map(|z| z * z)
                .sum();
            ss / (2.0 * obs.components[j].count() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equidistant(n: usize, values: impl Fn(usize) -> f64) -> Series {
        Series::new((0..=n).map(|i| i as f64 / n as f64).collect(), (0..=n).map(values).collect())
    }

    #[test]
    fn equidistant_block_sizes() {
        let obs = ObservationSet::new(1.0, vec![equidistant(12, |i| i as f64)]).unwrap();
        let lay = BlockLayout::build(&obs, Some(3), None).unwrap();
        for m in 1..=3 {
            assert_eq!(lay.k(m, 0), 3);
        }
        assert_eq!(lay.cum_index(0, 0), -1);
        assert_eq!(lay.cum_index(1, 0), 3);
    }

    #[test]
    fn single_block() {
        let obs = ObservationSet::new(1.0, vec![equidistant(10, |_| 0.0)]).unwrap();
        let lay = BlockLayout::build(&obs, Some(1), None).unwrap();
        // an observation sitting exactly at T is not counted
        assert_eq!(lay.k(1, 0), 9);
    }

    #[test]
    fn increments_small() {
        let s = Series::new(vec![0.0, 0.2, 0.4], vec![0.0, 1.0, 3.0]);
        let obs = ObservationSet::new(1.0, vec![s]).unwrap();
        let lay = BlockLayout::build(&obs, Some(1), Some(2.0)).unwrap();
        let z = block_increments(&obs, &lay, 1).unwrap();
        assert_eq!(z.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn constant_series_zero_increments() {
        let obs = ObservationSet::new(1.0, vec![equidistant(20, |_| 3.0)]).unwrap();
        let lay = BlockLayout::build(&obs, Some(4), None).unwrap();
        for m in 1..=4 {
            assert!(block_increments(&obs, &lay, m).unwrap().iter().all(|z| *z == 0.0));
        }
        assert_eq!(estimate_noise_variance(&obs, &lay), vec![0.0]);
    }

    #[test]
    fn overlap_hand_case() {
        let g = interval_overlaps(&[(0.0, 2.0), (2.0, 4.0)], &[(1.0, 3.0)]);
        assert_eq!(g.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn overlap_same_grid_is_diagonal() {
        let obs = ObservationSet::new(1.0, vec![equidistant(12, |i| i as f64), equidistant(12, |_| 0.0)]).unwrap();
        let lay = BlockLayout::build(&obs, Some(3), None).unwrap();
        let g = overlap_matrix(&obs, &lay, 2, 0, 1);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 / 12.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tridiag_eigenvalues() {
        for l in 1..8 {
            let e = crate::matan::EigenFactorization::new(&tridiag_m(l));
            let mut want: Vec<f64> = (1..=l)
                .map(|k| 2.0 * (1.0 - (k as f64 * std::f64::consts::PI / (l + 1) as f64).cos()))
                .collect();
            want.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in e.lambda.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_average_of_values() {
        let s = Series::new(vec![0.0, 0.1, 0.6, 0.7], vec![1.0, 3.0, 10.0, 20.0]);
        let lay = BlockLayout::build(
            &ObservationSet::new(1.0, vec![Series::new(vec![0.0, 0.1, 0.6, 0.7], vec![0.0; 4])]).unwrap(),
            Some(2),
            Some(3.0),
        )
        .unwrap();
        assert_eq!(local_average(&[s.clone()], &lay, 1).unwrap(), vec![2.0]);
        assert_eq!(local_average(&[s], &lay, 2).unwrap(), vec![15.0]);
    }

    #[test]
    fn csv_roundtrip() {
        let obs = ObservationSet::new(1.0, vec![equidistant(5, |i| i as f64 * 0.5), equidistant(4, |i| -(i as f64))])
            .unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        let back = ObservationSet::read_csv(buf.as_slice(), 1.0).unwrap();
        assert_eq!(back, obs);
    }
}
