use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use covol::metrics::{gamma1, gamma2, model_path, mse_grid, standard_errors, divergence_d, MseGrid, ScaledVolPath};
use covol::models::{ModelSpec, NeuralNet, VolModel};
use covol::objective::{fit_argmax, ObjectiveKind, Problem};
use covol::observation::{BlockLayout, ObservationSet};
use covol::sim::{simulate, PathModel, SimulatedDataset};
use covol::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, FitSettings, RunConfig};
use crate::CliError;

/// Config hash and seed stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

struct Dataset {
    obs: ObservationSet,
    sim: Option<SimulatedDataset>,
}

fn load_datasets(cfg: &RunConfig) -> Result<Vec<Dataset>, CliError> {
    match &cfg.data {
        DataSource::Simulate { scenario, datasets } => {
            let (pc, sc) = scenario.configs();
            (0..*datasets as u64)
                .into_par_iter()
                .map(|i| {
                    let ds = simulate(&pc, &sc, cfg.seed.wrapping_add(i))?;
                    Ok(Dataset { obs: ds.obs.clone(), sim: Some(ds) })
                })
                .collect()
        }
        DataSource::Files { paths, horizon } => paths
            .iter()
            .map(|p| {
                let f = File::open(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Ok(Dataset { obs: ObservationSet::read_csv(BufReader::new(f), *horizon)?, sim: None })
            })
            .collect(),
    }
}

fn problem(obs: &ObservationSet, cfg: &RunConfig) -> Result<Problem, CliError> {
    let layout = BlockLayout::build(obs, cfg.n_blocks, None)?;
    Ok(Problem::new(obs, layout)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value).map_err(|e| CliError::Io(e.to_string()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct DatasetSidecar<'a> {
    provenance: &'a Provenance,
    simulation: &'a covol::sim::Provenance,
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path, prov: &Provenance) -> Result<(), CliError> {
    if !matches!(cfg.data, DataSource::Simulate { .. }) {
        return Err(CliError::Config("simulate needs a simulated data source".into()));
    }
    for (i, ds) in load_datasets(cfg)?.iter().enumerate() {
        let sim = ds.sim.as_ref().expect("simulated");
        let csv_path = out.join(format!("dataset_{i:03}.csv"));
        let f = File::create(&csv_path).map_err(|e| CliError::Io(format!("{}: {e}", csv_path.display())))?;
        ds.obs.write_csv(BufWriter::new(f))?;
        let sidecar = DatasetSidecar { provenance: prov, simulation: &sim.provenance };
        write_json(&out.join(format!("dataset_{i:03}.json")), &sidecar)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: usize,
    pub epoch: usize,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationCheckpoints {
    pub replication: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub theta: Vec<f64>,
}

/// Model description and saved parameters of every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub provenance: Provenance,
    pub model: ModelSpec,
    pub replications: Vec<ReplicationCheckpoints>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub objective: ObjectiveKind,
    pub values: Vec<f64>,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mse {
    pub mse1: f64,
    pub mse2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub prepare_s: f64,
    pub fit_s: f64,
    pub metrics_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub replication: usize,
    pub theta: Vec<f64>,
    /// `v̂` per dataset.
    pub v_hat: Vec<Vec<f64>>,
    pub stages: Vec<StageTrace>,
    /// Blocks left out per dataset.
    pub skipped_blocks: Vec<usize>,
    pub mse: Option<Mse>,
    /// `D(Σ(θ̂), Σ_†)` per dataset.
    pub divergence: Option<Vec<f64>>,
    pub standard_errors: Option<Vec<f64>>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub provenance: Provenance,
    pub model: ModelSpec,
    pub results: Vec<FitResult>,
}

fn truth_fn(model: &PathModel) -> impl Fn(f64, &[f64]) -> Mat + '_ {
    move |t, x| model.true_sigma(t, x)
}

fn mse_of(model: &dyn VolModel, theta: &[f64], truth: &PathModel) -> Mse {
    let f = truth_fn(truth);
    Mse { mse1: mse_grid(model, theta, &f, MseGrid::Mse1), mse2: mse_grid(model, theta, &f, MseGrid::Mse2) }
}

/// Truth path on the block grid with the simulated intensities and noise.
fn truth_path(sim: &SimulatedDataset, layout: &BlockLayout) -> Option<(ScaledVolPath, Vec<Vec<f64>>)> {
    let times = layout.bounds.clone();
    let sigma = times.iter().map(|&t| sim.true_sigma(t)).collect();
    let states = times.iter().map(|&t| sim.path.state_at(t)).collect();
    let s = &sim.provenance.sampling;
    let p = ScaledVolPath::with_constant_intensity(times, sigma, s.rates.clone(), s.noise_var.clone()).ok()?;
    Some((p, states))
}

fn initial_theta(fit: &FitSettings, model: &dyn VolModel, seed: u64) -> Result<Vec<f64>, CliError> {
    if let Some(init) = &fit.init {
        if init.len() != model.n_params() {
            return Err(CliError::Config(format!("init has {} values, model needs {}", init.len(), model.n_params())));
        }
        return Ok(init.clone());
    }
    Ok(match &fit.model {
        ModelSpec::NeuralNet { dim, input_dim, hidden, eps } => {
            NeuralNet::new(*dim, *input_dim, hidden.clone(), *eps).init(&mut ChaCha8Rng::seed_from_u64(seed))
        }
        ModelSpec::Cir => vec![1.0],
        ModelSpec::SeasonalCir { .. } => vec![1.0, 1.0, 0.5],
        ModelSpec::Poly { .. } => {
            let mut th = vec![0.0; model.n_params()];
            th[0] = 1.0;
            th
        }
        ModelSpec::Constant { dim } => {
            // identity Cholesky factor, row-major lower triangle
            let mut th = Vec::new();
            for i in 0..*dim {
                for j in 0..=i {
                    th.push(if i == j { 1.0 } else { 0.0 });
                }
            }
            th
        }
    })
}

/// Seed for replication `r`, stage `s`.
fn derived_seed(base: u64, r: usize, s: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add((r as u64) << 16).wrapping_add(s as u64 + 1)
}

fn fit_replication(
    cfg: &RunConfig,
    fit: &FitSettings,
    r: usize,
    data: &[Dataset],
) -> Result<(FitResult, ReplicationCheckpoints), CliError> {
    let model = fit.model.build();
    let t0 = Instant::now();
    let problems = data.iter().map(|d| problem(&d.obs, cfg)).collect::<Result<Vec<_>, _>>()?;
    let prepare_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut theta = initial_theta(fit, model.as_ref(), derived_seed(cfg.seed, r, 0))?;
    let mut stages = Vec::new();
    let mut checkpoints = Vec::new();
    for (s, stage) in fit.stages.iter().enumerate() {
        let tr = fit_argmax(
            &problems,
            model.as_ref(),
            &theta,
            stage.objective,
            &stage.optimizer,
            derived_seed(cfg.seed, r, s + 1),
            &fit.checkpoints,
        )?;
        checkpoints.extend(tr.checkpoints.into_iter().map(|(epoch, theta)| Checkpoint { stage: s, epoch, theta }));
        stages.push(StageTrace { objective: stage.objective, values: tr.values, rejected_steps: tr.rejected_steps });
        theta = tr.theta;
    }
    let fit_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let sims: Option<Vec<&SimulatedDataset>> = data.iter().map(|d| d.sim.as_ref()).collect();
    let mut mse = None;
    let mut divergence = None;
    let mut ses = None;
    if let Some(sims) = sims {
        mse = Some(mse_of(model.as_ref(), &theta, &sims[0].provenance.path.model));
        let truths: Vec<_> = sims.iter().zip(&problems).map(|(s, p)| truth_path(s, p.layout())).collect();
        divergence = truths
            .iter()
            .map(|t| {
                let (truth, states) = t.as_ref()?;
                let mp = model_path(model.as_ref(), &theta, truth, states).ok()?;
                divergence_d(&mp, truth).ok()
            })
            .collect();
        if model.n_params() <= fit.max_params_for_se {
            ses = truths[0].as_ref().and_then(|(truth, states)| {
                let g1 = gamma1(model.as_ref(), &theta, truth, states).ok()?;
                let g2 = gamma2(model.as_ref(), &theta, truth, states).ok()?;
                standard_errors(&g1, &g2, problems[0].layout().b_n).ok()
            });
        }
    }
    let metrics_s = t2.elapsed().as_secs_f64();

    let result = FitResult {
        replication: r,
        theta: theta.clone(),
        v_hat: problems.iter().map(|p| p.v_hat.clone()).collect(),
        stages,
        skipped_blocks: problems.iter().map(|p| p.prep.skipped.len()).collect(),
        mse,
        divergence,
        standard_errors: ses,
        timings: Timings { prepare_s, fit_s, metrics_s },
    };
    Ok((result, ReplicationCheckpoints { replication: r, checkpoints, theta }))
}

pub fn cmd_fit(cfg: &RunConfig, out: &Path, prov: &Provenance) -> Result<FitReport, CliError> {
    let fit = cfg.fit.as_ref().ok_or_else(|| CliError::Config("missing [fit] section".into()))?;
    let data = load_datasets(cfg)?;
    let per_fit = data.len() / fit.replications;
    let runs = (0..fit.replications)
        .into_par_iter()
        .map(|r| fit_replication(cfg, fit, r, &data[r * per_fit..(r + 1) * per_fit]))
        .collect::<Result<Vec<_>, _>>()?;
    let (results, ckpts): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let report = FitReport { provenance: prov.clone(), model: fit.model.clone(), results };
    let file = CheckpointFile { provenance: prov.clone(), model: fit.model.clone(), replications: ckpts };
    write_json(&out.join("checkpoints.json"), &file)?;
    write_json(&out.join("fit_report.json"), &report)?;
    Ok(report)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

fn quartiles(mut xs: Vec<f64>) -> [f64; 3] {
    xs.sort_by(f64::total_cmp);
    [quantile(&xs, 0.25), quantile(&xs, 0.5), quantile(&xs, 0.75)]
}

/// Parameters grouped by `(stage, epoch)`; the final parameters get the
/// label `final`.
fn grouped(files: &[CheckpointFile]) -> Vec<(String, Vec<Vec<f64>>)> {
    let mut groups: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    let mut push = |key: String, th: &Vec<f64>| match groups.iter_mut().find(|g| g.0 == key) {
        Some(g) => g.1.push(th.clone()),
        None => groups.push((key, vec![th.clone()])),
    };
    for f in files {
        for rep in &f.replications {
            for c in &rep.checkpoints {
                push(format!("{}:{}", c.stage, c.epoch), &c.theta);
            }
        }
    }
    for f in files {
        for rep in &f.replications {
            push("final".into(), &rep.theta);
        }
    }
    groups
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ev = cfg.evaluate.as_ref().ok_or_else(|| CliError::Config("missing [evaluate] section".into()))?;
    let files = ev.checkpoints.iter().map(|p| read_json::<CheckpointFile>(p)).collect::<Result<Vec<_>, _>>()?;
    let spec = &files.first().ok_or_else(|| CliError::Config("no checkpoint files".into()))?.model;
    if files.iter().any(|f| &f.model != spec) {
        return Err(CliError::Config("checkpoint files describe different models".into()));
    }
    let model = spec.build();
    let groups = grouped(&files);

    let truth = match &cfg.data {
        DataSource::Simulate { scenario, .. } => Some(scenario.configs().0.model),
        DataSource::Files { .. } => None,
    };
    if let Some(truth) = &truth {
        let mut w = csv_writer(&out.join("mse_table.csv"))?;
        w.write_record(["checkpoint", "grid", "q1", "median", "q3", "count"]).map_err(io)?;
        for (key, thetas) in &groups {
            let m: Vec<Mse> = thetas.iter().map(|th| mse_of(model.as_ref(), th, truth)).collect();
            for (grid, vals) in [("mse1", m.iter().map(|x| x.mse1).collect()), ("mse2", m.iter().map(|x| x.mse2).collect())] {
                let q = quartiles(vals);
                w.serialize((key, grid, q[0], q[1], q[2], thetas.len())).map_err(io)?;
            }
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;

        // plot data: Σ̂ quartiles across replications on 21 points at t = 0
        let finals = &groups.last().expect("final group").1;
        let g = model.dim();
        let mut w = csv_writer(&out.join("quartile_curve.csv"))?;
        w.write_record(["x", "i", "j", "q1", "median", "q3", "truth"]).map_err(io)?;
        for k in 0..=20 {
            let x = vec![0.1 * k as f64; g];
            let fitted: Vec<Mat> = finals.iter().map(|th| model.eval(th, 0.0, &x)).collect();
            let t = truth.true_sigma(0.0, &x);
            for i in 0..g {
                for j in i..g {
                    let q = quartiles(fitted.iter().map(|s| s[(i, j)]).collect());
                    w.serialize((x[0], i, j, q[0], q[1], q[2], t[(i, j)])).map_err(io)?;
                }
            }
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    }

    if let Some(reference) = &ev.reference {
        let data = load_datasets(cfg)?;
        let problems = data.iter().map(|d| problem(&d.obs, cfg)).collect::<Result<Vec<_>, _>>()?;
        let ref_model = reference.model.build();
        let kind = reference.objective;
        let ref_vals = problems
            .iter()
            .map(|p| p.evaluate(ref_model.as_ref(), &reference.theta, kind).map(|e| e.value))
            .collect::<Result<Vec<_>, _>>()?;
        let mut w = csv_writer(&out.join("objective_diff.csv"))?;
        w.write_record(["checkpoint", "q1", "median", "q3", "count"]).map_err(io)?;
        for (key, thetas) in &groups {
            let mut diffs = Vec::new();
            for th in thetas {
                for (p, rv) in problems.iter().zip(&ref_vals) {
                    diffs.push(rv - p.evaluate(model.as_ref(), th, kind)?.value);
                }
            }
            let n = diffs.len();
            let q = quartiles(diffs);
            w.serialize((key, q[0], q[1], q[2], n)).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

fn io(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveTiming {
    pub objective: ObjectiveKind,
    /// Median wall-clock seconds per value-and-gradient evaluation.
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub provenance: Provenance,
    pub dim: usize,
    pub counts: Vec<usize>,
    pub n_blocks: usize,
    pub timings: Vec<ObjectiveTiming>,
    /// Time of `H` over time of `Ḣ`.
    pub speedup_dot: f64,
    /// Time of `H` over time of `Ȟ`.
    pub speedup_check: f64,
}

pub fn cmd_bench(cfg: &RunConfig, out: &Path, prov: &Provenance) -> Result<BenchReport, CliError> {
    let bench = cfg.bench.as_ref().ok_or_else(|| CliError::Config("missing [bench] section".into()))?;
    let model = bench.model.build();
    if bench.theta.len() != model.n_params() {
        return Err(CliError::Config("bench theta has the wrong length".into()));
    }
    let data = load_datasets(cfg)?;
    let p = problem(&data[0].obs, cfg)?;
    let mut timings = Vec::new();
    for kind in [ObjectiveKind::H, ObjectiveKind::Check, ObjectiveKind::Dot] {
        p.evaluate(model.as_ref(), &bench.theta, kind)?;
        // cheap objectives are repeated until one sample takes ~10 ms
        let once = {
            let s = Instant::now();
            p.evaluate(model.as_ref(), &bench.theta, kind)?;
            s.elapsed().as_secs_f64()
        };
        let inner = ((0.01 / once.max(1e-9)).ceil() as usize).clamp(1, 10_000);
        let mut samples = Vec::new();
        for _ in 0..bench.repetitions {
            let s = Instant::now();
            for _ in 0..inner {
                p.evaluate(model.as_ref(), &bench.theta, kind)?;
            }
            samples.push(s.elapsed().as_secs_f64() / inner as f64);
        }
        timings.push(ObjectiveTiming { objective: kind, seconds: quartiles(samples)[1] });
    }
    let report = BenchReport {
        provenance: prov.clone(),
        dim: data[0].obs.dim(),
        counts: data[0].obs.counts(),
        n_blocks: p.layout().n_blocks,
        speedup_dot: timings[0].seconds / timings[2].seconds,
        speedup_check: timings[0].seconds / timings[1].seconds,
        timings,
    };
    write_json(&out.join("bench.json"), &report)?;
    Ok(report)
}
