//! Run configuration read from a TOML file.

use std::path::PathBuf;

use covol::models::ModelSpec;
use covol::objective::{ObjectiveKind, Optimizer};
use covol::sim::{cir_scenario, seasonal_scenario, PathConfig, SamplingConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    /// Block count override; defaults to `floor(b_n^0.45)`.
    #[serde(default)]
    pub n_blocks: Option<usize>,
    #[serde(default)]
    pub fit: Option<FitSettings>,
    #[serde(default)]
    pub evaluate: Option<EvaluateSettings>,
    #[serde(default)]
    pub bench: Option<BenchSettings>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Datasets drawn from a scenario. Dataset `i` uses seed `seed + i`.
    Simulate {
        scenario: Scenario,
        #[serde(default = "one")]
        datasets: usize,
    },
    /// CSV files in the dataset schema, all on `[0, horizon]`.
    Files { paths: Vec<PathBuf>, horizon: f64 },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    Cir {
        n: f64,
        #[serde(default = "default_noise")]
        noise_var: f64,
    },
    Seasonal {
        n: f64,
        #[serde(default = "default_noise")]
        noise_var: f64,
    },
    Custom {
        path: PathConfig,
        sampling: SamplingConfig,
    },
}

fn default_noise() -> f64 {
    0.005
}

impl Scenario {
    pub fn configs(&self) -> (PathConfig, SamplingConfig) {
        match self {
            Scenario::Cir { n, noise_var } => cir_scenario(*n, *noise_var),
            Scenario::Seasonal { n, noise_var } => seasonal_scenario(*n, *noise_var),
            Scenario::Custom { path, sampling } => (path.clone(), sampling.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub objective: ObjectiveKind,
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    pub model: ModelSpec,
    /// Starting parameters; neural nets are initialised from the seed when absent.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    /// Stages run in order, each starting from the previous result.
    pub stages: Vec<Stage>,
    /// Independent fits; fit `r` uses datasets `r·per_fit .. (r+1)·per_fit`.
    #[serde(default = "one")]
    pub replications: usize,
    /// Epochs at which parameters are saved (ADADELTA stages).
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    /// Skip Γ-based standard errors for models with more parameters than this.
    #[serde(default = "default_se_limit")]
    pub max_params_for_se: usize,
}

fn default_se_limit() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSettings {
    /// Checkpoint files written by `fit`.
    pub checkpoints: Vec<PathBuf>,
    /// Reference parameters whose objective value is compared with each checkpoint.
    #[serde(default)]
    pub reference: Option<Reference>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub model: ModelSpec,
    pub theta: Vec<f64>,
    #[serde(default = "default_objective")]
    pub objective: ObjectiveKind,
}

fn default_objective() -> ObjectiveKind {
    ObjectiveKind::H
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    pub model: ModelSpec,
    pub theta: Vec<f64>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
}

fn default_reps() -> usize {
    5
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        match &self.data {
            DataSource::Simulate { datasets, .. } if *datasets == 0 => return bad("datasets must be positive"),
            DataSource::Files { paths, .. } if paths.is_empty() => return bad("no data files listed"),
            _ => {}
        }
        if let Some(fit) = &self.fit {
            if fit.stages.is_empty() {
                return bad("fit needs at least one stage");
            }
            if fit.replications == 0 || !self.dataset_count().is_multiple_of(fit.replications) {
                return bad("dataset count must be a positive multiple of replications");
            }
        }
        if let Some(b) = &self.bench {
            if b.repetitions == 0 {
                return bad("bench repetitions must be positive");
            }
        }
        Ok(())
    }

    pub fn dataset_count(&self) -> usize {
        match &self.data {
            DataSource::Simulate { datasets, .. } => *datasets,
            DataSource::Files { paths, .. } => paths.len(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
