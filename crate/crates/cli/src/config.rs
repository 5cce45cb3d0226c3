//! Run configuration: a flat JSON key set, every key overridable by a
//! command-line flag of the same name. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use medrank_core::embedding::OovPolicy;
use medrank_core::training::Optimizer;
use serde::Deserialize;

/// Keys accepted in a `--config` JSON file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub embeddings: Option<PathBuf>,
    pub query_embeddings: Option<PathBuf>,
    pub candidate_embeddings: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub dmp_mode: Option<String>,
    pub n_candidates: Option<usize>,
    pub allowed_types: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub train_fraction: Option<f64>,
    pub oov_policy: Option<String>,
    pub margin: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub optimizer: Option<String>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_epsilon: Option<f64>,
    pub filters: Option<usize>,
    pub window: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

pub fn parse_oov_policy(name: &str) -> Result<OovPolicy> {
    match name {
        "zeros" => Ok(OovPolicy::Zeros),
        "mean" => Ok(OovPolicy::MeanOfVectors),
        other => bail!("unknown oov policy {other:?}; expected \"zeros\" or \"mean\""),
    }
}

pub fn parse_optimizer(name: &str, beta1: f64, beta2: f64, epsilon: f64) -> Result<Optimizer> {
    match name {
        "sgd" => Ok(Optimizer::Sgd),
        "adam" => Ok(Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        }),
        other => bail!("unknown optimizer {other:?}; expected \"sgd\" or \"adam\""),
    }
}

/// Fails fast if any input path a command needs is missing.
pub fn validate_inputs(paths: &[(&str, &Path)]) -> Result<()> {
    let mut missing = Vec::new();
    for (what, path) in paths {
        if !path.exists() {
            missing.push(format!("{what}: {}", path.display()));
        }
    }
    if !missing.is_empty() {
        bail!("missing input path(s):\n  {}", missing.join("\n  "));
    }
    Ok(())
}
