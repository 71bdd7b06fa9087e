//! Command configuration: a JSON file (`--config`) overlaid with flags.
//!
//! Flags and file keys share names, so the overlay is done on the JSON
//! object before deserializing. Unknown keys are rejected either way.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use choicegp::vi::FitConfig;

use crate::CliError;

/// Read the config file (if any), apply the non-empty flag values, and
/// deserialize the result.
pub fn resolve<T: DeserializeOwned>(file: Option<&Path>, flags: &impl Serialize) -> Result<T, CliError> {
    let mut map = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
            match serde_json::from_str(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(CliError::usage("config file must hold a JSON object")),
                Err(e) => return Err(CliError::usage(format!("invalid config {}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    let Value::Object(overrides) = serde_json::to_value(flags).expect("flags serialize") else {
        unreachable!("flag structs are objects")
    };
    for (k, v) in overrides {
        if !v.is_null() {
            map.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::usage(format!("invalid configuration: {e}")))
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// JSON file with any of this command's keys; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for output files (created if missing)
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    pub threads: Option<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// example1, zdt1, dtlz2 or kernel_mixture
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Offered sets (pairs for kernel_mixture)
    #[arg(long)]
    pub m_sets: Option<usize>,
    #[arg(long)]
    pub set_size: Option<usize>,
    /// Input range for example1, as `lo,hi`
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub domain: Option<Vec<f64>>,
    #[arg(long)]
    pub n_objectives: Option<usize>,
    #[arg(long)]
    pub n_features: Option<usize>,
    /// Latent states of the kernel mixture
    #[arg(long)]
    pub latent_states: Option<usize>,
    #[arg(long)]
    pub lengthscale: Option<f64>,
    /// D1 (forced choice) or D2 (Pareto, allows incomparability)
    #[arg(long)]
    pub pair_mode: Option<String>,
    /// Also write forced preferences: random or majority
    #[arg(long)]
    pub conversion: Option<String>,
    /// Also write an observation-level train/test split
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub generator: String,
    pub n_points: usize,
    pub m_sets: usize,
    pub set_size: usize,
    pub domain: Vec<f64>,
    pub n_objectives: Option<usize>,
    pub n_features: Option<usize>,
    pub latent_states: usize,
    pub lengthscale: f64,
    pub pair_mode: String,
    pub conversion: Option<String>,
    pub train_fraction: Option<f64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            threads: None,
            generator: "example1".into(),
            n_points: 200,
            m_sets: 150,
            set_size: 3,
            domain: vec![-4.5, 4.5],
            n_objectives: None,
            n_features: None,
            latent_states: 2,
            lengthscale: 1.0,
            pair_mode: "D2".into(),
            conversion: None,
            train_fraction: None,
        }
    }
}

// --------------------------------------------------------------- fit keys

#[derive(Debug, Args, Serialize)]
pub struct FitFlags {
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub final_mc_samples: Option<usize>,
    #[arg(long)]
    pub shared_lengthscales: Option<bool>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub init_lengthscale: Option<f64>,
    #[arg(long)]
    pub init_sigma: Option<f64>,
    #[arg(long)]
    pub map_iters: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitCommandConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub latent_dim: Option<usize>,
    pub iters: usize,
    pub learning_rate: f64,
    pub mc_samples: usize,
    pub final_mc_samples: usize,
    pub shared_lengthscales: bool,
    pub jitter: f64,
    pub init_lengthscale: f64,
    pub init_sigma: f64,
    pub map_iters: usize,
}

impl Default for FitCommandConfig {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            seed: f.seed,
            output_dir: default_output_dir(),
            threads: None,
            dataset: None,
            latent_dim: None,
            iters: f.iters,
            learning_rate: f.learning_rate,
            mc_samples: f.mc_samples,
            final_mc_samples: f.final_mc_samples,
            shared_lengthscales: f.shared_lengthscales,
            jitter: f.jitter,
            init_lengthscale: f.init_lengthscale,
            init_sigma: f.init_sigma,
            map_iters: f.map_iters,
        }
    }
}

impl FitCommandConfig {
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            iters: self.iters,
            learning_rate: self.learning_rate,
            mc_samples: self.mc_samples,
            final_mc_samples: self.final_mc_samples,
            seed: self.seed,
            shared_lengthscales: self.shared_lengthscales,
            jitter: self.jitter,
            init_lengthscale: self.init_lengthscale,
            init_sigma: self.init_sigma,
            map_iters: self.map_iters,
        }
    }
}

// ------------------------------------------------------------- select-dim

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub d_max: Option<usize>,
    /// Stop at the first decrease of the LOO fit
    #[arg(long)]
    pub early_stop: Option<bool>,
    #[arg(long)]
    pub loo_samples: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectCommandConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub d_max: Option<usize>,
    pub early_stop: bool,
    pub loo_samples: usize,
    pub iters: usize,
    pub learning_rate: f64,
    pub mc_samples: usize,
    pub final_mc_samples: usize,
    pub shared_lengthscales: bool,
    pub jitter: f64,
    pub init_lengthscale: f64,
    pub init_sigma: f64,
    pub map_iters: usize,
}

impl Default for SelectCommandConfig {
    fn default() -> Self {
        let f = FitCommandConfig::default();
        Self {
            seed: f.seed,
            output_dir: f.output_dir,
            threads: None,
            dataset: None,
            d_max: None,
            early_stop: false,
            loo_samples: choicegp::selection::DEFAULT_LOO_SAMPLES,
            iters: f.iters,
            learning_rate: f.learning_rate,
            mc_samples: f.mc_samples,
            final_mc_samples: f.final_mc_samples,
            shared_lengthscales: f.shared_lengthscales,
            jitter: f.jitter,
            init_lengthscale: f.init_lengthscale,
            init_sigma: f.init_sigma,
            map_iters: f.map_iters,
        }
    }
}

impl SelectCommandConfig {
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            iters: self.iters,
            learning_rate: self.learning_rate,
            mc_samples: self.mc_samples,
            final_mc_samples: self.final_mc_samples,
            seed: self.seed,
            shared_lengthscales: self.shared_lengthscales,
            jitter: self.jitter,
            init_lengthscale: self.init_lengthscale,
            init_sigma: self.init_sigma,
            map_iters: self.map_iters,
        }
    }
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Model file written by fit or select-dim
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Test objects and offered sets (dataset schema; `chosen` optional)
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// marginal or exact
    #[arg(long)]
    pub mode: Option<String>,
    /// Report the vote share of every subset (sets of at most 12 objects)
    #[arg(long)]
    pub subset_probs: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub model: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub n_samples: usize,
    pub mode: String,
    pub subset_probs: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            threads: None,
            model: None,
            test: None,
            n_samples: 1000,
            mode: "marginal".into(),
            subset_probs: false,
        }
    }
}

// --------------------------------------------------------------- evaluate

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// predictions.json written by predict
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Dataset holding the observed choices
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Directories holding eval_report.json, summarized instead
    #[arg(long, value_delimiter = ',')]
    pub aggregate: Option<Vec<PathBuf>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub predictions: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub aggregate: Option<Vec<PathBuf>>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            threads: None,
            predictions: None,
            truth: None,
            aggregate: None,
        }
    }
}
