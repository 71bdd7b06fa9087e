use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use choicegp::data::{ChoiceDataset, DatasetFile, Points};
use choicegp::eval::{a_mean, aggregate, pairwise_accuracy, split_dataset, EvalReport};
use choicegp::kernel::KernelParams;
use choicegp::model::FittedModel;
use choicegp::model_file::ModelFile;
use choicegp::predict::{choice_votes, SetMode, MAX_EXACT_SET};
use choicegp::rng::derive_seed;
use choicegp::selection::{select_latent_dim, SelectionConfig};
use choicegp::synthetic::{
    choices_to_preferences, gen_benchmark, gen_example1, gen_kernel_mixture, gen_pairwise_datasets, sample_pairs,
    ConversionMode, PairMode, TestProblem,
};
use choicegp::vi::fit as fit_model;
use nalgebra::DMatrix;

use crate::config::{
    resolve, EvaluateArgs, EvaluateConfig, FitArgs, FitCommandConfig, GenerateArgs, GenerateConfig, PredictArgs,
    PredictConfig, SelectArgs, SelectCommandConfig,
};
use crate::CliError;

const GENERATORS: &str = "example1, zdt1, dtlz2, kernel_mixture";

/// Files a command produces, written only once everything succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(&'static str, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn json(&mut self, name: &'static str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
        text.push('\n');
        self.files.push((name, text));
        Ok(())
    }

    fn text(&mut self, name: &'static str, text: String) {
        self.files.push((name, text));
    }

    fn write(self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", self.dir.display())))?;
        for (name, text) in self.files {
            let path = self.dir.join(name);
            std::fs::write(&path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(())
    }
}

fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(job()),
        Some(0) => Err(CliError::usage("threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::runtime(e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

fn check_output_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() && !dir.is_dir() {
        return Err(CliError::usage(format!("output_dir {} is not a directory", dir.display())));
    }
    Ok(())
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| CliError::usage(format!("missing required key `{key}`")))
}

fn read_input(path: &Path, what: &str) -> Result<String, CliError> {
    if !path.is_file() {
        return Err(CliError::usage(format!("{what} not found: {}", path.display())));
    }
    std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<ChoiceDataset, CliError> {
    let text = read_input(path, "dataset")?;
    let file: DatasetFile = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("invalid dataset {}: {e}", path.display())))?;
    file.into_dataset()
        .map_err(|e| CliError::usage(format!("invalid dataset {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<FittedModel, CliError> {
    let text = read_input(path, "model")?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid model {}: {e}", path.display())))?;
    file.into_model()
        .map_err(|e| CliError::usage(format!("invalid model {}: {e}", path.display())))
}

// ---------------------------------------------------------------- generate

enum Generator {
    Example1,
    Benchmark(TestProblem),
    KernelMixture,
}

pub fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let cfg: GenerateConfig = resolve(args.common.config.as_deref(), &args)?;
    check_output_dir(&cfg.output_dir)?;
    let generator = match cfg.generator.as_str() {
        "example1" => Generator::Example1,
        "zdt1" => Generator::Benchmark(TestProblem::Zdt1),
        "dtlz2" => Generator::Benchmark(TestProblem::Dtlz2),
        "kernel_mixture" => Generator::KernelMixture,
        other => return Err(CliError::usage(format!("unknown generator {other:?} (available: {GENERATORS})"))),
    };
    let pair_mode: PairMode = cfg.pair_mode.parse()?;
    let conversion = match cfg.conversion.as_deref() {
        None => None,
        Some("random") => Some(ConversionMode::Random),
        Some("majority") => Some(ConversionMode::Majority),
        Some(other) => return Err(CliError::usage(format!("unknown conversion {other:?} (random or majority)"))),
    };
    if conversion.is_some() && !matches!(generator, Generator::KernelMixture) && cfg.set_size != 2 {
        return Err(CliError::usage("conversion needs two-object sets (set_size 2 or kernel_mixture)"));
    }
    if let Some(f) = cfg.train_fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(CliError::usage(format!("train_fraction must be in (0, 1), got {f}")));
        }
    }

    let seed = cfg.seed;
    let (dataset, truth, outputs) = with_threads(cfg.threads, || -> Result<_, CliError> {
        Ok(match generator {
            Generator::Example1 => {
                let [lo, hi] = cfg.domain[..] else {
                    return Err(CliError::usage("domain must hold two numbers"));
                };
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(CliError::usage(format!("invalid domain [{lo}, {hi}]")));
                }
                let (ds, truth) = gen_example1(cfg.n_points, cfg.m_sets, cfg.set_size, (lo, hi), seed)?;
                let u = rows_to_matrix(&truth.utilities);
                (ds, truth, u)
            }
            Generator::Benchmark(problem) => {
                let n_obj = cfg.n_objectives.unwrap_or(match problem {
                    TestProblem::Zdt1 => 2,
                    TestProblem::Dtlz2 => 5,
                });
                let c = cfg.n_features.unwrap_or(10);
                let (ds, truth) = gen_benchmark(problem, n_obj, cfg.n_points, c, cfg.m_sets, cfg.set_size, seed)?;
                let u = rows_to_matrix(&truth.utilities);
                (ds, truth, u)
            }
            Generator::KernelMixture => {
                let c = cfg.n_features.unwrap_or(2);
                let kp = KernelParams::isotropic(c, cfg.lengthscale)?;
                let mix = gen_kernel_mixture(cfg.n_points, c, cfg.latent_states, &kp, seed)?;
                let pairs = sample_pairs(cfg.n_points, cfg.m_sets, derive_seed(seed, 1))?;
                let ds = gen_pairwise_datasets(&mix, &pairs, pair_mode)?;
                (ds, mix.ground_truth(seed), mix.utilities)
            }
        })
    })??;

    let mut out = Outputs::new(&cfg.output_dir);
    out.json("dataset.json", &dataset.to_file())?;
    out.json("truth.json", &truth)?;
    let preferences = match conversion {
        Some(mode) => {
            let p = choices_to_preferences(&dataset, &outputs, mode, derive_seed(seed, 2))?;
            out.json("preferences.json", &p.to_file())?;
            Some(p)
        }
        None => None,
    };
    if let Some(f) = cfg.train_fraction {
        // the split depends only on the observation count and seed, so the
        // converted copy is split the same way
        let split_seed = derive_seed(seed, 3);
        let (train, test) = split_dataset(&dataset, f, split_seed)?;
        out.json("train.json", &train.to_file())?;
        out.json("test.json", &test.to_file())?;
        if let Some(p) = &preferences {
            let (ptrain, _) = split_dataset(p, f, split_seed)?;
            out.json("train_preferences.json", &ptrain.to_file())?;
        }
    }
    out.write()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

// -------------------------------------------------------------- fit, select

pub fn fit(args: FitArgs) -> Result<(), CliError> {
    let cfg: FitCommandConfig = resolve(args.common.config.as_deref(), &args)?;
    check_output_dir(&cfg.output_dir)?;
    let d = cfg.latent_dim.ok_or_else(|| CliError::usage("missing required key `latent_dim`"))?;
    if d == 0 {
        return Err(CliError::usage("latent_dim must be at least 1"));
    }
    let fit_cfg = cfg.fit_config();
    fit_cfg.validate()?;
    let dataset = load_dataset(require(&cfg.dataset, "dataset")?)?;

    let (model, report) = with_threads(cfg.threads, || fit_model(&dataset, d, &fit_cfg))??;
    let mut out = Outputs::new(&cfg.output_dir);
    out.json("model.json", &ModelFile::from_model(&model, &report))?;
    out.json("fit_report.json", &report)?;
    out.write()
}

pub fn select_dim(args: SelectArgs) -> Result<(), CliError> {
    let cfg: SelectCommandConfig = resolve(args.common.config.as_deref(), &args)?;
    check_output_dir(&cfg.output_dir)?;
    let d_max = cfg.d_max.ok_or_else(|| CliError::usage("missing required key `d_max`"))?;
    if d_max == 0 {
        return Err(CliError::usage("d_max must be at least 1"));
    }
    if cfg.loo_samples == 0 {
        return Err(CliError::usage("loo_samples must be at least 1"));
    }
    if cfg.threads == Some(0) {
        return Err(CliError::usage("threads must be at least 1"));
    }
    let sel_cfg = SelectionConfig {
        fit: cfg.fit_config(),
        loo_samples: cfg.loo_samples,
        early_stop: cfg.early_stop,
        threads: cfg.threads,
    };
    sel_cfg.fit.validate()?;
    let dataset = load_dataset(require(&cfg.dataset, "dataset")?)?;

    let selection = select_latent_dim(&dataset, d_max, &sel_cfg)?;
    let mut csv = Vec::new();
    selection.write_csv(&mut csv)?;
    let best = selection.best();
    let mut out = Outputs::new(&cfg.output_dir);
    out.text("selection.csv", String::from_utf8(csv).expect("csv is utf-8"));
    out.json("model.json", &ModelFile::from_model(&best.model, &best.report))?;
    out.json("fit_report.json", &best.report)?;
    out.write()
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestFile {
    features: Vec<Vec<f64>>,
    observations: Vec<TestSet>,
}

/// An offered set; an observed choice may be present and is ignored.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestSet {
    set: Vec<usize>,
    #[serde(default)]
    #[allow(dead_code)]
    chosen: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionsFile {
    pub mode: SetMode,
    pub n_samples: usize,
    pub seed: u64,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub set: Vec<usize>,
    pub chosen: Vec<usize>,
    /// Share of posterior samples in which each object of `set` is undominated.
    pub chosen_probability: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_probabilities: Option<Vec<SubsetProbability>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetProbability {
    pub subset: Vec<usize>,
    pub probability: f64,
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let cfg: PredictConfig = resolve(args.common.config.as_deref(), &args)?;
    check_output_dir(&cfg.output_dir)?;
    let mode = match cfg.mode.as_str() {
        "marginal" => SetMode::Marginal,
        "exact" => SetMode::Exact,
        other => return Err(CliError::usage(format!("unknown mode {other:?} (marginal or exact)"))),
    };
    if cfg.n_samples == 0 {
        return Err(CliError::usage("n_samples must be at least 1"));
    }
    let model = load_model(require(&cfg.model, "model")?)?;
    let test_path = require(&cfg.test, "test")?;
    let test: TestFile = serde_json::from_str(&read_input(test_path, "test set")?)
        .map_err(|e| CliError::usage(format!("invalid test set {}: {e}", test_path.display())))?;
    let points = Points::from_rows(&test.features)
        .map_err(|e| CliError::usage(format!("invalid test set {}: {e}", test_path.display())))?;
    if points.dim() != model.n_features() {
        return Err(CliError::usage(format!(
            "model expects {} features, test objects have {}",
            model.n_features(),
            points.dim()
        )));
    }
    for (k, o) in test.observations.iter().enumerate() {
        if o.set.len() < 2 {
            return Err(CliError::usage(format!("test observation {k}: an offered set needs two objects")));
        }
        if let Some(i) = o.set.iter().find(|&&i| i >= points.len()) {
            return Err(CliError::usage(format!("test observation {k}: object {i} out of range")));
        }
        let mut s = o.set.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != o.set.len() {
            return Err(CliError::usage(format!("test observation {k}: repeated object")));
        }
        if cfg.subset_probs && o.set.len() > MAX_EXACT_SET {
            return Err(CliError::usage(format!(
                "test observation {k}: subset probabilities need at most {MAX_EXACT_SET} objects"
            )));
        }
    }

    let predictions = with_threads(cfg.threads, || {
        test.observations
            .par_iter()
            .enumerate()
            .map(|(k, o)| {
                let votes = choice_votes(&model, &points, &o.set, cfg.n_samples, derive_seed(cfg.seed, k as u64))?;
                let subsets = cfg.subset_probs.then(|| {
                    votes
                        .subset_probabilities()
                        .expect("set size checked")
                        .into_iter()
                        .map(|(subset, probability)| SubsetProbability { subset, probability })
                        .collect()
                });
                Ok(Prediction {
                    set: o.set.clone(),
                    chosen: votes.decide(mode),
                    chosen_probability: votes.marginals(),
                    subset_probabilities: subsets,
                })
            })
            .collect::<choicegp::Result<Vec<_>>>()
    })??;

    let file = PredictionsFile {
        mode,
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        predictions,
    };
    let mut out = Outputs::new(&cfg.output_dir);
    out.json("predictions.json", &file)?;
    out.write()
}

// --------------------------------------------------------------- evaluate

#[derive(Debug, Serialize, Deserialize)]
struct EvalOutput {
    #[serde(flatten)]
    report: EvalReport,
    n_observations: usize,
    /// exact-match rate, present when every set is a pair
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pairwise_accuracy: Option<f64>,
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let cfg: EvaluateConfig = resolve(args.common.config.as_deref(), &args)?;
    check_output_dir(&cfg.output_dir)?;
    if let Some(dirs) = &cfg.aggregate {
        if cfg.predictions.is_some() || cfg.truth.is_some() {
            return Err(CliError::usage("aggregate cannot be combined with predictions or truth"));
        }
        return aggregate_dirs(dirs, &cfg.output_dir);
    }
    let pred_path = require(&cfg.predictions, "predictions")?;
    let preds: PredictionsFile = serde_json::from_str(&read_input(pred_path, "predictions")?)
        .map_err(|e| CliError::usage(format!("invalid predictions {}: {e}", pred_path.display())))?;
    let truth = load_dataset(require(&cfg.truth, "truth")?)?;
    if preds.predictions.is_empty() {
        return Err(CliError::usage("predictions file holds no predictions"));
    }
    if preds.predictions.len() != truth.len() {
        return Err(CliError::usage(format!(
            "{} predictions for {} observations",
            preds.predictions.len(),
            truth.len()
        )));
    }
    for (k, (p, t)) in preds.predictions.iter().zip(truth.observations()).enumerate() {
        if p.set != t.set_indices {
            return Err(CliError::usage(format!("observation {k}: predicted and observed sets differ")));
        }
    }

    let predicted: Vec<Vec<usize>> = preds.predictions.iter().map(|p| p.chosen.clone()).collect();
    let report = a_mean(&predicted, truth.observations())?;
    let all_pairs = truth.observations().iter().all(|o| o.set_indices.len() == 2);
    let pairwise = if all_pairs {
        Some(pairwise_accuracy(&predicted, truth.observations())?)
    } else {
        None
    };
    let c = report.counts;
    let mut csv = String::from("a_mean,accuracy,tpr,tnr,tp,tn,fp,fn,n_observations\n");
    csv.push_str(&format!(
        "{},{},{},{},{},{},{},{},{}\n",
        report.a_mean,
        report.accuracy,
        report.tpr,
        report.tnr,
        c.tp,
        c.tn,
        c.fp,
        c.fn_,
        truth.len()
    ));
    let output = EvalOutput {
        report,
        n_observations: truth.len(),
        pairwise_accuracy: pairwise,
    };
    let mut out = Outputs::new(&cfg.output_dir);
    out.json("eval_report.json", &output)?;
    out.text("eval_report.csv", csv);
    out.write()
}

fn aggregate_dirs(dirs: &[PathBuf], output_dir: &Path) -> Result<(), CliError> {
    let mut reports = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let path = dir.join("eval_report.json");
        let parsed: EvalOutput = serde_json::from_str(&read_input(&path, "evaluation report")?)
            .map_err(|e| CliError::usage(format!("invalid report {}: {e}", path.display())))?;
        reports.push(parsed.report);
    }
    let agg = aggregate(&reports)?;
    let mut csv = String::from("metric,mean,std\n");
    for (name, s) in [("a_mean", agg.a_mean), ("accuracy", agg.accuracy), ("tpr", agg.tpr), ("tnr", agg.tnr)] {
        csv.push_str(&format!("{name},{},{}\n", s.mean, s.std));
    }
    let mut out = Outputs::new(output_dir);
    out.json("aggregate.json", &agg)?;
    out.text("aggregate.csv", csv);
    out.write()
}
