//! PSIS-LOO predictive fit and selection of the latent dimension.

use std::io::Write;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceDataset, ChoiceObservation};
use crate::error::{Error, Result};
use crate::likelihood::ChoiceLikelihood;
use crate::model::FittedModel;
use crate::numeric::logsumexp;
use crate::psis::{fit_gpd_tail, KHAT_THRESHOLD};
use crate::rng::stream_rng;
use crate::vi::{fit, FitConfig, FitReport};

pub const DEFAULT_LOO_SAMPLES: usize = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    /// Sum of the per-observation terms.
    pub phi: f64,
    pub elpd: Vec<f64>,
    pub khat: Vec<f64>,
    /// Observations whose weights were constant or had too short a tail;
    /// their raw weights were used unsmoothed and `khat` is 0.
    pub degenerate: Vec<bool>,
    pub n_posterior_samples: usize,
    /// Some `khat` exceeds 0.7.
    pub unreliable: bool,
}

impl LooResult {
    pub fn max_khat(&self) -> f64 {
        self.khat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn n_bad_khat(&self) -> usize {
        self.khat.iter().filter(|k| **k > KHAT_THRESHOLD).count()
    }
}

/// Observations of `dataset` re-indexed onto the model's training rows.
fn training_observations(model: &FittedModel, dataset: &ChoiceDataset) -> Result<Vec<ChoiceObservation>> {
    let mut to_train = vec![usize::MAX; dataset.objects().len()];
    for (j, &row) in model.train_rows().iter().enumerate() {
        if row >= to_train.len() {
            return Err(Error::InvalidArgument("model was fitted on a different object table".into()));
        }
        to_train[row] = j;
    }
    dataset
        .observations()
        .iter()
        .map(|o| {
            let map = |v: &usize| match to_train[*v] {
                usize::MAX => Err(Error::InvalidArgument(format!(
                    "object {v} is not among the model's training objects"
                ))),
                j => Ok(j),
            };
            Ok(ChoiceObservation::new(
                o.set_indices.iter().map(map).collect::<Result<_>>()?,
                o.chosen_indices.iter().map(map).collect::<Result<_>>()?,
            ))
        })
        .collect()
}

/// Leave-one-out predictive fit from posterior draws at the training objects,
/// with Pareto-smoothed importance weights `1 / p(z_k | u)`.
pub fn psis_loo(model: &FittedModel, dataset: &ChoiceDataset, n_samples: usize, seed: u64) -> Result<LooResult> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let observations = training_observations(model, dataset)?;
    let train = ChoiceDataset::new(
        crate::data::ObjectTable::new(model.points().clone())?,
        observations,
    )?;
    let lik = ChoiceLikelihood::new(&train);
    let m = train.len();
    let t = model.n_train();
    let d = model.latent_dim();
    let sigma = model.sigma().get();

    let mut rng = stream_rng(seed, 0);
    let mut draws = Vec::with_capacity(d);
    for i in 0..d {
        let root = model.posterior_sqrt(i)?;
        let z = DMatrix::from_fn(t, n_samples, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let mut u = root * z;
        let mean = model.posterior_mean().column(i).into_owned();
        for mut col in u.column_iter_mut() {
            col += &mean;
        }
        draws.push(u);
    }

    // log p(z_k | u^(s)), observation-major
    let mut lp = DMatrix::<f64>::zeros(m, n_samples);
    let mut u = DMatrix::zeros(t, d);
    for s in 0..n_samples {
        for (i, di) in draws.iter().enumerate() {
            u.set_column(i, &di.column(s));
        }
        lp.set_column(s, &nalgebra::DVector::from_vec(lik.per_observation(&u, sigma)));
    }

    let mut elpd = Vec::with_capacity(m);
    let mut khat = Vec::with_capacity(m);
    let mut degenerate = Vec::with_capacity(m);
    for k in 0..m {
        let row: Vec<f64> = lp.row(k).iter().copied().collect();
        let raw: Vec<f64> = row.iter().map(|v| -v).collect();
        let (lw, kh, degen) = match fit_gpd_tail(&raw) {
            Ok(fit) => (fit.log_weights, fit.khat, false),
            Err(Error::DegenerateWeights) | Err(Error::InsufficientTail(_)) => {
                let norm = logsumexp(&raw);
                (raw.iter().map(|v| v - norm).collect(), 0.0, true)
            }
            Err(e) => return Err(e),
        };
        let terms: Vec<f64> = lw.iter().zip(&row).map(|(w, l)| w + l).collect();
        elpd.push(logsumexp(&terms) - logsumexp(&lw));
        khat.push(kh);
        degenerate.push(degen);
    }
    let phi = elpd.iter().sum();
    let unreliable = khat.iter().any(|k| *k > KHAT_THRESHOLD);
    Ok(LooResult {
        phi,
        elpd,
        khat,
        degenerate,
        n_posterior_samples: n_samples,
        unreliable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub fit: FitConfig,
    pub loo_samples: usize,
    /// Stop after the first strict decrease of φ.
    pub early_stop: bool,
    /// Worker threads for fitting candidates; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            loo_samples: DEFAULT_LOO_SAMPLES,
            early_stop: false,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub d: usize,
    pub phi: f64,
    pub max_khat: f64,
    pub n_bad_khat: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub d: usize,
    pub model: FittedModel,
    pub report: FitReport,
    pub loo: LooResult,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub best_d: usize,
    pub rows: Vec<SelectionRow>,
    pub candidates: Vec<Candidate>,
    pub stopped_early: bool,
}

impl Selection {
    pub fn best(&self) -> &Candidate {
        self.candidates.iter().find(|c| c.d == self.best_d).expect("best candidate is kept")
    }

    /// `d,phi,max_khat,n_bad_khat`, one line per evaluated dimension.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "d,phi,max_khat,n_bad_khat")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.d, r.phi, r.max_khat, r.n_bad_khat)?;
        }
        Ok(())
    }
}

fn evaluate_candidate(dataset: &ChoiceDataset, d: usize, config: &SelectionConfig) -> Result<Candidate> {
    let (model, report) = fit(dataset, d, &config.fit)?;
    let loo = psis_loo(&model, dataset, config.loo_samples, config.fit.seed)?;
    Ok(Candidate { d, model, report, loo })
}

/// Fit `d = 1..=d_max` and keep the dimension with the largest φ.
pub fn select_latent_dim(dataset: &ChoiceDataset, d_max: usize, config: &SelectionConfig) -> Result<Selection> {
    if d_max == 0 {
        return Err(Error::InvalidArgument("d_max must be at least 1".into()));
    }
    config.fit.validate()?;
    let mut results: Vec<(usize, Result<Candidate>)> = Vec::with_capacity(d_max);
    let mut stopped_early = false;
    if config.early_stop {
        let mut last_phi = f64::NEG_INFINITY;
        for d in 1..=d_max {
            let r = evaluate_candidate(dataset, d, config);
            let phi = r.as_ref().map(|c| c.loo.phi).ok();
            results.push((d, r));
            if let Some(phi) = phi {
                if phi < last_phi {
                    stopped_early = d < d_max;
                    break;
                }
                last_phi = phi;
            }
        }
    } else {
        let run = || {
            (1..=d_max)
                .into_par_iter()
                .map(|d| (d, evaluate_candidate(dataset, d, config)))
                .collect::<Vec<_>>()
        };
        results = match config.threads {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .install(run),
            None => run(),
        };
    }

    let mut rows = Vec::new();
    let mut candidates = Vec::new();
    let mut first_error = None;
    for (d, r) in results {
        match r {
            Ok(c) => {
                rows.push(SelectionRow {
                    d,
                    phi: c.loo.phi,
                    max_khat: c.loo.max_khat(),
                    n_bad_khat: c.loo.n_bad_khat(),
                    error: None,
                });
                candidates.push(c);
            }
            Err(e) => {
                rows.push(SelectionRow {
                    d,
                    phi: f64::NAN,
                    max_khat: f64::NAN,
                    n_bad_khat: 0,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    let best = candidates
        .iter()
        .max_by(|a, b| a.loo.phi.total_cmp(&b.loo.phi).then(b.d.cmp(&a.d)))
        .map(|c| c.d);
    match best {
        Some(best_d) => Ok(Selection {
            best_d,
            rows,
            candidates,
            stopped_early,
        }),
        None => Err(first_error.expect("at least one candidate was tried")),
    }
}
