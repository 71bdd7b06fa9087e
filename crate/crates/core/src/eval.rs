//! Metrics over predicted choice sets and observation-level splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceDataset, ChoiceObservation};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Per-object classification of test objects as chosen (positive) or rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub a_mean: f64,
    pub accuracy: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub counts: Counts,
}

impl EvalReport {
    pub fn from_counts(counts: Counts) -> Result<Self> {
        let pos = counts.tp + counts.fn_;
        let neg = counts.tn + counts.fp;
        if pos == 0 {
            return Err(Error::NoPositives);
        }
        if neg == 0 {
            return Err(Error::NoNegatives);
        }
        let tpr = counts.tp as f64 / pos as f64;
        let tnr = counts.tn as f64 / neg as f64;
        Ok(Self {
            a_mean: (tpr + tnr) / 2.0,
            accuracy: (counts.tp + counts.tn) as f64 / counts.total() as f64,
            tpr,
            tnr,
            counts,
        })
    }
}

fn aligned(predicted: &[Vec<usize>], truth: &[ChoiceObservation]) -> Result<()> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} test observations",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no test observations".into()));
    }
    for (k, (p, t)) in predicted.iter().zip(truth).enumerate() {
        if let Some(v) = p.iter().find(|v| !t.set_indices.contains(v)) {
            return Err(Error::InvalidObservation {
                observation: k,
                reason: format!("predicted object {v} is not in the offered set"),
            });
        }
    }
    Ok(())
}

/// Count chosen/rejected decisions for every object of every test set.
pub fn count_decisions(predicted: &[Vec<usize>], truth: &[ChoiceObservation]) -> Result<Counts> {
    aligned(predicted, truth)?;
    let mut c = Counts::default();
    for (p, t) in predicted.iter().zip(truth) {
        for v in &t.set_indices {
            match (t.chosen_indices.contains(v), p.contains(v)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(c)
}

/// Mean of the true-positive and true-negative rates, positive = chosen.
pub fn a_mean(predicted: &[Vec<usize>], truth: &[ChoiceObservation]) -> Result<EvalReport> {
    EvalReport::from_counts(count_decisions(predicted, truth)?)
}

/// Fraction of two-object sets whose predicted outcome (either singleton, or
/// both objects) equals the observed one.
pub fn pairwise_accuracy(predicted: &[Vec<usize>], truth: &[ChoiceObservation]) -> Result<f64> {
    aligned(predicted, truth)?;
    let mut hits = 0;
    for (k, (p, t)) in predicted.iter().zip(truth).enumerate() {
        if t.set_indices.len() != 2 {
            return Err(Error::InvalidObservation {
                observation: k,
                reason: "pairwise accuracy needs two-object sets".into(),
            });
        }
        let a: BTreeSet<_> = p.iter().collect();
        let b: BTreeSet<_> = t.chosen_indices.iter().collect();
        hits += (a == b) as usize;
    }
    Ok(hits as f64 / truth.len() as f64)
}

/// Observation-level split keeping `round(fraction · m)` observations for
/// training; both parts keep the original order and share the object table.
pub fn split_dataset(dataset: &ChoiceDataset, train_fraction: f64, seed: u64) -> Result<(ChoiceDataset, ChoiceDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let m = dataset.len();
    let n_train = (train_fraction * m as f64).round() as usize;
    if n_train == 0 || n_train == m {
        return Err(Error::InvalidArgument(format!(
            "a {train_fraction} split of {m} observations leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut stream_rng(seed, 0));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}

/// Mean and (population) standard deviation of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub a_mean: Summary,
    pub accuracy: Summary,
    pub tpr: Summary,
    pub tnr: Summary,
    pub per_run: Vec<EvalReport>,
}

pub fn aggregate(reports: &[EvalReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("nothing to aggregate".into()));
    }
    let col = |f: fn(&EvalReport) -> f64| Summary::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(Aggregate {
        runs: reports.len(),
        a_mean: col(|r| r.a_mean),
        accuracy: col(|r| r.accuracy),
        tpr: col(|r| r.tpr),
        tnr: col(|r| r.tnr),
        per_run: reports.to_vec(),
    })
}
