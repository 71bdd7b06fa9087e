//! Predictive latent utilities at new objects and set-valued choice
//! prediction by Monte Carlo.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceObservation, Points};
use crate::error::{Error, Result};
use crate::kernel::{cross_kernel, factor_with_jitter};
use crate::likelihood::LatentEmbedding;
use crate::model::FittedModel;
use crate::rng::stream_rng;
use crate::synthetic::undominated_rows;

/// Largest offered set for which every subset gets its own vote counter.
pub const MAX_EXACT_SET: usize = 12;
const SAMPLING_JITTER: f64 = 1e-10;

/// Joint Gaussian over the latent utilities at `p` test objects, one
/// block per latent dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveGaussian {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

impl PredictiveGaussian {
    pub fn n_points(&self) -> usize {
        self.mean[0].len()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal variances, `p × d`.
    pub fn variances(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_points(), self.latent_dim(), |j, i| self.cov[i][(j, j)])
    }

    /// Posterior means, `p × d`.
    pub fn means(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_points(), self.latent_dim(), |j, i| self.mean[i][j])
    }

    /// `n` joint draws, each a `p × d` utility matrix.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
        let p = self.n_points();
        let d = self.latent_dim();
        let mut rng = stream_rng(seed, 0);
        let mut out = vec![DMatrix::zeros(p, d); n];
        for i in 0..d {
            let l = factor_with_jitter(self.cov[i].clone(), SAMPLING_JITTER)?.chol;
            let z = DMatrix::from_fn(p, n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
            let draws = l * z;
            for (s, u) in out.iter_mut().enumerate() {
                for j in 0..p {
                    u[(j, i)] = self.mean[i][j] + draws[(j, s)];
                }
            }
        }
        Ok(out)
    }
}

/// Condition the GP prior on the variational posterior at the training inputs.
pub fn predict_latent(model: &FittedModel, x_star: &Points) -> Result<PredictiveGaussian> {
    if x_star.dim() != model.n_features() {
        return Err(Error::InvalidArgument(format!(
            "model expects {} features, test objects have {}",
            model.n_features(),
            x_star.dim()
        )));
    }
    if x_star.is_empty() {
        return Err(Error::InvalidArgument("no test objects".into()));
    }
    if x_star.rows().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidObjects("test features must be finite".into()));
    }
    let d = model.latent_dim();
    let mut mean = Vec::with_capacity(d);
    let mut cov = Vec::with_capacity(d);
    for i in 0..d {
        let kp = model.kernel(i);
        let kstar = cross_kernel(model.points(), x_star, kp, kp.jitter);
        let kss = cross_kernel(x_star, x_star, kp, kp.jitter);
        mean.push(kstar.tr_mul(&model.state().nu[i]));
        let v = model.whitened_cross(i, &kstar);
        let mut c = kss - v.transpose() * &v;
        // exact symmetry for the sampler
        c = (&c + c.transpose()) * 0.5;
        cov.push(c);
    }
    if mean.iter().flat_map(|m| m.iter()).chain(cov.iter().flat_map(|c| c.iter())).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("predictive distribution"));
    }
    Ok(PredictiveGaussian { mean, cov })
}

/// How a sampled utility matrix scores a candidate choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantics {
    /// probit likelihood at the model's σ
    Relaxed,
    /// exact Pareto indicator (σ → 0)
    Indicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetMode {
    /// most voted subset (falls back to `Marginal` above [`MAX_EXACT_SET`] objects)
    Exact,
    /// objects undominated in at least half of the samples
    Marginal,
}

fn check_indices(a_star: &[usize], c_star: &[usize], p: usize) -> Result<()> {
    let obs = ChoiceObservation::new(a_star.to_vec(), c_star.to_vec());
    obs.check(0, p)
}

fn set_points(x_star: &Points, a_star: &[usize]) -> Points {
    x_star.select(a_star)
}

/// Monte-Carlo probability that `c_star` is the choice from `a_star`,
/// both given as indices into `x_star`.
pub fn choice_probability(
    model: &FittedModel,
    x_star: &Points,
    a_star: &[usize],
    c_star: &[usize],
    n_samples: usize,
    seed: u64,
    semantics: Semantics,
) -> Result<f64> {
    check_indices(a_star, c_star, x_star.len())?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let pg = predict_latent(model, &set_points(x_star, a_star))?;
    let draws = pg.sample(n_samples, seed)?;
    // re-index the choice into positions within a_star
    let pos = |v: &usize| a_star.iter().position(|a| a == v).expect("checked subset");
    let local_chosen: Vec<usize> = c_star.iter().map(pos).collect();
    let total: f64 = match semantics {
        Semantics::Relaxed => {
            let obs = ChoiceObservation::new((0..a_star.len()).collect(), local_chosen);
            let sigma = model.sigma();
            draws
                .into_iter()
                .map(|u| {
                    let emb = LatentEmbedding::new(u).expect("finite draws");
                    crate::likelihood::log_lik_observation(&obs, &emb, sigma).exp()
                })
                .sum()
        }
        Semantics::Indicator => {
            let mut target = vec![false; a_star.len()];
            for &j in &local_chosen {
                target[j] = true;
            }
            draws.iter().filter(|u| vote(u) == target).count() as f64
        }
    };
    Ok(total / n_samples as f64)
}

/// Undominated rows of one sampled utility matrix.
fn vote(u: &DMatrix<f64>) -> Vec<bool> {
    let rows: Vec<Vec<f64>> = u.row_iter().map(|r| r.iter().copied().collect()).collect();
    undominated_rows(&rows)
}

fn bitmask(keep: &[bool]) -> u64 {
    keep.iter().enumerate().filter(|(_, k)| **k).fold(0u64, |m, (j, _)| m | (1 << j))
}

/// Per-sample Pareto votes for one offered set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceVotes {
    /// The offered set, as indices into the test objects.
    pub set: Vec<usize>,
    pub n_samples: usize,
    /// Samples in which each object of `set` was undominated.
    pub undominated: Vec<usize>,
    /// Votes per subset bitmask (empty when the set is too large).
    pub subset_votes: Vec<usize>,
}

impl ChoiceVotes {
    pub fn marginals(&self) -> Vec<f64> {
        let n = self.n_samples as f64;
        self.undominated.iter().map(|&c| c as f64 / n).collect()
    }

    /// All non-empty subsets with their vote shares, as object indices.
    pub fn subset_probabilities(&self) -> Option<Vec<(Vec<usize>, f64)>> {
        if self.subset_votes.is_empty() {
            return None;
        }
        let n = self.n_samples as f64;
        Some(
            (1..self.subset_votes.len())
                .map(|mask| (self.members(mask as u64), self.subset_votes[mask] as f64 / n))
                .collect(),
        )
    }

    fn members(&self, mask: u64) -> Vec<usize> {
        (0..self.set.len()).filter(|j| mask >> j & 1 == 1).map(|j| self.set[j]).collect()
    }

    pub fn decide(&self, mode: SetMode) -> Vec<usize> {
        if mode == SetMode::Exact && !self.subset_votes.is_empty() {
            // ties go to the smallest bitmask
            let best = (1..self.subset_votes.len())
                .max_by(|&a, &b| self.subset_votes[a].cmp(&self.subset_votes[b]).then(b.cmp(&a)))
                .expect("non-empty set");
            let mut out = self.members(best as u64);
            out.sort_unstable();
            return out;
        }
        let marg = self.marginals();
        let mut out: Vec<usize> = (0..self.set.len()).filter(|&j| marg[j] >= 0.5).map(|j| self.set[j]).collect();
        if out.is_empty() {
            let best = (0..self.set.len())
                .max_by(|&a, &b| marg[a].total_cmp(&marg[b]).then(b.cmp(&a)))
                .expect("non-empty set");
            out.push(self.set[best]);
        }
        out.sort_unstable();
        out
    }
}

/// Draw joint utilities of `a_star` and record each sample's undominated set.
pub fn choice_votes(
    model: &FittedModel,
    x_star: &Points,
    a_star: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<ChoiceVotes> {
    check_indices(a_star, &a_star[..a_star.len().min(1)], x_star.len())?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let n = a_star.len();
    let pg = predict_latent(model, &set_points(x_star, a_star))?;
    let draws = pg.sample(n_samples, seed)?;
    let mut undominated = vec![0; n];
    let mut subset_votes = if n <= MAX_EXACT_SET { vec![0; 1 << n] } else { Vec::new() };
    for u in &draws {
        let keep = vote(u);
        for (c, k) in undominated.iter_mut().zip(&keep) {
            *c += *k as usize;
        }
        if !subset_votes.is_empty() {
            subset_votes[bitmask(&keep) as usize] += 1;
        }
    }
    Ok(ChoiceVotes {
        set: a_star.to_vec(),
        n_samples,
        undominated,
        subset_votes,
    })
}

/// Predicted chosen subset of `a_star` (indices into `x_star`, ascending).
pub fn predict_choice_set(
    model: &FittedModel,
    x_star: &Points,
    a_star: &[usize],
    n_samples: usize,
    seed: u64,
    mode: SetMode,
) -> Result<Vec<usize>> {
    if a_star.len() < 2 {
        return Err(Error::InvalidArgument("an offered set needs at least two objects".into()));
    }
    Ok(choice_votes(model, x_star, a_star, n_samples, seed)?.decide(mode))
}
