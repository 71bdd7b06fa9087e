//! Probit relaxation of Pareto-rationalized choice.
//!
//! For an observation `(C(A), A)` and latent utilities `u ∈ R^{t×d}` the
//! likelihood factor is
//!
//! ```text
//!   Π_{o,v ∈ C, o≠v} (1 − P(o ≻ v) − P(v ≻ o)) · Π_{v ∈ R} (1 − Π_{o ∈ C} (1 − P(o ≻ v)))
//! ```
//!
//! with `P(o ≻ v) = Π_i Φ((u_i(o) − u_i(v)) / σ)`. Every factor is clamped to
//! `[ε, 1 − ε]` before taking logs; the clamped region has zero gradient.

use nalgebra::DMatrix;

use crate::data::{encode_observations, encode_pairs, ChoiceDataset, ChoiceObservation, PairEncoding};
use crate::error::{Error, Result};
use crate::numeric::{gauss_hermite, log1mexp, log_norm_cdf, mills_ratio, norm_cdf};

/// Clamp applied to every likelihood factor.
pub const PROB_FLOOR: f64 = 1e-12;
/// Smallest admissible likelihood scale.
pub const SIGMA_MIN: f64 = 1e-4;

/// Latent utilities of every object: row = object, column = utility.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEmbedding {
    values: DMatrix<f64>,
}

impl LatentEmbedding {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::InvalidArgument("latent dimension must be at least 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent embedding"));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn latent_dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_objects(&self) -> usize {
        self.values.nrows()
    }

    /// Utility row of one object.
    pub fn utilities(&self, object: usize) -> Vec<f64> {
        self.values.row(object).iter().copied().collect()
    }

    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let v = &self.values;
        Self {
            values: DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, perm[j])]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LikelihoodScale(f64);

impl LikelihoodScale {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= SIGMA_MIN) {
            return Err(Error::InvalidArgument(format!(
                "likelihood scale must be at least {SIGMA_MIN}, got {sigma}"
            )));
        }
        Ok(Self(sigma))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Probability that `o` Pareto-dominates `v` under the probit relaxation.
pub fn dominance_prob(o_utils: &[f64], v_utils: &[f64], sigma: f64) -> f64 {
    o_utils
        .iter()
        .zip(v_utils)
        .map(|(a, b)| norm_cdf((a - b) / sigma))
        .product()
}

#[inline]
fn clamp_log(log_p: f64) -> (f64, bool) {
    let lo = PROB_FLOOR.ln();
    let hi = (-PROB_FLOOR).ln_1p();
    if log_p.is_nan() || log_p <= lo {
        (lo, true)
    } else if log_p >= hi {
        (hi, true)
    } else {
        (log_p, false)
    }
}

/// Gradient of the dataset log-likelihood.
#[derive(Debug, Clone)]
pub struct LikelihoodGrad {
    pub value: f64,
    /// `∂/∂u`, same shape as the embedding.
    pub utilities: DMatrix<f64>,
    pub sigma: f64,
}

/// Evaluator bound to a dataset's pair encoding.
#[derive(Debug, Clone)]
pub struct ChoiceLikelihood {
    enc: PairEncoding,
}

struct Scratch {
    z: Vec<f64>,
    log_p: Vec<f64>,
    log_q: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self {
            z: vec![0.0; d],
            log_p: Vec::new(),
            log_q: Vec::new(),
        }
    }
}

impl ChoiceLikelihood {
    pub fn new(dataset: &ChoiceDataset) -> Self {
        Self {
            enc: encode_pairs(dataset),
        }
    }

    pub fn from_encoding(enc: PairEncoding) -> Self {
        Self { enc }
    }

    pub fn encoding(&self) -> &PairEncoding {
        &self.enc
    }

    pub fn n_observations(&self) -> usize {
        self.enc.n_observations()
    }

    pub fn log_lik(&self, u: &DMatrix<f64>, sigma: f64) -> f64 {
        let mut s = Scratch::new(u.ncols());
        (0..self.n_observations())
            .map(|k| self.observation_impl(k, u, sigma, None, &mut s))
            .sum()
    }

    pub fn log_lik_observation(&self, k: usize, u: &DMatrix<f64>, sigma: f64) -> f64 {
        let mut s = Scratch::new(u.ncols());
        self.observation_impl(k, u, sigma, None, &mut s)
    }

    pub fn per_observation(&self, u: &DMatrix<f64>, sigma: f64) -> Vec<f64> {
        let mut s = Scratch::new(u.ncols());
        (0..self.n_observations())
            .map(|k| self.observation_impl(k, u, sigma, None, &mut s))
            .collect()
    }

    pub fn grad(&self, u: &DMatrix<f64>, sigma: f64) -> LikelihoodGrad {
        let mut g = DMatrix::zeros(u.nrows(), u.ncols());
        let (value, ds) = self.grad_into(u, sigma, &mut g);
        LikelihoodGrad {
            value,
            utilities: g,
            sigma: ds,
        }
    }

    /// Accumulates `∂ log p / ∂u` into `grad` and returns `(log p, ∂ log p / ∂σ)`.
    pub fn grad_into(&self, u: &DMatrix<f64>, sigma: f64, grad: &mut DMatrix<f64>) -> (f64, f64) {
        let mut s = Scratch::new(u.ncols());
        let mut acc = (grad, 0.0);
        let mut value = 0.0;
        for k in 0..self.n_observations() {
            value += self.observation_impl(k, u, sigma, Some(&mut acc), &mut s);
        }
        (value, acc.1)
    }

    fn observation_impl(
        &self,
        k: usize,
        u: &DMatrix<f64>,
        sigma: f64,
        mut grad: Option<&mut (&mut DMatrix<f64>, f64)>,
        s: &mut Scratch,
    ) -> f64 {
        let d = u.ncols();
        let inv_sigma = 1.0 / sigma;
        let span = &self.enc.observation_offsets[k];
        let mut total = 0.0;

        for &(o, v) in &self.enc.incomparability_pairs[span.pairs.clone()] {
            let mut l_ov = 0.0;
            let mut l_vo = 0.0;
            for i in 0..d {
                let z = (u[(o, i)] - u[(v, i)]) * inv_sigma;
                s.z[i] = z;
                l_ov += log_norm_cdf(z);
                l_vo += log_norm_cdf(-z);
            }
            let p_ov = l_ov.exp();
            let p_vo = l_vo.exp();
            let f = 1.0 - p_ov - p_vo;
            let (val, clamped) = clamp_log(f.ln());
            total += val;
            if let (Some(acc), false) = (grad.as_deref_mut(), clamped) {
                let c_ov = -p_ov / f;
                let c_vo = -p_vo / f;
                let mut dsig = 0.0;
                for i in 0..d {
                    let z = s.z[i];
                    let r_ov = mills_ratio(z);
                    let r_vo = mills_ratio(-z);
                    let gz = c_ov * r_ov - c_vo * r_vo;
                    acc.0[(o, i)] += gz * inv_sigma;
                    acc.0[(v, i)] -= gz * inv_sigma;
                    dsig -= gz * z * inv_sigma;
                }
                acc.1 += dsig;
            }
        }

        for g in &self.enc.rejection_groups[span.groups.clone()] {
            let v = g.rejected;
            let chosen = self.enc.group_chosen(g);
            s.log_p.clear();
            s.log_q.clear();
            let mut log_q = 0.0;
            for &o in chosen {
                let mut l = 0.0;
                for i in 0..d {
                    l += log_norm_cdf((u[(o, i)] - u[(v, i)]) * inv_sigma);
                }
                let l1m = log1mexp(l);
                s.log_p.push(l);
                s.log_q.push(l1m);
                log_q += l1m;
            }
            let log_g = log1mexp(log_q);
            let (val, clamped) = clamp_log(log_g);
            total += val;
            if let (Some(acc), false) = (grad.as_deref_mut(), clamped) {
                let mut dsig = 0.0;
                for (j, &o) in chosen.iter().enumerate() {
                    let c = (log_q - log_g + s.log_p[j] - s.log_q[j]).exp();
                    for i in 0..d {
                        let z = (u[(o, i)] - u[(v, i)]) * inv_sigma;
                        let r = c * mills_ratio(z);
                        acc.0[(o, i)] += r * inv_sigma;
                        acc.0[(v, i)] -= r * inv_sigma;
                        dsig -= r * z * inv_sigma;
                    }
                }
                acc.1 += dsig;
            }
        }
        total
    }
}

/// Log of one observation's likelihood factor.
pub fn log_lik_observation(obs: &ChoiceObservation, u: &LatentEmbedding, sigma: LikelihoodScale) -> f64 {
    let enc = encode_observations(std::slice::from_ref(obs), u.n_objects());
    ChoiceLikelihood::from_encoding(enc).log_lik_observation(0, u.values(), sigma.get())
}

pub fn log_lik_dataset(dataset: &ChoiceDataset, u: &LatentEmbedding, sigma: LikelihoodScale) -> f64 {
    ChoiceLikelihood::new(dataset).log_lik(u.values(), sigma.get())
}

pub fn grad_log_lik(dataset: &ChoiceDataset, u: &LatentEmbedding, sigma: LikelihoodScale) -> LikelihoodGrad {
    ChoiceLikelihood::new(dataset).grad(u.values(), sigma.get())
}

/// Single-utility probit preference log-likelihood `Σ log Φ((u_w − u_l)/σ)`
/// over `(winner, loser)` pairs.
pub fn probit_log_lik(pairs: &[(usize, usize)], u: &[f64], sigma: f64) -> f64 {
    pairs
        .iter()
        .map(|&(w, l)| log_norm_cdf((u[w] - u[l]) / sigma))
        .sum()
}

/// `Π_v Φ((u(o) − u(v))/σ)`: one chosen object against all rejected ones.
pub fn single_utility_likelihood(o_util: f64, rejected_utils: &[f64], sigma: f64) -> f64 {
    rejected_utils
        .iter()
        .map(|v| log_norm_cdf((o_util - v) / sigma))
        .sum::<f64>()
        .exp()
}

/// Additive-noise batch likelihood
/// `∫ Π_v Φ((u(o) + w − u(v))/σ) N(w; 0, σ²) dw`, by Gauss–Hermite quadrature.
pub fn batch_likelihood(
    o_util: f64,
    rejected_utils: &[f64],
    sigma: f64,
    quadrature_order: usize,
) -> Result<f64> {
    if quadrature_order < 16 {
        return Err(Error::InvalidArgument(format!(
            "quadrature order must be at least 16, got {quadrature_order}"
        )));
    }
    let (nodes, weights) = gauss_hermite(quadrature_order);
    let scale = std::f64::consts::SQRT_2;
    let mut total = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let log_prod: f64 = rejected_utils
            .iter()
            .map(|v| log_norm_cdf((o_util - v) / sigma + scale * x))
            .sum();
        total += w * log_prod.exp();
    }
    Ok(total / std::f64::consts::PI.sqrt())
}
