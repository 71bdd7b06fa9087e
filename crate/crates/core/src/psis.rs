//! Pareto-smoothed importance sampling.
//!
//! Tail handling follows the usual PSIS recipe: the largest
//! `M = min(⌈0.2 S⌉, ⌈3 √S⌉)` weights are replaced by quantiles of a
//! generalized Pareto distribution fitted to their exceedances, and every
//! weight is truncated at the largest raw weight.

use crate::error::{Error, Result};
use crate::numeric::logsumexp;

/// Weights whose log-range is below this are treated as constant.
pub const DEGENERATE_RANGE: f64 = 1e-12;
/// Pareto shape above which importance sampling is unreliable.
pub const KHAT_THRESHOLD: f64 = 0.7;
const MIN_TAIL: usize = 5;

/// Generalized Pareto fit `(k, σ)` to positive exceedances sorted ascending,
/// by the Zhang–Stephens profile posterior mean with a weak prior on `k`.
pub fn gpd_fit(sorted: &[f64]) -> (f64, f64) {
    const PRIOR_BS: f64 = 3.0;
    const PRIOR_K: f64 = 10.0;
    let n = sorted.len();
    let nf = n as f64;
    let m_est = 30 + (nf.sqrt() as usize);
    let quartile = sorted[((nf / 4.0 + 0.5) as usize).max(1) - 1];
    let last = sorted[n - 1];
    let b: Vec<f64> = (1..=m_est)
        .map(|j| {
            let v = 1.0 - (m_est as f64 / (j as f64 - 0.5)).sqrt();
            v / (PRIOR_BS * quartile) + 1.0 / last
        })
        .collect();
    let mean_log1p = |bj: f64| sorted.iter().map(|x| (-bj * x).ln_1p()).sum::<f64>() / nf;
    let len_scale: Vec<f64> = b
        .iter()
        .map(|&bj| {
            let k = mean_log1p(bj);
            nf * ((-(bj / k)).ln() - k - 1.0)
        })
        .collect();
    let mut weights: Vec<f64> = len_scale
        .iter()
        .map(|li| 1.0 / len_scale.iter().map(|lj| (lj - li).exp()).sum::<f64>())
        .collect();
    let mut bs = b;
    let keep: Vec<bool> = weights.iter().map(|w| *w >= 10.0 * f64::EPSILON).collect();
    if keep.iter().any(|k| !k) {
        weights = weights.iter().zip(&keep).filter(|(_, k)| **k).map(|(w, _)| *w).collect();
        bs = bs.iter().zip(&keep).filter(|(_, k)| **k).map(|(b, _)| *b).collect();
    }
    let total: f64 = weights.iter().sum();
    let b_post: f64 = bs.iter().zip(&weights).map(|(b, w)| b * w / total).sum();
    let k = mean_log1p(b_post);
    let sigma = -k / b_post;
    let k = (nf * k + PRIOR_K * 0.5) / (nf + PRIOR_K);
    (k, sigma)
}

/// Quantile function of the generalized Pareto distribution.
pub fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < f64::EPSILON {
        -sigma * (-p).ln_1p()
    } else {
        sigma * ((-k * (-p).ln_1p()).exp_m1()) / k
    }
}

/// Result of smoothing one vector of log importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TailFit {
    pub khat: f64,
    pub sigma: f64,
    /// Smoothed, self-normalized log weights (same order as the input).
    pub log_weights: Vec<f64>,
}

/// Number of tail draws used for `S` samples.
pub fn tail_size(s: usize) -> usize {
    let s = s as f64;
    (0.2 * s).ceil().min((3.0 * s.sqrt()).ceil()) as usize
}

/// Smooth the upper tail of raw log importance weights.
pub fn fit_gpd_tail(log_weights: &[f64]) -> Result<TailFit> {
    let s = log_weights.len();
    if log_weights.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("log importance weights"));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = log_weights.iter().copied().fold(f64::INFINITY, f64::min);
    if max - min < DEGENERATE_RANGE {
        return Err(Error::DegenerateWeights);
    }
    let m = tail_size(s);
    if m < MIN_TAIL || s <= m {
        return Err(Error::InsufficientTail(m));
    }
    let mut lw: Vec<f64> = log_weights.iter().map(|v| v - max).collect();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
    let cutoff = lw[order[s - m - 1]].max(f64::MIN_POSITIVE.ln());
    let exp_cutoff = cutoff.exp();
    let tail: Vec<usize> = order.iter().copied().filter(|&i| lw[i] > cutoff).collect();
    if tail.len() < MIN_TAIL {
        return Err(Error::InsufficientTail(tail.len()));
    }
    let exceed: Vec<f64> = tail.iter().map(|&i| lw[i].exp() - exp_cutoff).collect();
    let (khat, sigma) = gpd_fit(&exceed);
    if khat.is_finite() && sigma > 0.0 {
        let n = tail.len() as f64;
        for (j, &i) in tail.iter().enumerate() {
            let q = gpd_quantile((j as f64 + 0.5) / n, khat, sigma);
            lw[i] = (q + exp_cutoff).ln().min(0.0);
        }
    }
    let norm = logsumexp(&lw);
    lw.iter_mut().for_each(|v| *v -= norm);
    Ok(TailFit {
        khat,
        sigma,
        log_weights: lw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_size_rule() {
        assert_eq!(tail_size(4000), 190);
        assert_eq!(tail_size(100), 20);
        assert_eq!(tail_size(25), 5);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let (k, s) = (0.4, 1.7);
        let x = gpd_quantile(0.8, k, s);
        let cdf = 1.0 - (1.0 + k * x / s).powf(-1.0 / k);
        assert!((cdf - 0.8).abs() < 1e-12);
        assert!((gpd_quantile(0.5, 0.0, 2.0) - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_weights_are_degenerate() {
        assert!(matches!(fit_gpd_tail(&[0.3; 100]), Err(Error::DegenerateWeights)));
    }

    #[test]
    fn smoothing_keeps_order_and_truncates() {
        let lw: Vec<f64> = (0..400).map(|i| ((i * 7919) % 400) as f64 / 40.0).collect();
        let fit = fit_gpd_tail(&lw).unwrap();
        let total: f64 = fit.log_weights.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let max_raw = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shift = logsumexp(&lw.iter().map(|v| v - max_raw).collect::<Vec<_>>());
        for (a, b) in lw.iter().zip(&fit.log_weights) {
            // smoothed weight ≤ max raw weight after the same normalization
            assert!(*b <= -shift + 1e-12, "{a} {b}");
        }
        let mut idx: Vec<usize> = (0..lw.len()).collect();
        idx.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
        for w in idx.windows(2) {
            assert!(fit.log_weights[w[0]] <= fit.log_weights[w[1]] + 1e-15);
        }
    }
}
