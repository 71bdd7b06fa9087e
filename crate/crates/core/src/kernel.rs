//! Squared-exponential ARD kernel and stabilized Gram factorizations.
//!
//! The kernel amplitude is fixed at one; the likelihood scale absorbs the
//! overall utility scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Points;
use crate::error::{Error, Result};

pub const DEFAULT_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub jitter: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, jitter: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::InvalidArgument("at least one lengthscale is required".into()));
        }
        if lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "lengthscales must be positive, got {lengthscales:?}"
            )));
        }
        if !(jitter.is_finite() && jitter > 0.0) {
            return Err(Error::InvalidArgument(format!("jitter must be positive, got {jitter}")));
        }
        Ok(Self { lengthscales, jitter })
    }

    pub fn isotropic(c: usize, lengthscale: f64) -> Result<Self> {
        Self::new(vec![lengthscale; c], DEFAULT_JITTER)
    }

    pub fn n_features(&self) -> usize {
        self.lengthscales.len()
    }
}

/// `k(x, x') = exp(-Σ_i (x_i - x'_i)² / (2 ℓ_i²))`
#[inline]
pub fn rbf_ard(x: &[f64], y: &[f64], params: &KernelParams) -> f64 {
    debug_assert_eq!(x.len(), params.lengthscales.len());
    let mut s = 0.0;
    for ((a, b), l) in x.iter().zip(y).zip(&params.lengthscales) {
        let r = (a - b) / l;
        s += r * r;
    }
    (-0.5 * s).exp()
}

/// Covariance of `q([x_i, x_j]) = u(x_i) - u(x_j)` under a GP prior on `u`.
pub fn preference_kernel(
    pair: (&[f64], &[f64]),
    other: (&[f64], &[f64]),
    params: &KernelParams,
) -> f64 {
    let (xi, xj) = pair;
    let (yi, yj) = other;
    rbf_ard(xi, yi, params) - rbf_ard(xi, yj, params) - rbf_ard(yi, xj, params)
        + rbf_ard(xj, yj, params)
}

/// `K + jitter·I` together with its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct Gram {
    pub matrix: DMatrix<f64>,
    pub chol: DMatrix<f64>,
    pub jitter: f64,
}

/// Kernel matrix without jitter.
pub fn kernel_matrix(points: &Points, params: &KernelParams) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = 1.0;
        let xj = points.row(j);
        for i in j + 1..n {
            let v = rbf_ard(points.row(i), xj, params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Gram matrix with jitter escalated ×10 from `params.jitter` until the
/// Cholesky factorization succeeds or jitter exceeds [`MAX_JITTER`].
pub fn gram_matrix(points: &Points, params: &KernelParams) -> Result<Gram> {
    factor_with_jitter(kernel_matrix(points, params), params.jitter)
}

pub(crate) fn factor_with_jitter(k: DMatrix<f64>, start: f64) -> Result<Gram> {
    let n = k.nrows();
    let mut jitter = start;
    loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.clone().cholesky() {
            let chol = ch.l();
            if chol.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Ok(Gram {
                    matrix: m,
                    chol,
                    jitter,
                });
            }
        }
        if jitter * 10.0 > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::FactorizationFailure { jitter });
        }
        jitter *= 10.0;
    }
}

/// Cross-covariance `k(a_i, b_j)`. Rows that are bitwise identical also get
/// the jitter nugget, so evaluating at training inputs reproduces `K + jitter·I`.
pub fn cross_kernel(a: &Points, b: &Points, params: &KernelParams, jitter: f64) -> DMatrix<f64> {
    let mut k = DMatrix::<f64>::zeros(a.len(), b.len());
    for j in 0..b.len() {
        let bj = b.row(j);
        for i in 0..a.len() {
            let ai = a.row(i);
            let mut v = rbf_ard(ai, bj, params);
            if ai == bj {
                v += jitter;
            }
            k[(i, j)] = v;
        }
    }
    k
}

/// Gradient with respect to `log ℓ_f` of `Σ_ab kbar_ab K_ab`, where `K` is
/// the jitter-free kernel matrix of `points`.
pub fn log_lengthscale_grad(
    points: &Points,
    params: &KernelParams,
    kbar: &DMatrix<f64>,
) -> Vec<f64> {
    let n = points.len();
    let c = params.n_features();
    let inv_l2: Vec<f64> = params.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    let mut grad = vec![0.0; c];
    let mut diff = vec![0.0; c];
    for j in 0..n {
        let xj = points.row(j);
        for i in j + 1..n {
            let xi = points.row(i);
            let mut s = 0.0;
            for f in 0..c {
                let d = xi[f] - xj[f];
                diff[f] = d * d * inv_l2[f];
                s += diff[f];
            }
            let w = (kbar[(i, j)] + kbar[(j, i)]) * (-0.5 * s).exp();
            for f in 0..c {
                grad[f] += w * diff[f];
            }
        }
    }
    grad
}
