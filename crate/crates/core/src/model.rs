//! Frozen variational posterior.

use nalgebra::{DMatrix, DVector};

use crate::data::Points;
use crate::error::{Error, Result};
use crate::kernel::{cross_kernel, KernelParams};
use crate::likelihood::LikelihoodScale;
use crate::linalg::lower_inverse;
use crate::vi::VariationalState;

/// Posterior `q(u_i) = N(K_i ν_i, (K_i⁻¹ + diag λ_i)⁻¹)` at the training
/// objects, plus the factorizations needed for prediction.
#[derive(Debug, Clone)]
pub struct FittedModel {
    points: Points,
    train_rows: Vec<usize>,
    state: VariationalState,
    means: DMatrix<f64>,
    // chol(I + Λ^½ K Λ^½) per latent dimension
    b_chol: Vec<DMatrix<f64>>,
    sqrt_lambda: Vec<DVector<f64>>,
}

impl FittedModel {
    /// `train_rows[j]` is the row of the original object table that training
    /// point `j` came from.
    pub fn new(points: Points, train_rows: Vec<usize>, state: VariationalState) -> Result<Self> {
        let t = points.len();
        if state.n_objects() != t {
            return Err(Error::InvalidArgument(format!(
                "state has {} objects but {t} training points were given",
                state.n_objects()
            )));
        }
        if train_rows.len() != t {
            return Err(Error::InvalidArgument("train_rows must have one entry per training point".into()));
        }
        if state.kernels.iter().any(|k| k.n_features() != points.dim()) {
            return Err(Error::InvalidArgument("lengthscale count differs from feature count".into()));
        }
        let d = state.latent_dim();
        let grams: Vec<DMatrix<f64>> = state
            .kernels
            .iter()
            .map(|k| cross_kernel(&points, &points, k, k.jitter))
            .collect();
        let mut means = DMatrix::zeros(t, d);
        let mut b_chol = Vec::with_capacity(d);
        let mut sqrt_lambda = Vec::with_capacity(d);
        for i in 0..d {
            let k = &grams[state.kernel_index(i)];
            means.set_column(i, &(k * &state.nu[i]));
            let sl = state.lambda[i].map(f64::sqrt);
            let mut b = DMatrix::from_fn(t, t, |r, c| sl[r] * k[(r, c)] * sl[c]);
            for j in 0..t {
                b[(j, j)] += 1.0;
            }
            let chol = b.cholesky().ok_or(Error::FactorizationFailure {
                jitter: state.kernel(i).jitter,
            })?;
            b_chol.push(chol.l());
            sqrt_lambda.push(sl);
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("posterior mean"));
        }
        Ok(Self {
            points,
            train_rows,
            state,
            means,
            b_chol,
            sqrt_lambda,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.state.latent_dim()
    }

    pub fn n_train(&self) -> usize {
        self.points.len()
    }

    pub fn n_features(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn train_rows(&self) -> &[usize] {
        &self.train_rows
    }

    pub fn state(&self) -> &VariationalState {
        &self.state
    }

    pub fn kernel(&self, i: usize) -> &KernelParams {
        self.state.kernel(i)
    }

    pub fn sigma(&self) -> LikelihoodScale {
        self.state.sigma
    }

    /// Posterior means at the training objects (`t × d`).
    pub fn posterior_mean(&self) -> &DMatrix<f64> {
        &self.means
    }

    /// `S_i = K − K (K + Λ⁻¹)⁻¹ K` at the training objects.
    pub fn posterior_cov(&self, i: usize) -> DMatrix<f64> {
        let k = self.train_gram(i);
        let v = self.whitened_cross(i, &k);
        k - v.transpose() * &v
    }

    /// Square root `R` of `S_i` (`R Rᵀ = S_i`), the same one used for
    /// sampling during fitting: `R = L_K L_M⁻ᵀ`, `L_M L_Mᵀ = I + L_Kᵀ Λ L_K`.
    pub fn posterior_sqrt(&self, i: usize) -> Result<DMatrix<f64>> {
        let k = self.train_gram(i);
        let jitter = self.state.kernel(i).jitter;
        let lk = k.cholesky().ok_or(Error::FactorizationFailure { jitter })?.l();
        let mut b = lk.clone();
        for (r, l) in self.state.lambda[i].iter().enumerate() {
            b.row_mut(r).scale_mut(l.sqrt());
        }
        let mut m = b.transpose() * &b;
        for j in 0..m.nrows() {
            m[(j, j)] += 1.0;
        }
        let lm = m.cholesky().ok_or(Error::FactorizationFailure { jitter })?.l();
        Ok(lk * lower_inverse(&lm).transpose())
    }

    pub(crate) fn train_gram(&self, i: usize) -> DMatrix<f64> {
        let kp = self.state.kernel(i);
        cross_kernel(&self.points, &self.points, kp, kp.jitter)
    }

    /// `L_B⁻¹ Λ^½ K*` so that `K*ᵀ(K + Λ⁻¹)⁻¹K* = VᵀV`.
    pub(crate) fn whitened_cross(&self, i: usize, kstar: &DMatrix<f64>) -> DMatrix<f64> {
        let sl = &self.sqrt_lambda[i];
        let mut scaled = kstar.clone();
        for (r, s) in sl.iter().enumerate() {
            scaled.row_mut(r).scale_mut(*s);
        }
        self.b_chol[i]
            .solve_lower_triangular(&scaled)
            .expect("positive-definite factor")
    }
}
