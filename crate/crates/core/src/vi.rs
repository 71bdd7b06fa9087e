//! Variational inference: MAP initialization, Monte-Carlo ELBO and its
//! gradient, and the Adam fitting loop.
//!
//! Each latent utility gets `q(u_i) = N(m_i, S_i)` with `m_i = K ν_i` and
//! `S_i = (K⁻¹ + diag λ_i)⁻¹`. Internally the mean is optimized in whitened
//! form `a_i = L_Kᵀ ν_i` (`K = L_K L_Kᵀ`), and samples are drawn as
//! `u = L_K a + L_K L_M⁻ᵀ ξ` with `L_M L_Mᵀ = I + L_Kᵀ Λ L_K`, which is a
//! square root of `S` that never inverts `K`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceDataset, Points};
use crate::error::{Error, Result};
use crate::kernel::{factor_with_jitter, kernel_matrix, log_lengthscale_grad, KernelParams, DEFAULT_JITTER};
use crate::likelihood::{ChoiceLikelihood, LatentEmbedding, LikelihoodScale, SIGMA_MIN};
use crate::linalg::{chol_backprop, lower_inverse};
use crate::model::FittedModel;
use crate::rng::stream_rng;

const MAP_LEARNING_RATE: f64 = 0.05;
const MAP_INIT_SCALE: f64 = 1e-2;
const SMOOTHING_WINDOW: usize = 100;
const CONVERGENCE_SPAN: usize = 500;
const CONVERGENCE_TOL: f64 = 1e-4;

/// Variational parameters of all latent dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub nu: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    /// One entry (shared lengthscales) or one per latent dimension.
    pub kernels: Vec<KernelParams>,
    pub sigma: LikelihoodScale,
}

impl VariationalState {
    pub fn new(
        nu: Vec<DVector<f64>>,
        lambda: Vec<DVector<f64>>,
        kernels: Vec<KernelParams>,
        sigma: LikelihoodScale,
    ) -> Result<Self> {
        let d = nu.len();
        if d == 0 {
            return Err(Error::InvalidArgument("latent dimension must be at least 1".into()));
        }
        if lambda.len() != d {
            return Err(Error::InvalidArgument("ν and λ disagree on the latent dimension".into()));
        }
        if kernels.len() != 1 && kernels.len() != d {
            return Err(Error::InvalidArgument(format!(
                "expected 1 or {d} kernels, got {}",
                kernels.len()
            )));
        }
        let t = nu[0].len();
        if nu.iter().chain(&lambda).any(|v| v.len() != t) {
            return Err(Error::InvalidArgument("ν and λ vectors must all have length t".into()));
        }
        if nu.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("ν"));
        }
        if lambda.iter().any(|v| v.iter().any(|x| !(x.is_finite() && *x > 0.0))) {
            return Err(Error::InvalidArgument("λ must be positive and finite".into()));
        }
        Ok(Self {
            nu,
            lambda,
            kernels,
            sigma,
        })
    }

    /// `ν = 0`, `λ = 1` for every dimension.
    pub fn initial(t: usize, d: usize, kernels: Vec<KernelParams>, sigma: LikelihoodScale) -> Result<Self> {
        Self::new(
            vec![DVector::zeros(t); d],
            vec![DVector::from_element(t, 1.0); d],
            kernels,
            sigma,
        )
    }

    pub fn latent_dim(&self) -> usize {
        self.nu.len()
    }

    pub fn n_objects(&self) -> usize {
        self.nu[0].len()
    }

    pub fn shared_lengthscales(&self) -> bool {
        self.kernels.len() == 1
    }

    pub fn kernel_index(&self, i: usize) -> usize {
        if self.kernels.len() == 1 {
            0
        } else {
            i
        }
    }

    pub fn kernel(&self, i: usize) -> &KernelParams {
        &self.kernels[self.kernel_index(i)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iters: usize,
    pub learning_rate: f64,
    pub mc_samples: usize,
    /// Samples used for the reported final ELBO.
    pub final_mc_samples: usize,
    pub seed: u64,
    pub shared_lengthscales: bool,
    pub jitter: f64,
    pub init_lengthscale: f64,
    pub init_sigma: f64,
    pub map_iters: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iters: 5000,
            learning_rate: 5e-3,
            mc_samples: 64,
            final_mc_samples: 2048,
            seed: 0,
            shared_lengthscales: true,
            jitter: DEFAULT_JITTER,
            init_lengthscale: 1.0,
            init_sigma: 0.1,
            map_iters: 1000,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.into()));
        if self.mc_samples == 0 || self.final_mc_samples == 0 {
            return bad("mc_samples must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.init_lengthscale.is_finite() && self.init_lengthscale > 0.0) {
            return bad("init_lengthscale must be positive");
        }
        if !(self.init_sigma.is_finite() && self.init_sigma > SIGMA_MIN) {
            return bad("init_sigma must exceed the likelihood scale floor");
        }
        if !(self.jitter.is_finite() && self.jitter > 0.0) {
            return bad("jitter must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_elbo: f64,
    /// Monte-Carlo ELBO estimate at every iteration, before the update.
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The smoothed ELBO at the end is no better than at the start.
    pub max_iters_no_improvement: bool,
    pub seed: u64,
    pub jitter: f64,
    /// Not serialized, so reports of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

fn smoothed(trace: &[f64], end: usize) -> f64 {
    let start = end.saturating_sub(SMOOTHING_WINDOW);
    trace[start..end].iter().sum::<f64>() / (end - start) as f64
}

fn converged(trace: &[f64]) -> bool {
    let n = trace.len();
    if n < CONVERGENCE_SPAN + SMOOTHING_WINDOW {
        return false;
    }
    let now = smoothed(trace, n);
    let before = smoothed(trace, n - CONVERGENCE_SPAN);
    (now - before) / before.abs().max(f64::MIN_POSITIVE) < CONVERGENCE_TOL
}

/// Whitened parameters; also used for gradients of the same shape.
#[derive(Debug, Clone)]
struct Params {
    a: Vec<DVector<f64>>,
    log_lambda: Vec<DVector<f64>>,
    log_ls: Vec<Vec<f64>>,
    theta: f64,
}

impl Params {
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (a, l) in self.a.iter().zip(&self.log_lambda) {
            out.extend(a.iter());
            out.extend(l.iter());
        }
        for ll in &self.log_ls {
            out.extend(ll);
        }
        out.push(self.theta);
        out
    }

    fn assign(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for (a, l) in self.a.iter_mut().zip(self.log_lambda.iter_mut()) {
            a.iter_mut().for_each(|x| *x = it.next().unwrap());
            l.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        for ll in self.log_ls.iter_mut() {
            ll.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        self.theta = it.next().unwrap();
    }

    fn sigma(&self) -> f64 {
        SIGMA_MIN + self.theta.exp()
    }

    fn kernel_index(&self, i: usize) -> usize {
        if self.log_ls.len() == 1 {
            0
        } else {
            i
        }
    }
}

fn theta_for(sigma: f64) -> f64 {
    (sigma - SIGMA_MIN).max(f64::MIN_POSITIVE).ln()
}

struct KernelFactor {
    params: KernelParams,
    l: DMatrix<f64>,
}

fn factor(points: &Points, params: KernelParams) -> Result<KernelFactor> {
    let gram = factor_with_jitter(kernel_matrix(points, &params), params.jitter)?;
    Ok(KernelFactor {
        params: KernelParams {
            jitter: gram.jitter,
            ..params
        },
        l: gram.chol,
    })
}

struct Problem<'a> {
    points: &'a Points,
    lik: &'a ChoiceLikelihood,
    jitter: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Whitened,
    /// gradient with respect to ν at fixed ν (rather than fixed `a`)
    Natural,
}

struct Evaluation {
    value: f64,
    factors: Vec<KernelFactor>,
    grad: Option<Params>,
    dsigma: f64,
}

struct DimPosterior {
    lambda: DVector<f64>,
    lm: DMatrix<f64>,
    lm_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    sqrt_s: DMatrix<f64>,
    m_inv: DMatrix<f64>,
    samples: DMatrix<f64>,
}

fn standard_normal(t: usize, s: usize, seed: u64, stream: u64, d: usize) -> Vec<DMatrix<f64>> {
    let mut rng = stream_rng(seed, stream);
    (0..d)
        .map(|_| DMatrix::from_fn(t, s, |_, _| -> f64 { StandardNormal.sample(&mut rng) }))
        .collect()
}

fn evaluate(prob: &Problem, p: &Params, xi: &[DMatrix<f64>], mode: Option<Mode>) -> Result<Evaluation> {
    let t = prob.points.len();
    let d = p.a.len();
    let n_samples = xi[0].ncols();
    let inv_s = 1.0 / n_samples as f64;
    let factors = p
        .log_ls
        .iter()
        .map(|ll| {
            let kp = KernelParams::new(ll.iter().map(|v| v.exp()).collect(), prob.jitter)?;
            factor(prob.points, kp)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut kl = 0.0;
    let mut dims = Vec::with_capacity(d);
    for i in 0..d {
        let lk = &factors[p.kernel_index(i)].l;
        let lambda = p.log_lambda[i].map(f64::exp);
        let mut b = lk.clone();
        for r in 0..t {
            b.row_mut(r).scale_mut(lambda[r].sqrt());
        }
        let mut m = b.transpose() * &b;
        for j in 0..t {
            m[(j, j)] += 1.0;
        }
        let lm = m.cholesky().ok_or(Error::NonFinite("variational precision"))?.l();
        let lm_inv = lower_inverse(&lm);
        let w = lm_inv.transpose();
        let sqrt_s = lk * &w;
        let m_inv = &w * &lm_inv;
        let logdet_m = 2.0 * lm.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        kl += 0.5 * (m_inv.trace() + p.a[i].norm_squared() - t as f64 + logdet_m);
        let mean = lk * &p.a[i];
        let mut samples = &sqrt_s * &xi[i];
        for mut col in samples.column_iter_mut() {
            col += &mean;
        }
        dims.push(DimPosterior {
            lambda,
            lm,
            lm_inv,
            w,
            sqrt_s,
            m_inv,
            samples,
        });
    }

    let sigma = p.sigma();
    let mut u = DMatrix::zeros(t, d);
    let mut g = DMatrix::zeros(t, d);
    let mut sample_grads = vec![DMatrix::<f64>::zeros(0, 0); d];
    if mode.is_some() {
        sample_grads = vec![DMatrix::zeros(t, n_samples); d];
    }
    let mut ll_sum = 0.0;
    let mut ds_sum = 0.0;
    for s in 0..n_samples {
        for (i, dim) in dims.iter().enumerate() {
            u.set_column(i, &dim.samples.column(s));
        }
        if mode.is_some() {
            g.fill(0.0);
            let (v, ds) = prob.lik.grad_into(&u, sigma, &mut g);
            ll_sum += v;
            ds_sum += ds;
            for (i, sg) in sample_grads.iter_mut().enumerate() {
                sg.set_column(s, &g.column(i));
            }
        } else {
            ll_sum += prob.lik.log_lik(&u, sigma);
        }
    }
    let value = ll_sum * inv_s - kl;
    if !value.is_finite() {
        return Err(Error::NonFinite("ELBO"));
    }
    let Some(mode) = mode else {
        return Ok(Evaluation {
            value,
            factors,
            grad: None,
            dsigma: 0.0,
        });
    };

    let mut lk_bars = vec![DMatrix::<f64>::zeros(t, t); factors.len()];
    let mut grad_a = Vec::with_capacity(d);
    let mut grad_ll = Vec::with_capacity(d);
    for (i, dim) in dims.iter().enumerate() {
        let lk = &factors[p.kernel_index(i)].l;
        let mbar = sample_grads[i].column_sum() * inv_s;
        let sbar = (&sample_grads[i] * xi[i].transpose()) * inv_s;

        let mut abar = lk.tr_mul(&mbar) - &p.a[i];
        let mut lbar = &mbar * p.a[i].transpose() + &sbar * dim.w.transpose();
        let lm_bar = -(&dim.w * (sbar.transpose() * &dim.sqrt_s));
        let mut m_bar = chol_backprop(&dim.lm, &dim.lm_inv, &lm_bar);
        m_bar += (&dim.m_inv * &dim.m_inv - &dim.m_inv) * 0.5;

        let pm = lk * &m_bar;
        let lambda_bar = DVector::from_fn(t, |j, _| pm.row(j).dot(&lk.row(j)));
        grad_ll.push(lambda_bar.component_mul(&dim.lambda));
        for c in 0..t {
            for r in 0..t {
                lbar[(r, c)] += 2.0 * dim.lambda[r] * pm[(r, c)];
            }
        }
        if mode == Mode::Natural {
            let nu = lk
                .tr_solve_lower_triangular(&p.a[i])
                .ok_or(Error::NonFinite("ν"))?;
            lbar += &nu * abar.transpose();
            abar = lk * abar;
        }
        lk_bars[p.kernel_index(i)] += lbar;
        grad_a.push(abar);
    }
    let grad_ls = factors
        .iter()
        .zip(&lk_bars)
        .map(|(f, lbar)| {
            let kbar = chol_backprop(&f.l, &lower_inverse(&f.l), lbar);
            log_lengthscale_grad(prob.points, &f.params, &kbar)
        })
        .collect();
    let dsigma = ds_sum * inv_s;
    let grad = Params {
        a: grad_a,
        log_lambda: grad_ll,
        log_ls: grad_ls,
        theta: dsigma * p.theta.exp(),
    };
    if !grad.flatten().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("ELBO gradient"));
    }
    Ok(Evaluation {
        value,
        factors,
        grad: Some(grad),
        dsigma,
    })
}

fn whiten(state: &VariationalState, points: &Points) -> Result<(Params, f64)> {
    if state.n_objects() != points.len() {
        return Err(Error::InvalidArgument(format!(
            "state has {} objects, dataset has {}",
            state.n_objects(),
            points.len()
        )));
    }
    let jitter = state.kernels[0].jitter;
    let factors = state
        .kernels
        .iter()
        .map(|k| factor(points, KernelParams { jitter, ..k.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let a = (0..state.latent_dim())
        .map(|i| factors[state.kernel_index(i)].l.tr_mul(&state.nu[i]))
        .collect();
    Ok((
        Params {
            a,
            log_lambda: state.lambda.iter().map(|l| l.map(f64::ln)).collect(),
            log_ls: state
                .kernels
                .iter()
                .map(|k| k.lengthscales.iter().map(|l| l.ln()).collect())
                .collect(),
            theta: theta_for(state.sigma.get()),
        },
        jitter,
    ))
}

fn to_state(p: &Params, factors: &[KernelFactor]) -> Result<VariationalState> {
    let nu = (0..p.a.len())
        .map(|i| {
            factors[p.kernel_index(i)]
                .l
                .tr_solve_lower_triangular(&p.a[i])
                .ok_or(Error::NonFinite("ν"))
        })
        .collect::<Result<Vec<_>>>()?;
    VariationalState::new(
        nu,
        p.log_lambda.iter().map(|l| l.map(f64::exp)).collect(),
        factors.iter().map(|f| f.params.clone()).collect(),
        LikelihoodScale::new(p.sigma())?,
    )
}

/// Monte-Carlo ELBO `E_q[log p(D|u)] − Σ_i KL(q_i ‖ p_i)` with a fixed seed.
pub fn elbo(state: &VariationalState, dataset: &ChoiceDataset, mc_samples: usize, seed: u64) -> Result<f64> {
    if mc_samples == 0 {
        return Err(Error::InvalidArgument("mc_samples must be at least 1".into()));
    }
    let points = dataset.objects().points();
    let lik = ChoiceLikelihood::new(dataset);
    let (p, jitter) = whiten(state, points)?;
    let prob = Problem {
        points,
        lik: &lik,
        jitter,
    };
    let xi = standard_normal(points.len(), mc_samples, seed, 0, state.latent_dim());
    Ok(evaluate(&prob, &p, &xi, None)?.value)
}

/// Gradient of [`elbo`] (same seed, so the same noise) with respect to
/// `ν_i`, `log λ_i`, `log ℓ` and `σ`.
#[derive(Debug, Clone)]
pub struct ElboGrad {
    pub nu: Vec<DVector<f64>>,
    pub log_lambda: Vec<DVector<f64>>,
    pub log_lengthscales: Vec<Vec<f64>>,
    pub sigma: f64,
}

pub fn elbo_and_grad(
    state: &VariationalState,
    dataset: &ChoiceDataset,
    mc_samples: usize,
    seed: u64,
) -> Result<(f64, ElboGrad)> {
    if mc_samples == 0 {
        return Err(Error::InvalidArgument("mc_samples must be at least 1".into()));
    }
    let points = dataset.objects().points();
    let lik = ChoiceLikelihood::new(dataset);
    let (p, jitter) = whiten(state, points)?;
    let prob = Problem {
        points,
        lik: &lik,
        jitter,
    };
    let xi = standard_normal(points.len(), mc_samples, seed, 0, state.latent_dim());
    let ev = evaluate(&prob, &p, &xi, Some(Mode::Natural))?;
    let g = ev.grad.expect("gradient requested");
    Ok((
        ev.value,
        ElboGrad {
            nu: g.a,
            log_lambda: g.log_lambda,
            log_lengthscales: g.log_ls,
            sigma: ev.dsigma,
        },
    ))
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One ascent step.
    fn step(&mut self, x: &mut [f64], g: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for j in 0..x.len() {
            self.m[j] = Self::BETA1 * self.m[j] + (1.0 - Self::BETA1) * g[j];
            self.v[j] = Self::BETA2 * self.v[j] + (1.0 - Self::BETA2) * g[j] * g[j];
            x[j] += self.lr * (self.m[j] / c1) / ((self.v[j] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Whitened MAP: maximize `log p(D | L a) − ½ Σ |a_i|²` over `a`.
fn map_whitened(
    lik: &ChoiceLikelihood,
    chols: &[&DMatrix<f64>],
    sigma: f64,
    max_iters: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let d = chols.len();
    let t = chols[0].nrows();
    // a small random start breaks the symmetry between latent dimensions
    let mut rng = stream_rng(seed, 0);
    let mut a: Vec<DVector<f64>> = (0..d)
        .map(|_| DVector::from_fn(t, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            MAP_INIT_SCALE * z
        }))
        .collect();
    let objective = |a: &[DVector<f64>], g: Option<&mut DMatrix<f64>>| {
        let mut u = DMatrix::zeros(t, d);
        for i in 0..d {
            u.set_column(i, &(chols[i] * &a[i]));
        }
        let prior: f64 = a.iter().map(|v| 0.5 * v.norm_squared()).sum();
        let ll = match g {
            Some(g) => {
                g.fill(0.0);
                lik.grad_into(&u, sigma, g).0
            }
            None => lik.log_lik(&u, sigma),
        };
        ll - prior
    };

    let mut adam = Adam::new(t * d, MAP_LEARNING_RATE);
    let mut g = DMatrix::zeros(t, d);
    let mut flat: Vec<f64> = a.iter().flat_map(|v| v.iter().copied()).collect();
    let mut best = (objective(&a, None), a.clone());
    for _ in 0..max_iters {
        let value = objective(&a, Some(&mut g));
        if !value.is_finite() {
            return Err(Error::NonFinite("MAP objective"));
        }
        if value > best.0 {
            best = (value, a.clone());
        }
        let grad: Vec<f64> = (0..d)
            .flat_map(|i| (chols[i].tr_mul(&g.column(i)) - &a[i]).iter().copied().collect::<Vec<_>>())
            .collect();
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MAP gradient"));
        }
        if grad.iter().all(|v| v.abs() < 1e-8) {
            break;
        }
        adam.step(&mut flat, &grad);
        for (i, v) in a.iter_mut().enumerate() {
            v.copy_from_slice(&flat[i * t..(i + 1) * t]);
        }
    }
    let last = objective(&a, None);
    if last > best.0 {
        best = (last, a);
    }
    Ok(best.1)
}

/// Maximize `log p(D | u, σ) + Σ_i log N(u_i; 0, K)` with Adam.
pub fn map_estimate(
    dataset: &ChoiceDataset,
    d: usize,
    kernel: &KernelParams,
    sigma: LikelihoodScale,
    max_iters: usize,
    seed: u64,
) -> Result<LatentEmbedding> {
    if d == 0 {
        return Err(Error::InvalidArgument("latent dimension must be at least 1".into()));
    }
    let points = dataset.objects().points();
    let f = factor(points, kernel.clone())?;
    let lik = ChoiceLikelihood::new(dataset);
    let chols = vec![&f.l; d];
    let a = map_whitened(&lik, &chols, sigma.get(), max_iters, seed)?;
    let mut u = DMatrix::zeros(points.len(), d);
    for i in 0..d {
        u.set_column(i, &(&f.l * &a[i]));
    }
    LatentEmbedding::new(u)
}

/// `log p(D | u, σ) + Σ_i log N(u_i; 0, K)` including normalizing constants.
pub fn map_objective(
    dataset: &ChoiceDataset,
    u: &LatentEmbedding,
    kernel: &KernelParams,
    sigma: LikelihoodScale,
) -> Result<f64> {
    let points = dataset.objects().points();
    let f = factor(points, kernel.clone())?;
    let t = points.len() as f64;
    let logdet: f64 = 2.0 * f.l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut prior = 0.0;
    for col in u.values().column_iter() {
        let z = f
            .l
            .solve_lower_triangular(&col.into_owned())
            .ok_or(Error::NonFinite("prior solve"))?;
        prior += -0.5 * z.norm_squared() - 0.5 * logdet - 0.5 * t * (2.0 * std::f64::consts::PI).ln();
    }
    Ok(ChoiceLikelihood::new(dataset).log_lik(u.values(), sigma.get()) + prior)
}

/// Fit a `d`-dimensional model: MAP initialization, then Adam on the ELBO.
///
/// Training uses only the objects that some observation refers to; the
/// returned model records which rows of the dataset's table those were.
pub fn fit(dataset: &ChoiceDataset, d: usize, config: &FitConfig) -> Result<(FittedModel, FitReport)> {
    if d == 0 {
        return Err(Error::InvalidArgument("latent dimension must be at least 1".into()));
    }
    config.validate()?;
    let started = Instant::now();
    let (train, rows) = dataset.restrict_to_referenced()?;
    let points = train.objects().points();
    let t = points.len();
    let lik = ChoiceLikelihood::new(&train);
    let prob = Problem {
        points,
        lik: &lik,
        jitter: config.jitter,
    };
    let n_kernels = if config.shared_lengthscales { 1 } else { d };
    let init_ls = vec![config.init_lengthscale.ln(); points.dim()];

    let init = factor(points, KernelParams::new(vec![config.init_lengthscale; points.dim()], config.jitter)?)?;
    let chols = vec![&init.l; d];
    let a = map_whitened(&lik, &chols, config.init_sigma, config.map_iters, config.seed)?;

    let mut params = Params {
        a,
        log_lambda: vec![DVector::zeros(t); d],
        log_ls: vec![init_ls; n_kernels],
        theta: theta_for(config.init_sigma),
    };
    let mut flat = params.flatten();
    let mut adam = Adam::new(flat.len(), config.learning_rate);
    let mut trace = Vec::with_capacity(config.iters);
    for iter in 0..config.iters {
        let xi = standard_normal(t, config.mc_samples, config.seed, 1 + iter as u64, d);
        let ev = evaluate(&prob, &params, &xi, Some(Mode::Whitened))?;
        trace.push(ev.value);
        adam.step(&mut flat, &ev.grad.expect("gradient requested").flatten());
        params.assign(&flat);
    }

    let xi = standard_normal(t, config.final_mc_samples, config.seed, u64::MAX, d);
    let last = evaluate(&prob, &params, &xi, None)?;
    let state = to_state(&params, &last.factors)?;
    let jitter = state.kernels.iter().map(|k| k.jitter).fold(0.0, f64::max);
    let model = FittedModel::new(points.clone(), rows, state)?;

    let no_improvement = !trace.is_empty() && {
        let head = smoothed(&trace, trace.len().min(SMOOTHING_WINDOW));
        smoothed(&trace, trace.len()) <= head
    };
    let report = FitReport {
        final_elbo: last.value,
        converged: converged(&trace),
        max_iters_no_improvement: no_improvement,
        iterations: trace.len(),
        elbo_trace: if trace.is_empty() { vec![last.value] } else { trace },
        seed: config.seed,
        jitter,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ChoiceObservation, ObjectTable};

    fn small_dataset() -> ChoiceDataset {
        let objects =
            ObjectTable::from_rows(&[vec![0.0], vec![0.5], vec![1.1], vec![-0.7], vec![2.0]]).unwrap();
        ChoiceDataset::new(
            objects,
            vec![
                ChoiceObservation::new(vec![0, 1, 2], vec![0, 2]),
                ChoiceObservation::new(vec![1, 3], vec![3]),
                ChoiceObservation::new(vec![2, 3, 4], vec![4]),
                ChoiceObservation::new(vec![0, 4], vec![0, 4]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn kl_vanishes_at_prior() {
        let ds = small_dataset();
        let kp = KernelParams::isotropic(1, 0.8).unwrap();
        let sigma = LikelihoodScale::new(0.5).unwrap();
        let mut st = VariationalState::initial(5, 2, vec![kp.clone()], sigma).unwrap();
        st.lambda = vec![DVector::from_element(5, 1e-10); 2];
        let (p, jitter) = whiten(&st, ds.objects().points()).unwrap();
        let lik = ChoiceLikelihood::new(&ds);
        let prob = Problem {
            points: ds.objects().points(),
            lik: &lik,
            jitter,
        };
        // with a single zero-noise sample the likelihood term is exact
        let xi = vec![DMatrix::zeros(5, 1); 2];
        let ev = evaluate(&prob, &p, &xi, None).unwrap();
        let ll = lik.log_lik(&DMatrix::zeros(5, 2), 0.5);
        assert!((ll - ev.value).abs() < 1e-6, "KL = {}", ll - ev.value);
    }

    #[test]
    fn elbo_is_deterministic() {
        let ds = small_dataset();
        let kp = KernelParams::isotropic(1, 0.8).unwrap();
        let st = VariationalState::initial(5, 2, vec![kp], LikelihoodScale::new(0.3).unwrap()).unwrap();
        let a = elbo(&st, &ds, 16, 9).unwrap();
        let b = elbo(&st, &ds, 16, 9).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a <= 0.0);
    }

    #[test]
    fn flatten_round_trip() {
        let p = Params {
            a: vec![DVector::from_vec(vec![1.0, 2.0]); 2],
            log_lambda: vec![DVector::from_vec(vec![3.0, 4.0]); 2],
            log_ls: vec![vec![5.0]],
            theta: 6.0,
        };
        let flat = p.flatten();
        let mut q = p.clone();
        q.assign(&vec![0.0; flat.len()]);
        q.assign(&flat);
        assert_eq!(q.flatten(), flat);
    }

    #[test]
    fn convergence_needs_a_long_flat_trace() {
        assert!(!converged(&[1.0; 10]));
        assert!(converged(&vec![-5.0; 700]));
        let rising: Vec<f64> = (0..700).map(|i| -100.0 + i as f64 * 0.1).collect();
        assert!(!converged(&rising));
    }
}
