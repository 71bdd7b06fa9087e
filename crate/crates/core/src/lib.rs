//! Learning choice functions with vectors of latent Gaussian-process utilities.
//!
//! Observed choices `C(A) ⊆ A` are explained as the strong-Pareto-undominated
//! objects of `A` under `d` latent utilities. The utilities get independent GP
//! priors with a shared ARD kernel, the posterior is approximated by
//! variational inference, and `d` is chosen by PSIS leave-one-out
//! cross-validation.

pub mod data;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod model_file;
pub mod predict;
pub mod psis;
pub mod numeric;
pub mod rng;
pub mod selection;
pub mod synthetic;
pub mod vi;

pub use error::{Error, Result};
