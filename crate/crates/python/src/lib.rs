//! Python bindings. Datasets and models cross the boundary as the same JSON
//! documents the command-line tool reads and writes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use choicegp::data::{ChoiceDataset, DatasetFile, Points};
use choicegp::likelihood::{log_lik_dataset, LatentEmbedding, LikelihoodScale};
use choicegp::model_file::ModelFile;
use choicegp::predict::{predict_choice_set, SetMode};
use choicegp::vi::FitConfig;

fn to_py(e: choicegp::Error) -> PyErr {
    match e {
        choicegp::Error::InvalidArgument(_)
        | choicegp::Error::EmptyChoiceSet(_)
        | choicegp::Error::DuplicateObject(..)
        | choicegp::Error::IndexOutOfRange { .. }
        | choicegp::Error::InvalidObservation { .. }
        | choicegp::Error::InvalidObjects(_)
        | choicegp::Error::TieDetected(..)
        | choicegp::Error::Json(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_dataset(text: &str) -> PyResult<ChoiceDataset> {
    let file: DatasetFile = serde_json::from_str(text).map_err(json_err)?;
    file.into_dataset().map_err(to_py)
}

fn dataset_json(ds: &ChoiceDataset) -> PyResult<String> {
    serde_json::to_string(&ds.to_file()).map_err(json_err)
}

/// Indices of the undominated rows and of the dominated rows.
#[pyfunction]
fn pareto_choice(utilities: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let n = utilities.len();
    let d = utilities.first().map_or(0, Vec::len);
    if n == 0 || d == 0 || utilities.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("utilities must be a non-empty rectangular matrix"));
    }
    let m = nalgebra::DMatrix::from_fn(n, d, |i, j| utilities[i][j]);
    choicegp::synthetic::pareto_choice(&m).map_err(to_py)
}

/// Example-1 dataset and ground truth as JSON strings.
#[pyfunction]
#[pyo3(signature = (n_points=200, m_sets=150, set_size=3, seed=0, domain=(-4.5, 4.5)))]
fn generate_example1(
    n_points: usize,
    m_sets: usize,
    set_size: usize,
    seed: u64,
    domain: (f64, f64),
) -> PyResult<(String, String)> {
    let (ds, truth) = choicegp::synthetic::gen_example1(n_points, m_sets, set_size, domain, seed).map_err(to_py)?;
    Ok((dataset_json(&ds)?, serde_json::to_string(&truth).map_err(json_err)?))
}

/// Log-likelihood of a dataset at a `t × d` utility matrix.
#[pyfunction]
fn log_likelihood(dataset: &str, utilities: Vec<Vec<f64>>, sigma: f64) -> PyResult<f64> {
    let ds = parse_dataset(dataset)?;
    let u = LatentEmbedding::from_rows(&utilities).map_err(to_py)?;
    if u.n_objects() != ds.objects().len() {
        return Err(PyValueError::new_err("one utility row per object is required"));
    }
    let s = LikelihoodScale::new(sigma).map_err(to_py)?;
    Ok(log_lik_dataset(&ds, &u, s))
}

/// Fit with a fixed latent dimension; returns (model JSON, report JSON).
#[pyfunction]
#[pyo3(signature = (dataset, latent_dim, iters=5000, mc_samples=64, seed=0))]
fn fit(
    py: Python<'_>,
    dataset: &str,
    latent_dim: usize,
    iters: usize,
    mc_samples: usize,
    seed: u64,
) -> PyResult<(String, String)> {
    let ds = parse_dataset(dataset)?;
    let cfg = FitConfig {
        iters,
        mc_samples,
        seed,
        ..Default::default()
    };
    let (model, report) = py
        .detach(|| choicegp::vi::fit(&ds, latent_dim, &cfg))
        .map_err(to_py)?;
    let file = ModelFile::from_model(&model, &report);
    Ok((
        serde_json::to_string(&file).map_err(json_err)?,
        serde_json::to_string(&report).map_err(json_err)?,
    ))
}

/// Predicted chosen subset of each offered set (indices into `features`).
#[pyfunction]
#[pyo3(signature = (model, features, sets, n_samples=1000, seed=0, mode="marginal"))]
fn predict(
    py: Python<'_>,
    model: &str,
    features: Vec<Vec<f64>>,
    sets: Vec<Vec<usize>>,
    n_samples: usize,
    seed: u64,
    mode: &str,
) -> PyResult<Vec<Vec<usize>>> {
    let mode = match mode {
        "marginal" => SetMode::Marginal,
        "exact" => SetMode::Exact,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let file: ModelFile = serde_json::from_str(model).map_err(json_err)?;
    let model = file.into_model().map_err(to_py)?;
    let points = Points::from_rows(&features).map_err(to_py)?;
    py.detach(|| {
        sets.iter()
            .enumerate()
            .map(|(k, a)| {
                let s = choicegp::rng::derive_seed(seed, k as u64);
                predict_choice_set(&model, &points, a, n_samples, s, mode)
            })
            .collect::<choicegp::Result<Vec<_>>>()
    })
    .map_err(to_py)
}

#[pymodule]
fn choicegp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pareto_choice, m)?)?;
    m.add_function(wrap_pyfunction!(generate_example1, m)?)?;
    m.add_function(wrap_pyfunction!(log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    Ok(())
}
