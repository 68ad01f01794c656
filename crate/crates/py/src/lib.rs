//! Python bindings: mixture parameters, ABC rejection sampling, federated
//! runs, SuffiAE and the evaluation metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use graffl::abc::{self, AbcConfig};
use graffl::eval;
use graffl::experiment::{self, ExperimentConfig};
use graffl::federation::{self, FederationRunConfig, PreparedSite};
use graffl::gmm::{self, PriorConfig};
use graffl::suffiae::{self, AeConfig, LabeledBatch, SuffiAEModel, TrainConfig};
use graffl::{Error, Matrix, RngStream};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::DimensionMismatch(_)
        | Error::InvalidHyperparameter(_)
        | Error::InvalidWeights(_)
        | Error::InsufficientProposals { .. }
        | Error::NonFinite(_)
        | Error::NonBinaryLabel { .. }
        | Error::SingleClassData
        | Error::NotPositiveDefinite { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py)
}

/// Mixture weights, means and covariances.
#[pyclass(name = "GmmParams", module = "graffl_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGmmParams(gmm::GmmParams);

#[pymethods]
impl PyGmmParams {
    #[new]
    fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let covs = covs.into_iter().map(matrix).collect::<PyResult<Vec<_>>>()?;
        gmm::GmmParams::new(weights, means, covs).map(Self).map_err(to_py)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights().to_vec()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.0.means().to_vec()
    }

    #[getter]
    fn covs(&self) -> Vec<Vec<Vec<f64>>> {
        self.0.covs().iter().map(Matrix::to_rows).collect()
    }

    /// Draws `n` rows; returns `(rows, component_labels)`.
    fn sample(&self, n: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
        let (x, z) = gmm::sample(&self.0, n, &mut RngStream::new(seed)).map_err(to_py)?;
        Ok((x.to_rows(), z))
    }

    fn log_density(&self, x: Vec<f64>) -> PyResult<f64> {
        gmm::log_density(&x, &self.0).map_err(to_py)
    }

    fn log_likelihood(&self, data: Vec<Vec<f64>>) -> PyResult<f64> {
        gmm::log_likelihood(&matrix(data)?, &self.0).map_err(to_py)
    }

    /// Components reordered by ascending mean.
    fn canonical(&self) -> Self {
        Self(self.0.canonical())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(Self)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("GmmParams(k={}, dim={}, weights={:?})", self.0.k(), self.0.dim(), self.0.weights())
    }
}

/// Accepted draws in ascending discrepancy order plus the threshold.
#[pyclass(name = "Posterior", module = "graffl_py", frozen)]
struct PyPosterior(abc::Posterior);

#[pymethods]
impl PyPosterior {
    #[getter]
    fn epsilon(&self) -> f64 {
        self.0.epsilon
    }

    #[getter]
    fn indices(&self) -> Vec<u64> {
        self.0.indices()
    }

    #[getter]
    fn discrepancies(&self) -> Vec<f64> {
        self.0.discrepancies()
    }

    #[getter]
    fn params(&self) -> Vec<PyGmmParams> {
        self.0.accepted.iter().map(|a| PyGmmParams(a.params.clone())).collect()
    }

    /// Element-wise mean of the canonically ordered accepted draws.
    fn estimate(&self) -> PyResult<PyGmmParams> {
        abc::summarize_posterior(&self.0).map(PyGmmParams).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.accepted.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Posterior(accepted={}, epsilon={})", self.0.accepted.len(), self.0.epsilon)
    }
}

fn prior(k: usize, dim: usize, spread: f64, kappa: f64, alpha: f64) -> PyResult<PriorConfig> {
    let mut p = PriorConfig::weakly_informative(k, dim, spread);
    p.kappa = kappa;
    p.alpha = vec![alpha; k];
    p.validate().map_err(to_py)?;
    Ok(p)
}

/// One draw from the Dirichlet / Normal-Inverse-Wishart prior.
#[pyfunction]
#[pyo3(signature = (k, dim, seed, spread=1.0, kappa=0.1, alpha=1.0))]
fn sample_prior(k: usize, dim: usize, seed: u64, spread: f64, kappa: f64, alpha: f64) -> PyResult<PyGmmParams> {
    let p = prior(k, dim, spread, kappa, alpha)?;
    gmm::sample_prior(&p, k, &mut RngStream::new(seed)).map(PyGmmParams).map_err(to_py)
}

fn abc_config(
    dim: usize,
    n_proposals: usize,
    n_accept: usize,
    k: usize,
    spread: f64,
    kappa: f64,
    alpha: f64,
) -> PyResult<AbcConfig> {
    Ok(AbcConfig {
        n_proposals,
        n_accept,
        k,
        prior: prior(k, dim, spread, kappa, alpha)?,
        dim,
    })
}

/// Centralized ABC rejection sampling against the summary rows `observed`.
#[pyfunction]
#[pyo3(signature = (observed, n_proposals, n_accept, k, seed, spread=1.0, kappa=0.1, alpha=1.0))]
#[allow(clippy::too_many_arguments)]
fn rejection_sample(
    py: Python<'_>,
    observed: Vec<Vec<f64>>,
    n_proposals: usize,
    n_accept: usize,
    k: usize,
    seed: u64,
    spread: f64,
    kappa: f64,
    alpha: f64,
) -> PyResult<PyPosterior> {
    let x = matrix(observed)?;
    let cfg = abc_config(x.cols(), n_proposals, n_accept, k, spread, kappa, alpha)?;
    py.detach(|| abc::rejection_sample(&cfg, &x, &mut RngStream::new(seed)))
        .map(PyPosterior)
        .map_err(to_py)
}

/// Federated run with one site per matrix in `sites`, over in-process
/// channels or loopback TCP. Equals `rejection_sample` on the stacked rows.
#[pyfunction]
#[pyo3(signature = (sites, n_proposals, n_accept, k, seed, spread=1.0, kappa=0.1, alpha=1.0, transport="inprocess"))]
#[allow(clippy::too_many_arguments)]
fn federated_run(
    py: Python<'_>,
    sites: Vec<Vec<Vec<f64>>>,
    n_proposals: usize,
    n_accept: usize,
    k: usize,
    seed: u64,
    spread: f64,
    kappa: f64,
    alpha: f64,
    transport: &str,
) -> PyResult<PyPosterior> {
    let prepared = sites
        .into_iter()
        .enumerate()
        .map(|(j, rows)| PreparedSite::from_summaries(j as u32, matrix(rows)?).map_err(to_py))
        .collect::<PyResult<Vec<_>>>()?;
    let dim = prepared.first().map(|s| s.descriptor().dim).unwrap_or(0);
    let config = FederationRunConfig {
        abc: abc_config(dim, n_proposals, n_accept, k, spread, kappa, alpha)?,
        sites: prepared.iter().map(PreparedSite::descriptor).collect(),
        seed,
    };
    let socket = match transport {
        "inprocess" => false,
        "socket" => true,
        other => return Err(PyValueError::new_err(format!("unknown transport {other:?}"))),
    };
    py.detach(|| {
        if socket {
            federation::run_loopback(&config, &prepared, None)
        } else {
            federation::run_inprocess(&config, &prepared)
        }
    })
    .map(|(p, _)| PyPosterior(p))
    .map_err(to_py)
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    eval::auc(&scores, &labels).map_err(to_py)
}

#[pyfunction]
fn f1_at_cutoff(scores: Vec<f64>, labels: Vec<u8>, cutoff: f64) -> PyResult<f64> {
    eval::f1_at_cutoff(&scores, &labels, cutoff).map_err(to_py)
}

/// F1-maximizing cut-off; ties go to the smallest candidate.
#[pyfunction]
fn select_cutoff(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    eval::select_cutoff(&scores, &labels).map_err(to_py)
}

/// Supervised autoencoder trained on one site's labeled rows.
#[pyclass(name = "SuffiAE", module = "graffl_py", frozen)]
struct PySuffiAE(SuffiAEModel);

#[pymethods]
impl PySuffiAE {
    #[staticmethod]
    #[pyo3(signature = (x, y, d=2, hidden=None, epochs=50, learning_rate=0.01, batch_size=32, noise_alpha=0.1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<u8>,
        d: usize,
        hidden: Option<Vec<usize>>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        noise_alpha: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let batch = LabeledBatch::new(matrix(x)?, y).map_err(to_py)?;
        let cfg = AeConfig {
            hidden: hidden.unwrap_or_default(),
            d,
            epochs,
            learning_rate,
            batch_size,
            noise_alpha,
            ..AeConfig::default()
        };
        py.detach(|| {
            let mut rng = RngStream::new(seed);
            let init = SuffiAEModel::from_config(batch.x().cols(), &cfg, &mut rng)?;
            suffiae::train(&init, &batch, TrainConfig::from(&cfg), &mut rng)
        })
        .map(Self)
        .map_err(to_py)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }

    fn encode(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(suffiae::encode(&self.0, &matrix(x)?).map_err(to_py)?.to_rows())
    }

    /// Encoding plus `N(0, ᾱ)` noise per entry.
    fn encode_noisy(&self, x: Vec<Vec<f64>>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let z = suffiae::encode_noisy(&self.0, &matrix(x)?, &mut RngStream::new(seed)).map_err(to_py)?;
        Ok(z.to_rows())
    }

    /// Classifier-head probabilities for latent rows.
    fn classify(&self, z: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        suffiae::classify(&self.0, &matrix(z)?).map_err(to_py)
    }

    fn loss(&self, x: Vec<Vec<f64>>, y: Vec<u8>) -> PyResult<f64> {
        let batch = LabeledBatch::new(matrix(x)?, y).map_err(to_py)?;
        suffiae::loss_noiseless(&self.0, &batch).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        SuffiAEModel::from_json(text).map(Self).map_err(to_py)
    }
}

/// Runs a JSON experiment config and writes its outputs to `out_dir`.
/// Returns the posterior document as JSON text.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str, out_dir: PathBuf) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    py.detach(|| experiment::run_experiment(&cfg, &out_dir))
        .map_err(to_py)?;
    std::fs::read_to_string(out_dir.join(experiment::POSTERIOR_FILE)).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
pub fn graffl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGmmParams>()?;
    m.add_class::<PyPosterior>()?;
    m.add_class::<PySuffiAE>()?;
    m.add_function(wrap_pyfunction!(sample_prior, m)?)?;
    m.add_function(wrap_pyfunction!(rejection_sample, m)?)?;
    m.add_function(wrap_pyfunction!(federated_run, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(f1_at_cutoff, m)?)?;
    m.add_function(wrap_pyfunction!(select_cutoff, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
