//! Python bindings: datasets, losses, schedules, privacy calibration, both
//! engines, the regret bound and the experiment runner.

use std::path::PathBuf;

use dpol_core as dp;
use dp::experiment::{execute, ExperimentSpec};
use dp::metrics::{accuracy, empirical_regret};
use dp::privacy::draw_noise;
use dp::{
    AuditConfig, BoundInputs, Dataset, Example, FeasibleSet, LossKind, OfflineRunConfig, OnlineRunConfig,
    PrivacyParams, RegretCase, RunRecord, ScheduleMode, StepsizeSchedule,
};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn err(e: dp::Error) -> PyErr {
    match e {
        dp::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for dp::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn privacy(epsilon: Option<f64>) -> PyResult<PrivacyParams> {
    match epsilon {
        Some(e) if e.is_finite() => PrivacyParams::private(e).py(),
        _ => Ok(PrivacyParams::non_private()),
    }
}

/// Labeled examples with features in the unit ball.
#[pyclass(name = "Dataset", module = "dpol", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Self> {
        if x.len() != y.len() {
            return Err(PyValueError::new_err("x and y differ in length"));
        }
        let dim = x.first().map_or(0, Vec::len);
        if dim == 0 || x.iter().any(|r| r.len() != dim) {
            return Err(PyValueError::new_err("rows must share a positive dimension"));
        }
        Ok(Self {
            inner: Dataset {
                name: "python".into(),
                dim,
                source: dp::data::DataSource::File { path: "python".into() },
                examples: x.into_iter().zip(y).map(|(x, y)| Example { x, y }).collect(),
            },
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.inner.examples.iter().map(|e| e.x.clone()).collect()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.examples.iter().map(|e| e.y).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, dim={})", self.inner.len(), self.inner.dim)
    }
}

#[pyfunction]
#[pyo3(signature = (dim, count, margin=0.0, seed=1))]
fn generate_synthetic(dim: usize, count: usize, margin: f64, seed: u64) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: dp::generate_synthetic(dim, count, margin, seed).py()?,
    })
}

#[pyfunction]
fn load_sparse(path: PathBuf, dim_cap: usize) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: dp::load_sparse(path, dim_cap).py()?,
    })
}

#[pyclass(name = "LossModel", module = "dpol", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyLoss {
    inner: dp::LossModel,
}

#[pymethods]
impl PyLoss {
    /// `kind` is "hinge" or "logistic"; `lam > 0` adds `(lam/2)|w|^2`.
    #[new]
    #[pyo3(signature = (kind="hinge", lam=0.0, radius=1.0))]
    fn new(kind: &str, lam: f64, radius: f64) -> PyResult<Self> {
        let kind: LossKind = kind.parse().py()?;
        let set = FeasibleSet::new(radius).py()?;
        let mut inner = dp::LossModel::new(kind);
        if lam > 0.0 {
            inner = inner.regularized(lam, &set).py()?;
        }
        Ok(Self { inner })
    }

    #[getter]
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz
    }

    #[getter]
    fn strong_convexity(&self) -> f64 {
        self.inner.strong_convexity
    }

    fn value(&self, w: Vec<f64>, x: Vec<f64>, y: f64) -> PyResult<f64> {
        self.inner.value(&w, &x, y).py()
    }

    fn subgradient(&self, w: Vec<f64>, x: Vec<f64>, y: f64) -> PyResult<Vec<f64>> {
        self.inner.subgradient(&w, &x, y).py()
    }
}

#[pyclass(name = "CommSchedule", module = "dpol", frozen)]
struct PySchedule {
    inner: dp::CommSchedule,
}

#[pymethods]
impl PySchedule {
    /// `mode`: fixed_complete, random_pairwise_gossip or ring_rotation.
    #[new]
    #[pyo3(signature = (mode, m, eta=0.1, window=None, seed=1))]
    fn new(mode: &str, m: usize, eta: f64, window: Option<usize>, seed: u64) -> PyResult<Self> {
        let mode: ScheduleMode = mode.parse().py()?;
        Ok(Self {
            inner: dp::CommSchedule::new(mode, m, eta, window.unwrap_or(m), seed).py()?,
        })
    }

    fn matrix(&self, t: usize) -> Vec<Vec<f64>> {
        self.inner.matrix(t).rows()
    }

    fn phi_product(&self, k: usize, s: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.phi_product(k, s).py()?.rows())
    }

    /// `(theta, beta)` of the geometric consensus bound.
    fn consensus_rate(&self) -> PyResult<(f64, f64)> {
        let r = self.inner.consensus_rate().py()?;
        Ok((r.theta, r.beta))
    }

    fn check_connectivity(&self, t_start: usize) -> bool {
        self.inner.check_connectivity(t_start)
    }
}

#[pyfunction]
fn sensitivity_online(alpha: f64, n: usize, lipschitz: f64) -> PyResult<f64> {
    dp::sensitivity_online(alpha, n, lipschitz).py()
}

#[pyfunction]
fn sensitivity_minibatch(alpha: f64, n: usize, lipschitz: f64, h: usize) -> PyResult<f64> {
    dp::sensitivity_minibatch(alpha, n, lipschitz, h).py()
}

/// The noise vector a learner adds to broadcast `round`.
#[pyfunction]
fn laplace_noise(seed: u64, learner: usize, round: usize, n: usize, scale: f64) -> PyResult<Vec<f64>> {
    Ok(draw_noise(seed, learner, round, n, scale).py()?.sigma)
}

#[pyclass(name = "RunResult", module = "dpol", frozen)]
struct PyRun {
    record: RunRecord,
    #[pyo3(get)]
    regret: Vec<f64>,
    #[pyo3(get)]
    accuracy: Option<f64>,
    #[pyo3(get)]
    averaged: Option<Vec<f64>>,
}

#[pymethods]
impl PyRun {
    /// `losses[t][i]` at the reference learner's parameters.
    #[getter]
    fn losses(&self) -> Vec<Vec<f64>> {
        self.record.losses.clone()
    }

    #[getter]
    fn reference_trajectory(&self) -> Vec<Vec<f64>> {
        self.record.reference_trajectory.clone()
    }

    /// `(round, learner, scale)` for every noise draw.
    #[getter]
    fn noise_scales(&self) -> Vec<(usize, usize, f64)> {
        self.record.noise.iter().map(|n| (n.round, n.learner, n.scale)).collect()
    }

    #[getter]
    fn final_params(&self) -> Vec<Vec<f64>> {
        self.record.final_states.iter().map(|s| s.w.clone()).collect()
    }

    #[getter]
    fn max_param_norm(&self) -> f64 {
        self.record.max_param_norm
    }

    fn cumulative_loss(&self) -> f64 {
        self.record.cumulative_loss()
    }
}

struct RunArgs<'a> {
    data: &'a Dataset,
    learners: usize,
    rounds: Option<usize>,
    epsilon: Option<f64>,
    loss: PyLoss,
    mode: &'a str,
    eta: f64,
    seed: u64,
    holdout: f64,
}

fn prepare(a: &RunArgs<'_>, per_round: usize) -> PyResult<(OnlineRunConfig, Vec<Vec<Example>>, Vec<Example>)> {
    let shards = dp::partition(a.data, a.learners, a.holdout, a.seed).py()?.materialize(a.data);
    let avail = shards.train.first().map_or(0, Vec::len);
    let rounds = a.rounds.unwrap_or(avail / per_round * per_round);
    let mode: ScheduleMode = a.mode.parse().py()?;
    let schedule = dp::CommSchedule::new(mode, a.learners, a.eta, a.learners, a.seed).py()?;
    let cfg = OnlineRunConfig::new(
        rounds,
        a.data.dim,
        a.loss.inner,
        schedule,
        privacy(a.epsilon)?,
        StepsizeSchedule::for_loss(&a.loss.inner),
        a.seed,
    );
    Ok((cfg, shards.train, shards.holdout))
}

/// Runs the online engine over `learners` equal shards of `data`.
#[pyfunction]
#[pyo3(signature = (data, learners, rounds=None, epsilon=None, loss=None, mode="random_pairwise_gossip", eta=0.1, seed=1))]
#[allow(clippy::too_many_arguments)]
fn run_online(
    data: &PyDataset,
    learners: usize,
    rounds: Option<usize>,
    epsilon: Option<f64>,
    loss: Option<PyLoss>,
    mode: &str,
    eta: f64,
    seed: u64,
) -> PyResult<PyRun> {
    let loss = loss.unwrap_or(PyLoss { inner: dp::LossModel::hinge() });
    let args = RunArgs { data: &data.inner, learners, rounds, epsilon, loss, mode, eta, seed, holdout: 0.0 };
    let (cfg, streams, _) = prepare(&args, 1)?;
    let record = dp::run_online(&cfg, &streams).py()?;
    let report = empirical_regret(&record, &streams, &cfg.loss, &cfg.set, None).py()?;
    Ok(PyRun {
        record,
        regret: report.cumulative,
        accuracy: None,
        averaged: None,
    })
}

/// Mini-batch training; accuracy is measured on a held-out fraction of `data`.
#[pyfunction]
#[pyo3(signature = (data, learners, batch=1, epsilon=None, loss=None, phi_reg=0.0, holdout=0.2, mode="random_pairwise_gossip", eta=0.1, seed=1))]
#[allow(clippy::too_many_arguments)]
fn run_offline(
    data: &PyDataset,
    learners: usize,
    batch: usize,
    epsilon: Option<f64>,
    loss: Option<PyLoss>,
    phi_reg: f64,
    holdout: f64,
    mode: &str,
    eta: f64,
    seed: u64,
) -> PyResult<PyRun> {
    let loss = loss.unwrap_or(PyLoss { inner: dp::LossModel::hinge() });
    let args = RunArgs { data: &data.inner, learners, rounds: None, epsilon, loss, mode, eta, seed, holdout };
    let (cfg, streams, hold) = prepare(&args, batch.max(1))?;
    let mut off = OfflineRunConfig::new(cfg, batch, phi_reg);
    off.excess_risk = false;
    let eval = if hold.is_empty() { &streams[0] } else { &hold };
    let (record, est) = dp::run_offline(&off, &streams, eval).py()?;
    Ok(PyRun {
        record,
        regret: Vec::new(),
        accuracy: Some(est.accuracy),
        averaged: Some(est.averaged),
    })
}

/// Fraction of `data` that `sign(<w, x>)` classifies correctly.
#[pyfunction(name = "accuracy")]
fn py_accuracy(w: Vec<f64>, data: &PyDataset) -> PyResult<f64> {
    accuracy(&w, &data.inner.examples).py()
}

/// Closed-form regret bound; `epsilon=None` gives the non-private value.
#[pyfunction]
#[pyo3(signature = (m, rounds, dim, lipschitz=1.0, lam=0.1, diameter=2.0, epsilon=None, eta=0.1, window=None, convex=false))]
#[allow(clippy::too_many_arguments)]
fn regret_bound(
    m: usize,
    rounds: usize,
    dim: usize,
    lipschitz: f64,
    lam: f64,
    diameter: f64,
    epsilon: Option<f64>,
    eta: f64,
    window: Option<usize>,
    convex: bool,
) -> PyResult<f64> {
    let eps = epsilon.unwrap_or(f64::INFINITY);
    let inputs =
        BoundInputs::new(m, rounds, dim, lipschitz, lam, diameter, eps, eta, window.unwrap_or(m)).py()?;
    let case = if convex { RegretCase::Convex } else { RegretCase::StronglyConvex };
    dp::theorem2_bound(&inputs, case).py()
}

/// One-step sensitivity audit; returns `(max_ratio, passed)`.
#[pyfunction]
#[pyo3(signature = (dim=8, learners=3, rounds=1000, trials=1000, batch=1, seed=1))]
fn audit(dim: usize, learners: usize, rounds: usize, trials: usize, batch: usize, seed: u64) -> PyResult<(f64, bool)> {
    let mut cfg = AuditConfig::new(dim, learners, rounds, trials, seed);
    cfg.batch = batch;
    let r = dp::audit_sensitivity(&cfg).py()?;
    Ok((r.max_ratio, r.passed))
}

/// Runs a spec given as text; returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (spec, out_dir=None, workers=None))]
fn run_experiment(py: Python<'_>, spec: &str, out_dir: Option<PathBuf>, workers: Option<usize>) -> PyResult<String> {
    let mut s = ExperimentSpec::parse(spec).py()?;
    if let Some(o) = out_dir {
        s.out_dir = o;
    }
    if let Some(w) = workers {
        s.workers = w;
    }
    let outcome = py.detach(|| execute(&s, true)).py()?;
    serde_json::to_string(&outcome.manifest).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn dpol(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyLoss>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_sparse, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity_online, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity_minibatch, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_noise, m)?)?;
    m.add_function(wrap_pyfunction!(run_online, m)?)?;
    m.add_function(wrap_pyfunction!(run_offline, m)?)?;
    m.add_function(wrap_pyfunction!(py_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(regret_bound, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
