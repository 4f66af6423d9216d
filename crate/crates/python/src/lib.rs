//! Python bindings for the FedPD simulator.
//!
//! Exposes problem construction, gradient oracles, simulation runs and the
//! theory checks. Runs release the GIL while the simulator works.

use fedpd_core::algorithms::{self, fedpd_eta_limit, Algorithm, InitPoint};
use fedpd_core::config::{ExperimentConfig, RunSpec};
use fedpd_core::data::{self, default_probes, DEFAULT_FAMILY};
use fedpd_core::metrics::{self, write_trace_csv};
use fedpd_core::theory_checks::{self, ChainSolver};
use fedpd_core::{ChainSpec, LossFamily};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: fedpd_core::Error) -> PyErr {
    match err {
        fedpd_core::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_family(name: &str, alpha: f64, beta: f64) -> PyResult<LossFamily> {
    match name {
        "penalized_logistic" => Ok(LossFamily::PenalizedLogistic { alpha, beta }),
        "logistic" => Ok(LossFamily::Logistic),
        "linear_regression" => Ok(LossFamily::LinearRegression),
        other => Err(PyValueError::new_err(format!(
            "unknown family `{other}` (expected penalized_logistic, logistic or linear_regression)"
        ))),
    }
}

/// A federated objective `f = (1/N) Σ f_i`.
#[pyclass(name = "Problem", module = "fedpd_lab", frozen)]
pub struct PyProblem {
    inner: fedpd_core::Problem,
}

#[pymethods]
impl PyProblem {
    /// Weakly heterogeneous synthetic classification data.
    #[staticmethod]
    #[pyo3(signature = (agents, samples_per_agent, dim, seed=0, family="penalized_logistic", alpha=1.0, beta=0.1))]
    fn weak(
        agents: usize,
        samples_per_agent: usize,
        dim: usize,
        seed: u64,
        family: &str,
        alpha: f64,
        beta: f64,
    ) -> PyResult<Self> {
        let shards =
            data::weak_noniid_shards(agents, samples_per_agent, dim, seed).map_err(to_py)?;
        let inner = fedpd_core::Problem::from_shards(parse_family(family, alpha, beta)?, shards)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Strongly heterogeneous synthetic data labelled by per-agent models.
    #[staticmethod]
    #[pyo3(signature = (agents, samples_per_agent, dim, noise_halfwidth=1.0, seed=0, family="penalized_logistic", alpha=1.0, beta=0.1))]
    #[allow(clippy::too_many_arguments)]
    fn strong(
        agents: usize,
        samples_per_agent: usize,
        dim: usize,
        noise_halfwidth: f64,
        seed: u64,
        family: &str,
        alpha: f64,
        beta: f64,
    ) -> PyResult<Self> {
        let shards =
            data::strong_noniid_shards(agents, samples_per_agent, dim, noise_halfwidth, seed)
                .map_err(to_py)?;
        let inner = fedpd_core::Problem::from_shards(parse_family(family, alpha, beta)?, shards)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Every agent holds the same shard.
    #[staticmethod]
    #[pyo3(signature = (agents, samples_per_agent, dim, seed=0))]
    fn identical(agents: usize, samples_per_agent: usize, dim: usize, seed: u64) -> PyResult<Self> {
        let shards = data::identical_shards(agents, samples_per_agent, dim, seed).map_err(to_py)?;
        let inner = fedpd_core::Problem::from_shards(DEFAULT_FAMILY, shards).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Header-free `label,f1,...,fd` rows dealt round-robin to `agents`.
    #[staticmethod]
    #[pyo3(signature = (path, agents, family="penalized_logistic", alpha=1.0, beta=0.1))]
    fn from_csv(path: &str, agents: usize, family: &str, alpha: f64, beta: f64) -> PyResult<Self> {
        let shards =
            data::shard_round_robin(data::load_csv(path).map_err(to_py)?, agents).map_err(to_py)?;
        let inner = fedpd_core::Problem::from_shards(parse_family(family, alpha, beta)?, shards)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// `f₁ = ½‖x‖²`, `f₂ = -½‖x‖²`.
    #[staticmethod]
    #[pyo3(signature = (dim=1))]
    fn quadratic_pair(dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: fedpd_core::Problem::quadratic_pair(dim).map_err(to_py)?,
        })
    }

    /// Adversarial chain with `chain_len` links split over `agents`.
    #[staticmethod]
    fn chain(chain_len: usize, agents: usize, eps: f64, lipschitz: f64) -> PyResult<Self> {
        let spec = ChainSpec::new(chain_len, agents, eps, lipschitz).map_err(to_py)?;
        Ok(Self {
            inner: fedpd_core::Problem::chain(spec).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }

    fn loss(&self, agent: usize, x: Vec<f64>) -> PyResult<f64> {
        self.inner.loss(agent, &x.into()).map_err(to_py)
    }

    fn grad(&self, agent: usize, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .grad(agent, &x.into())
            .map_err(to_py)?
            .into_inner())
    }

    fn global_loss(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.global_loss(&x.into()).map_err(to_py)
    }

    fn global_grad(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .global_grad(&x.into())
            .map_err(to_py)?
            .into_inner())
    }

    /// `‖∇f(x)‖²`.
    fn stationarity_gap(&self, x: Vec<f64>) -> PyResult<f64> {
        metrics::stationarity_gap(&self.inner, &x.into()).map_err(to_py)
    }

    /// Measured `δ` on the origin plus random probes, and the analytic bound if one applies.
    #[pyo3(signature = (seed=0))]
    fn estimate_delta(&self, seed: u64) -> PyResult<(f64, Option<f64>)> {
        let rep = data::estimate_delta(&self.inner, &default_probes(self.inner.dim(), seed))
            .map_err(to_py)?;
        Ok((rep.measured_delta, rep.analytic_bound))
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(agents={}, dim={}, lipschitz={:.6})",
            self.inner.n_agents(),
            self.inner.dim(),
            self.inner.lipschitz()
        )
    }
}

/// Per-round metrics of a finished run.
#[pyclass(name = "Trace", module = "fedpd_lab", frozen)]
pub struct PyTrace {
    inner: metrics::Trace,
    config_json: String,
}

impl PyTrace {
    fn column<T>(&self, f: impl Fn(&metrics::TraceRow) -> T) -> Vec<T> {
        self.inner.rows.iter().map(f).collect()
    }
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn gap(&self) -> Vec<f64> {
        self.column(|r| r.gap)
    }

    #[getter]
    fn comm_rounds(&self) -> Vec<u64> {
        self.column(|r| r.comm_rounds_cum)
    }

    #[getter]
    fn local_iters(&self) -> Vec<u64> {
        self.column(|r| r.local_iters_cum)
    }

    #[getter]
    fn samples(&self) -> Vec<u64> {
        self.column(|r| r.samples_cum)
    }

    #[getter]
    fn consensus_err(&self) -> Vec<f64> {
        self.column(|r| r.consensus_err)
    }

    #[getter]
    fn al_mean(&self) -> Vec<f64> {
        self.column(|r| r.al_mean)
    }

    #[getter]
    fn diverged(&self) -> bool {
        self.inner.diverged
    }

    #[getter]
    fn final_x0(&self) -> Vec<f64> {
        self.inner.final_x0.to_vec()
    }

    #[getter]
    fn min_gap(&self) -> Option<f64> {
        self.inner.min_gap()
    }

    #[getter]
    fn final_gap(&self) -> Option<f64> {
        self.inner.final_gap()
    }

    #[getter]
    fn max_dual_residual(&self) -> f64 {
        self.inner.max_dual_residual
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    /// The fully resolved run configuration as JSON.
    #[getter]
    fn config_json(&self) -> &str {
        &self.config_json
    }

    /// The trace in `trace.csv` format.
    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &self.inner.rows)
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }
}

/// Runs `algorithm` on `problem`; omitted values take the CLI defaults.
#[pyfunction]
#[pyo3(signature = (problem, algorithm, rounds=100, eta=None, p=0.0, local_steps=8, batch=1, seed=0, eps1=None, init=0.0))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    problem: &PyProblem,
    algorithm: &str,
    rounds: usize,
    eta: Option<f64>,
    p: f64,
    local_steps: usize,
    batch: usize,
    seed: u64,
    eps1: Option<f64>,
    init: f64,
) -> PyResult<PyTrace> {
    let algorithm: Algorithm = algorithm.parse().map_err(|e: fedpd_core::Error| to_py(e))?;
    let mut spec = RunSpec::new(algorithm);
    spec.rounds = rounds;
    spec.eta = eta;
    spec.p = p;
    spec.local_steps = local_steps;
    spec.batch = batch;
    spec.seed = seed;
    spec.eps1 = eps1;
    spec.init = InitPoint::Fill(init);
    let cfg = spec.to_run_config(&problem.inner).map_err(to_py)?;
    let config_json =
        serde_json::to_string(&cfg).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let inner = py
        .detach(|| algorithms::run(&problem.inner, &cfg))
        .map_err(to_py)?;
    Ok(PyTrace { inner, config_json })
}

/// Runs a complete JSON experiment document (same schema as the CLI).
#[pyfunction]
fn run_config(py: Python<'_>, config_json: &str) -> PyResult<PyTrace> {
    let cfg = ExperimentConfig::from_json_str(config_json).map_err(to_py)?;
    let (problem, resolved) = cfg.resolve().map_err(to_py)?;
    let config_json =
        serde_json::to_string(&resolved).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let inner = py
        .detach(|| algorithms::run(&problem, &resolved.run))
        .map_err(to_py)?;
    Ok(PyTrace { inner, config_json })
}

/// Largest guaranteed FedPD parameter `(√5-1)/(4L)`.
#[pyfunction]
fn eta_limit(lipschitz: f64) -> f64 {
    fedpd_eta_limit(lipschitz)
}

/// Stage amplification of FedAvg on the quadratic pair and the spectrum of its cycle map.
#[pyfunction]
fn divergence_factor(eta: f64, local_steps: usize) -> PyResult<(f64, [f64; 2])> {
    let d = theory_checks::divergence_factor(eta, local_steps).map_err(to_py)?;
    Ok((d.factor, d.spectrum))
}

/// Frontier report of FedAvg on the chain after `comm_rounds` aggregations.
#[pyfunction]
#[pyo3(signature = (chain_len, agents, eps, lipschitz, local_steps, comm_rounds, eta=None, stochastic=false, seed=0))]
#[allow(clippy::too_many_arguments)]
fn lower_bound_run<'py>(
    py: Python<'py>,
    chain_len: usize,
    agents: usize,
    eps: f64,
    lipschitz: f64,
    local_steps: usize,
    comm_rounds: usize,
    eta: Option<f64>,
    stochastic: bool,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = ChainSpec::new(chain_len, agents, eps, lipschitz).map_err(to_py)?;
    let solver = if stochastic {
        ChainSolver::Sgd
    } else {
        ChainSolver::Gd
    };
    let eta = eta.unwrap_or(1.0 / spec.smoothness());
    let rep = theory_checks::lower_bound_run(spec, solver, local_steps, eta, comm_rounds, seed)
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("comm_rounds", rep.comm_rounds)?;
    out.set_item("frontier", rep.frontier)?;
    out.set_item("tail_zero", rep.tail_zero)?;
    out.set_item("local_frontier", rep.local_frontier)?;
    out.set_item("gap", rep.gap)?;
    Ok(out)
}

/// Violations found by `samples` random probes of the chain building blocks.
#[pyfunction]
#[pyo3(signature = (samples=10_000, seed=0))]
fn chain_bound_violations(samples: usize, seed: u64) -> usize {
    theory_checks::chain_bounds_probe(samples, seed).violations()
}

/// Skip probability for target accuracy `eps` at heterogeneity `delta`.
#[pyfunction]
fn select_skip_probability<'py>(
    py: Python<'py>,
    eps: f64,
    delta: f64,
    eta: f64,
    lipschitz: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let c = algorithms::select_skip_probability(eps, delta, eta, lipschitz).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("p", c.p)?;
    out.set_item("regime", format!("{:?}", c.regime))?;
    out.set_item("c3", c.c3)?;
    out.set_item("threshold", c.threshold)?;
    Ok(out)
}

#[pymodule]
fn fedpd_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(eta_limit, m)?)?;
    m.add_function(wrap_pyfunction!(divergence_factor, m)?)?;
    m.add_function(wrap_pyfunction!(lower_bound_run, m)?)?;
    m.add_function(wrap_pyfunction!(chain_bound_violations, m)?)?;
    m.add_function(wrap_pyfunction!(select_skip_probability, m)?)?;
    m.add(
        "ALGORITHMS",
        Algorithm::ALL.iter().map(|a| a.name()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
