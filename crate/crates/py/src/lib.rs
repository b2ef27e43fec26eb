//! Python bindings for the flowpf particle filter.

use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;

use flowpf::baselines::{self, MclConfig};
use flowpf::bench::{self, ExperimentConfig, ExperimentKind};
use flowpf::flow;
use flowpf::likelihoods::{self as lk, LossModel};
use flowpf::metrics::{self, GaussianSummary};

fn err(e: flowpf::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type Matrix = Vec<Vec<f64>>;

fn summary_out(g: &GaussianSummary) -> (Vec<f64>, Matrix) {
    let d = g.dim();
    let cov = (0..d).map(|i| (0..d).map(|j| g.covariance[(i, j)]).collect()).collect();
    (g.mean.iter().copied().collect(), cov)
}

fn summary_in(mean: Vec<f64>, cov: Matrix) -> PyResult<GaussianSummary> {
    let d = mean.len();
    if cov.len() != d || cov.iter().any(|row| row.len() != d) {
        return Err(PyValueError::new_err(format!("covariance must be {d}x{d}")));
    }
    let cov = nalgebra::DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    GaussianSummary::new(nalgebra::DVector::from_vec(mean), cov).map_err(err)
}

/// An ordered set of particles at a discrete time step.
#[pyclass(frozen, skip_from_py_object, name = "Ensemble")]
#[derive(Clone)]
pub struct PyEnsemble {
    inner: flow::Ensemble,
}

#[pymethods]
impl PyEnsemble {
    #[new]
    #[pyo3(signature = (particles, step_index = 0))]
    fn new(particles: Matrix, step_index: usize) -> PyResult<Self> {
        let inner = flow::Ensemble::from_particles(&particles, step_index).map_err(err)?;
        Ok(Self { inner })
    }

    /// `n` draws from the standard normal prior for a seed.
    #[staticmethod]
    fn prior(dim: usize, n: usize, seed: u64) -> PyResult<Self> {
        let inner = bench::initial_prior_ensemble(dim, n, seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn step_index(&self) -> usize {
        self.inner.step_index()
    }

    fn particles(&self) -> Matrix {
        self.inner.to_vectors()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __getitem__(&self, i: isize) -> PyResult<Vec<f64>> {
        let n = self.inner.len() as isize;
        let k = if i < 0 { i + n } else { i };
        if !(0..n).contains(&k) {
            return Err(PyIndexError::new_err("particle index out of range"));
        }
        Ok(self.inner.particle(k as usize).to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Ensemble(n={}, dim={}, step_index={})", self.inner.len(), self.inner.dim(), self.inner.step_index())
    }
}

/// Flow hyperparameters: dimension, kernel smoothing `gamma`, step `eta`.
#[pyclass(frozen, skip_from_py_object, name = "FlowConfig")]
#[derive(Clone)]
pub struct PyFlowConfig {
    inner: flow::FlowConfig,
}

#[pymethods]
impl PyFlowConfig {
    #[new]
    #[pyo3(signature = (dim, gamma, eta, n_particles, n_steps = 1))]
    fn new(dim: usize, gamma: f64, eta: f64, n_particles: usize, n_steps: usize) -> PyResult<Self> {
        let inner = flow::FlowConfig::new(dim, gamma, eta, n_particles, n_steps).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.n_steps
    }

    #[getter]
    fn kernel_constant(&self) -> f64 {
        self.inner.kernel_constant()
    }

    /// Step applied to the loss gradient, `eta * C * gamma^(2-d)`.
    #[getter]
    fn gradient_coefficient(&self) -> f64 {
        self.inner.gradient_coefficient()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!("FlowConfig(dim={}, gamma={}, eta={}, n_particles={}, n_steps={})", c.dim, c.gamma, c.eta, c.n_particles, c.n_steps)
    }
}

/// `L(x) = 0.5 |x - center|^2` at every step.
#[pyclass(frozen, name = "IsotropicQuadratic")]
pub struct PyIsotropic {
    inner: lk::IsotropicQuadraticLoss,
}

#[pymethods]
impl PyIsotropic {
    #[new]
    fn new(center: Vec<f64>) -> Self {
        Self {
            inner: lk::IsotropicQuadraticLoss::new(center),
        }
    }
}

/// Synthetic localization problem `L_t(x) = 0.5 ((x - u) . xi_t)^2`.
#[pyclass(frozen, name = "SyntheticProblem")]
pub struct PySynthetic {
    inner: lk::QuadraticProjectionLoss,
}

#[pymethods]
impl PySynthetic {
    #[new]
    fn new(dim: usize, horizon: usize, seed: u64) -> PyResult<Self> {
        let inner = lk::sample_synthetic_problem(dim, horizon, seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn u(&self) -> Vec<f64> {
        self.inner.u.clone()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    /// Posterior after `t` observations as `(mean, covariance)`.
    fn exact_posterior(&self, t: usize) -> PyResult<(Vec<f64>, Matrix)> {
        Ok(summary_out(&lk::exact_posterior(&self.inner, t).map_err(err)?))
    }

    /// Posterior averaged over the projection directions after `t` steps.
    fn expected_posterior(&self, t: usize) -> PyResult<(Vec<f64>, Matrix)> {
        Ok(summary_out(&lk::expected_posterior(&self.inner.u, t).map_err(err)?))
    }
}

/// Rigid registration of `points` model points under noise `sigma`.
#[pyclass(frozen, name = "PoseProblem")]
pub struct PyPose {
    inner: lk::PoseRegistrationLoss,
}

#[pymethods]
impl PyPose {
    #[new]
    #[pyo3(signature = (points, sigma, seed, noise = None))]
    fn new(points: usize, sigma: f64, seed: u64, noise: Option<f64>) -> PyResult<Self> {
        let inner = lk::make_pose_problem_with_noise(points, sigma, noise.unwrap_or(sigma), seed).map_err(err)?;
        Ok(Self { inner })
    }

    /// True pose as `[tx, ty, tz, wx, wy, wz]` (axis-angle rotation).
    #[getter]
    fn true_pose(&self) -> Vec<f64> {
        self.inner.true_pose.pack().into_inner()
    }

    /// Translation error (cm) and signed rotation error (degrees) of the
    /// ensemble's mean pose.
    fn errors(&self, ensemble: &PyEnsemble) -> PyResult<(f64, f64)> {
        let est = metrics::mean_pose(&ensemble.inner).map_err(err)?;
        Ok(metrics::pose_errors(&est, &self.inner.true_pose))
    }
}

fn with_model<R>(model: &Bound<'_, PyAny>, f: impl FnOnce(&dyn LossModel) -> PyResult<R>) -> PyResult<R> {
    if let Ok(m) = model.cast::<PySynthetic>() {
        return f(&m.get().inner);
    }
    if let Ok(m) = model.cast::<PyPose>() {
        return f(&m.get().inner);
    }
    if let Ok(m) = model.cast::<PyIsotropic>() {
        return f(&m.get().inner);
    }
    Err(PyValueError::new_err("model must be SyntheticProblem, PoseProblem or IsotropicQuadratic"))
}

#[pyfunction]
fn kernel_constant(d: usize) -> PyResult<f64> {
    flow::kernel_constant(d).map_err(err)
}

/// Returns `(Z, losses - Z)`.
#[pyfunction]
fn normalize_losses(losses: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    flow::normalize_losses(&losses).map_err(err)
}

#[pyfunction]
fn loss(model: &Bound<'_, PyAny>, step: usize, x: Vec<f64>) -> PyResult<f64> {
    with_model(model, |m| m.loss(step, &x).map_err(err))
}

#[pyfunction]
fn grad(model: &Bound<'_, PyAny>, step: usize, x: Vec<f64>) -> PyResult<Vec<f64>> {
    with_model(model, |m| {
        let mut g = vec![0.0; m.dim()];
        m.grad(step, &x, &mut g).map_err(err)?;
        Ok(g)
    })
}

/// One synchronous flow step.
#[pyfunction]
fn flow_step(py: Python<'_>, ensemble: &PyEnsemble, model: &Bound<'_, PyAny>, config: &PyFlowConfig) -> PyResult<PyEnsemble> {
    with_model(model, |m| {
        let next = py.detach(|| flow::step(&ensemble.inner, m, &config.inner)).map_err(err)?;
        Ok(PyEnsemble { inner: next })
    })
}

/// Runs `config.n_steps` flow steps; returns every ensemble including the
/// initial one.
#[pyfunction]
fn flow_run(py: Python<'_>, ensemble: &PyEnsemble, model: &Bound<'_, PyAny>, config: &PyFlowConfig) -> PyResult<Vec<PyEnsemble>> {
    with_model(model, |m| {
        let mut out = vec![ensemble.clone()];
        py.detach(|| {
            flow::run(&ensemble.inner, m, &config.inner, |_, e| out.push(PyEnsemble { inner: e.clone() }))
        })
        .map_err(err)?;
        Ok(out)
    })
}

/// Monte Carlo localization baseline; returns every ensemble including the
/// initial one.
#[pyfunction]
fn mcl_run(
    py: Python<'_>,
    ensemble: &PyEnsemble,
    model: &Bound<'_, PyAny>,
    epsilon: f64,
    n_steps: usize,
    seed: u64,
) -> PyResult<Vec<PyEnsemble>> {
    let cfg = MclConfig::new(epsilon, ensemble.inner.len(), seed).map_err(err)?;
    with_model(model, |m| {
        let mut out = vec![ensemble.clone()];
        py.detach(|| {
            baselines::mcl_run(&ensemble.inner, m, &cfg, n_steps, |_, w| {
                out.push(PyEnsemble {
                    inner: w.particles.clone(),
                })
            })
        })
        .map_err(err)?;
        Ok(out)
    })
}

/// Independent per-particle gradient descent; returns every ensemble
/// including the initial one.
#[pyfunction]
fn gradient_descent_run(
    py: Python<'_>,
    ensemble: &PyEnsemble,
    model: &Bound<'_, PyAny>,
    eta: f64,
    n_steps: usize,
) -> PyResult<Vec<PyEnsemble>> {
    with_model(model, |m| {
        let mut out = vec![ensemble.clone()];
        py.detach(|| {
            baselines::gradient_descent_run(&ensemble.inner, m, eta, n_steps, |_, e| out.push(PyEnsemble { inner: e.clone() }))
        })
        .map_err(err)?;
        Ok(out)
    })
}

/// Gaussian fit with the default ridge: `(mean, covariance, ridge)`.
#[pyfunction]
fn fit_gaussian(ensemble: &PyEnsemble) -> PyResult<(Vec<f64>, Matrix, f64)> {
    let (g, ridge) = metrics::fit_gaussian_auto(&ensemble.inner).map_err(err)?;
    let (m, c) = summary_out(&g);
    Ok((m, c, ridge))
}

/// `KL(p || q)` between two Gaussians given as mean and covariance.
#[pyfunction]
fn kl_gaussians(mean_p: Vec<f64>, cov_p: Matrix, mean_q: Vec<f64>, cov_q: Matrix) -> PyResult<f64> {
    let p = summary_in(mean_p, cov_p)?;
    let q = summary_in(mean_q, cov_q)?;
    metrics::kl_gaussians(&p, &q).map_err(err)
}

/// Exact Euclidean assignment distance: `(total_cost, permutation)`.
#[pyfunction]
fn wasserstein_exact(a: &PyEnsemble, b: &PyEnsemble) -> PyResult<(f64, Vec<usize>)> {
    let r = metrics::wasserstein_exact(&a.inner, &b.inner, metrics::euclidean).map_err(err)?;
    Ok((r.total_cost, r.permutation))
}

#[pyfunction]
#[pyo3(signature = (w0, eps, lipschitz_field, t, lipschitz_metric = 1.0))]
fn theorem_rhs(w0: f64, eps: f64, lipschitz_field: f64, t: f64, lipschitz_metric: f64) -> PyResult<f64> {
    metrics::theorem_rhs(&metrics::TheoremBoundParams {
        w0,
        eps,
        lipschitz_field,
        lipschitz_metric,
        t,
    })
    .map_err(err)
}

/// Runs an experiment (`synthetic`, `pose` or `theorem`) configured by
/// `key=value` text and returns the results as CSV text.
#[pyfunction]
#[pyo3(signature = (experiment, config = ""))]
fn run_experiment(py: Python<'_>, experiment: &str, config: &str) -> PyResult<String> {
    let kind: ExperimentKind = experiment.parse().map_err(|e: String| PyValueError::new_err(format!("experiment: expected {e}")))?;
    let cfg = ExperimentConfig::resolve(kind, Some(config), &[]).map_err(err)?;
    let out = py.detach(|| bench::run_experiment(&cfg)).map_err(err)?;
    let mut buf = Vec::new();
    bench::write_csv(&out.records, &mut buf).map_err(err)?;
    String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
mod flowpf_py {
    #[pymodule_export]
    use super::{
        PyEnsemble, PyFlowConfig, PyIsotropic, PyPose, PySynthetic, flow_run, flow_step, fit_gaussian, grad,
        gradient_descent_run, kernel_constant, kl_gaussians, loss, mcl_run, normalize_losses, run_experiment,
        theorem_rhs, wasserstein_exact,
    };

    #[pymodule_init]
    fn init(m: &pyo3::Bound<'_, pyo3::types::PyModule>) -> pyo3::PyResult<()> {
        use pyo3::types::PyModuleMethods;
        m.add("__version__", flowpf::VERSION)
    }
}
