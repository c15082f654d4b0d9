//! Python bindings: random and fixture POMDPs, datasets, history mappings,
//! frequentist MDP fitting and solving, evaluation, bounds and sweeps.

use batchpomdp::evaluator::{self, RolloutConfig};
use batchpomdp::harness::{self, ExperimentConfig};
use batchpomdp::mapping::HistoryMapping;
use batchpomdp::theory::{self, BisimConfig, MetricMatrix};
use batchpomdp::{
    dataset, generator, AugmentedMdp, Dataset, GeneratorConfig, History, MappingSpec, Pomdp,
    SamplingPolicy, TabularPolicy, WindowMapping,
};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

create_exception!(pybatchpomdp, BatchPomdpError, PyValueError);

fn err(e: batchpomdp::Error) -> PyErr {
    BatchPomdpError::new_err(e.to_string())
}

#[pyclass(name = "Pomdp", module = "pybatchpomdp")]
pub struct PyPomdp {
    inner: Pomdp,
}

#[pymethods]
impl PyPomdp {
    /// Random POMDP from the default generator distribution.
    #[staticmethod]
    #[pyo3(signature = (n_states = 5, n_actions = 2, n_obs = 5, seed = 0))]
    fn random(n_states: usize, n_actions: usize, n_obs: usize, seed: u64) -> PyResult<Self> {
        let cfg = GeneratorConfig {
            seed,
            ..GeneratorConfig::sized(n_states, n_actions, n_obs)
        };
        generator::generate(&cfg)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        generator::fixture(name)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Pomdp::from_json(text)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs()
    }

    #[getter]
    fn r_max(&self) -> f64 {
        self.inner.r_max()
    }

    /// Belief after `initial_obs` and `(action, reward, obs)` steps.
    #[pyo3(signature = (initial_obs, steps = Vec::new()))]
    fn belief(&self, initial_obs: usize, steps: Vec<(usize, f64, usize)>) -> PyResult<Vec<f64>> {
        let mut h = History::new(initial_obs);
        for (a, r, w) in steps {
            h.push(a, r, w);
        }
        self.inner
            .belief_of_history(self.inner.init(), &h)
            .map(|b| b.0)
            .map_err(err)
    }

    /// Dataset of `n_tr` trajectories of `n_l` steps under the uniform policy.
    fn sample(&self, n_tr: usize, n_l: usize, seed: u64) -> PyResult<PyDataset> {
        dataset::sample_dataset_seeded(
            &self.inner,
            self.inner.init(),
            &SamplingPolicy::Uniform,
            n_tr,
            n_l,
            seed,
        )
        .map(|inner| PyDataset { inner })
        .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Pomdp(n_states={}, n_actions={}, n_obs={})",
            self.inner.n_states(),
            self.inner.n_actions(),
            self.inner.n_obs()
        )
    }
}

#[pyclass(name = "Dataset", module = "pybatchpomdp")]
pub struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Dataset::read_jsonl(text.as_bytes())
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_jsonl(&mut buf).map_err(err)?;
        Ok(String::from_utf8(buf).expect("jsonl is utf-8"))
    }

    #[getter]
    fn n_transitions(&self) -> usize {
        self.inner.n_transitions()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Mapping", module = "pybatchpomdp")]
pub struct PyMapping {
    inner: WindowMapping,
}

#[pymethods]
impl PyMapping {
    /// Mapping from a descriptor such as `phi_h:2` or `phi_full:3`, sized
    /// for `pomdp`.
    #[new]
    fn new(descriptor: &str, pomdp: &PyPomdp) -> PyResult<Self> {
        let spec: MappingSpec = descriptor.parse().map_err(err)?;
        let p = &pomdp.inner;
        spec.build(p.n_obs(), p.n_actions(), p.reward_bounds())
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[getter]
    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }

    #[getter]
    fn cardinality(&self) -> usize {
        self.inner.cardinality()
    }

    /// Index of the history `initial_obs, (action, reward, obs)...`.
    #[pyo3(signature = (initial_obs, steps = Vec::new()))]
    fn apply(&self, initial_obs: usize, steps: Vec<(usize, f64, usize)>) -> usize {
        let mut h = History::new(initial_obs);
        for (a, r, w) in steps {
            h.push(a, r, w);
        }
        self.inner.apply_index(&h)
    }

    fn __repr__(&self) -> String {
        format!("Mapping({})", self.inner.descriptor())
    }
}

#[pyclass(name = "AugmentedMdp", module = "pybatchpomdp")]
pub struct PyMdp {
    inner: AugmentedMdp,
}

#[pymethods]
impl PyMdp {
    #[staticmethod]
    fn fit(dataset: &PyDataset, mapping: &PyMapping, gamma_train: f64) -> PyResult<Self> {
        AugmentedMdp::fit(&dataset.inner, &mapping.inner, gamma_train)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    /// Infinite-data limit of `fit` for `n_l`-step uniform-policy trajectories.
    #[staticmethod]
    fn asymptotic(
        pomdp: &PyPomdp,
        mapping: &PyMapping,
        n_l: usize,
        gamma_train: f64,
    ) -> PyResult<Self> {
        AugmentedMdp::fit_asymptotic(
            &pomdp.inner,
            pomdp.inner.init(),
            &SamplingPolicy::Uniform,
            &mapping.inner,
            n_l,
            gamma_train,
        )
        .map(|inner| Self { inner })
        .map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        AugmentedMdp::from_json(text)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n_sigma(&self) -> usize {
        self.inner.n_sigma()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    fn transition_row(&self, sigma: usize, action: usize) -> PyResult<Vec<f64>> {
        if sigma >= self.inner.n_sigma() || action >= self.inner.n_actions() {
            return Err(BatchPomdpError::new_err("index out of range"));
        }
        Ok(self.inner.t_row_dense(sigma, action))
    }

    /// Value iteration; returns `(values, greedy policy)`.
    #[pyo3(signature = (tol = 1e-8))]
    fn solve(&self, tol: f64) -> PyResult<(Vec<f64>, Vec<usize>)> {
        let sol = self.inner.solve(tol).map_err(err)?;
        Ok((sol.v.0, sol.policy.actions))
    }

    /// Bisimulation metric as a dense matrix.
    #[pyo3(signature = (c_r = 0.1, c_t = 0.9))]
    fn bisimulation(&self, c_r: f64, c_t: f64) -> PyResult<Vec<Vec<f64>>> {
        let cfg = BisimConfig {
            c_r,
            c_t,
            ..BisimConfig::default()
        };
        let d = theory::bisim_fixed_point(&self.inner, &cfg).map_err(err)?;
        Ok((0..d.n)
            .map(|i| (0..d.n).map(|j| d.get(i, j)).collect())
            .collect())
    }
}

fn policy_for(mapping: &PyMapping, actions: Vec<usize>) -> TabularPolicy {
    TabularPolicy {
        mapping: mapping.inner.descriptor(),
        actions,
    }
}

/// Exact expected return of a policy over `horizon` actions.
#[pyfunction]
#[pyo3(signature = (pomdp, mapping, policy, horizon, discount = 1.0))]
fn exact_value(
    pomdp: &PyPomdp,
    mapping: &PyMapping,
    policy: Vec<usize>,
    horizon: usize,
    discount: f64,
) -> PyResult<f64> {
    evaluator::exact_value(
        &pomdp.inner,
        pomdp.inner.init(),
        &mapping.inner,
        &policy_for(mapping, policy),
        horizon,
        discount,
    )
    .map_err(err)
}

/// Monte-Carlo `(mean, standard error)` of a policy's return.
#[pyfunction]
#[pyo3(signature = (pomdp, mapping, policy, n_rollouts = 1000, horizon = 100, discount = 1.0, seed = 0))]
fn rollout_value(
    pomdp: &PyPomdp,
    mapping: &PyMapping,
    policy: Vec<usize>,
    n_rollouts: usize,
    horizon: usize,
    discount: f64,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let cfg = RolloutConfig {
        n_rollouts,
        horizon,
        discount_env: discount,
        seed,
    };
    let mut rng = batchpomdp::seed::rng(seed);
    evaluator::rollout_value(
        &pomdp.inner,
        pomdp.inner.init(),
        &mapping.inner,
        &policy_for(mapping, policy),
        &cfg,
        &mut rng,
    )
    .map_err(err)
}

/// ε of a mapping over histories of length at most `horizon`.
#[pyfunction]
fn epsilon(pomdp: &PyPomdp, mapping: &PyMapping, horizon: usize) -> PyResult<f64> {
    theory::epsilon_sufficiency(
        &pomdp.inner,
        pomdp.inner.init(),
        &SamplingPolicy::Uniform,
        &mapping.inner,
        horizon,
        theory::DEFAULT_PRUNE_MASS,
    )
    .map(|r| r.epsilon)
    .map_err(err)
}

#[pyfunction]
fn bias_bound(epsilon: f64, r_max: f64, gamma: f64) -> PyResult<f64> {
    theory::bias_bound(epsilon, r_max, gamma).map_err(err)
}

#[pyfunction]
fn overfitting_bound(
    n: usize,
    r_max: f64,
    gamma: f64,
    sigma_card: usize,
    n_actions: usize,
    delta: f64,
) -> PyResult<f64> {
    theory::overfitting_bound(n, r_max, gamma, sigma_card, n_actions, delta).map_err(err)
}

/// Optimal transport cost between `p` and `q` under the ground metric `d`.
#[pyfunction]
fn kantorovich(d: Vec<Vec<f64>>, p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    let m = MetricMatrix::from_rows(d).map_err(err)?;
    theory::kantorovich(&m, &p, &q).map_err(err)
}

/// Run a μ/σ sweep from a TOML configuration; returns the CSV text.
#[pyfunction]
fn run_sweep(py: Python<'_>, config_toml: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(err)?;
    py.detach(|| harness::run_sweep(&cfg).and_then(|s| s.to_csv()))
        .map_err(err)
}

/// Bound-vs-measured report from a TOML configuration, as JSON.
#[pyfunction]
fn bounds_report(py: Python<'_>, config_toml: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(err)?;
    py.detach(|| harness::run_bounds_report(&cfg))
        .map(|r| r.to_json())
        .map_err(err)
}

#[pymodule]
fn pybatchpomdp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BatchPomdpError", m.py().get_type::<BatchPomdpError>())?;
    m.add_class::<PyPomdp>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyMapping>()?;
    m.add_class::<PyMdp>()?;
    m.add_function(wrap_pyfunction!(exact_value, m)?)?;
    m.add_function(wrap_pyfunction!(rollout_value, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(bias_bound, m)?)?;
    m.add_function(wrap_pyfunction!(overfitting_bound, m)?)?;
    m.add_function(wrap_pyfunction!(kantorovich, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(bounds_report, m)?)?;
    Ok(())
}
