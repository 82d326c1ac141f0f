//! Python bindings: drive the parking environment, load trained policies,
//! run experiments, and call the comparison statistics in-process.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use parkrl_core::env;
use parkrl_core::evalstats;
use parkrl_core::harness::{self, config as hconfig, Checkpoint};
use parkrl_core::rewards::RewardStrategy;
use parkrl_core::rng::SimRng;
use parkrl_core::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidConfig(_) | Error::InvalidAction(_) | Error::Usage(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Static scenario: layout, sensors, vehicle, reward constants.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Scenario {
    inner: env::Scenario,
}

#[pymethods]
impl Scenario {
    /// The bundled default parking lot.
    #[staticmethod]
    fn default() -> Scenario {
        Scenario {
            inner: env::Scenario::default_scenario(),
        }
    }

    /// Load a layout JSON file.
    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Scenario> {
        Ok(Scenario {
            inner: env::Scenario::from_json_file(Path::new(path)).map_err(to_py_err)?,
        })
    }

    /// Parse a layout from a JSON string.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Scenario> {
        Ok(Scenario {
            inner: env::Scenario::from_json_str(text).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn max_steps(&self) -> u32 {
        self.inner.max_steps
    }

    #[getter]
    fn target_point(&self) -> (f64, f64) {
        let t = self.inner.layout.target_point;
        (t.x, t.z)
    }

    fn __repr__(&self) -> String {
        let l = &self.inner.layout;
        format!(
            "Scenario(lot={}x{}, obstacles={}, max_steps={})",
            2.0 * l.lot_bounds.half_extents.0,
            2.0 * l.lot_bounds.half_extents.1,
            l.obstacles.len(),
            self.inner.max_steps
        )
    }
}

/// One parking episode simulator.
#[pyclass]
struct Environment {
    env: env::Environment,
    scenario: env::Scenario,
    reward: RewardStrategy,
    rng: Option<SimRng>,
}

#[pymethods]
impl Environment {
    #[new]
    #[pyo3(signature = (scenario, reward="mar"))]
    fn new(scenario: &Scenario, reward: &str) -> PyResult<Self> {
        let reward = RewardStrategy::parse(reward).map_err(to_py_err)?;
        Ok(Self {
            env: env::Environment::new(scenario.inner.clone()),
            scenario: scenario.inner.clone(),
            reward,
            rng: None,
        })
    }

    /// Start an episode with the given seed; returns the 17-dim observation.
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = SimRng::from_seed(seed);
        let obs = self.env.reset(&mut rng);
        self.rng = Some(rng);
        obs.to_vec().to_vec()
    }

    /// Advance one step. Returns (observation, reward, terminal, info).
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        action: f64,
    ) -> PyResult<(Vec<f64>, f64, String, Bound<'py, PyDict>)> {
        let out = self.env.step(action, self.reward).map_err(to_py_err)?;
        let info = PyDict::new(py);
        info.set_item("min_ray", out.min_ray)?;
        info.set_item("milestone_latched", out.milestone_latched)?;
        info.set_item("goal_distance", out.observation.goal_distance)?;
        Ok((
            out.observation.to_vec().to_vec(),
            out.reward,
            out.terminal.name().to_string(),
            info,
        ))
    }

    /// Current observation in the normalized network-input form.
    fn normalized_observation(&self) -> Vec<f64> {
        self.env.observe().normalized(&self.scenario).to_vec()
    }

    /// Rear-axle pose: (x, z, heading_rad, steer_rad).
    fn vehicle_pose(&self) -> (f64, f64, f64, f64) {
        let s = self.env.vehicle_state();
        (s.position.x, s.position.z, s.heading, s.steer_angle)
    }

    #[getter]
    fn is_terminal(&self) -> bool {
        self.env.is_terminal()
    }

    #[getter]
    fn milestone_latched(&self) -> bool {
        self.env.milestone_latched()
    }
}

/// A trained policy loaded from a checkpoint file.
#[pyclass]
struct Policy {
    controller_policy: parkrl_core::nn::GaussianPolicy,
    squash: bool,
    reward: RewardStrategy,
    source: PathBuf,
}

#[pymethods]
impl Policy {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Policy> {
        let ckpt = Checkpoint::load(Path::new(path)).map_err(to_py_err)?;
        let (policy, squash) = ckpt.policy();
        Ok(Policy {
            controller_policy: policy.clone(),
            squash,
            reward: ckpt.reward,
            source: PathBuf::from(path),
        })
    }

    /// Action in [-1, 1] for a normalized observation. Deterministic mode
    /// acts on the policy mean; otherwise supply a seed for the noise draw.
    #[pyo3(signature = (obs_normalized, deterministic=true, seed=0))]
    fn act(&self, obs_normalized: Vec<f64>, deterministic: bool, seed: u64) -> PyResult<f64> {
        let head = self
            .controller_policy
            .head(&obs_normalized)
            .map_err(to_py_err)?;
        let pre = if deterministic {
            head.mean
        } else {
            head.mean + head.sigma * SimRng::from_seed(seed).standard_normal()
        };
        Ok(if self.squash {
            pre.tanh()
        } else {
            pre.clamp(-1.0, 1.0)
        })
    }

    /// Run evaluation episodes; returns the deployment report as a dict.
    #[pyo3(signature = (scenario, episodes=100, seed=0, deterministic=true))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        scenario: &Scenario,
        episodes: u64,
        seed: u64,
        deterministic: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut controller = evalstats::PolicyController::new(
            self.controller_policy.clone(),
            self.squash,
            deterministic,
        )
        .map_err(to_py_err)?;
        let report =
            evalstats::evaluate(&mut controller, &scenario.inner, episodes, seed, self.reward)
                .map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("episodes", report.episodes)?;
        d.set_item("success_rate", report.success_rate)?;
        d.set_item("collision_rate", report.collision_rate)?;
        d.set_item("truncation_rate", report.truncation_rate)?;
        d.set_item("avg_final_distance", report.avg_final_distance)?;
        d.set_item("avg_steps", report.avg_steps)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Policy(source={:?}, squash={}, reward={})",
            self.source,
            self.squash,
            self.reward.name()
        )
    }
}

/// Two-sided Welch's t-test with Cohen's d.
#[pyfunction]
fn welch_t<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let r = evalstats::welch_t(&a, &b).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("t_statistic", r.t_statistic)?;
    d.set_item("degrees_of_freedom", r.degrees_of_freedom)?;
    d.set_item("p_value", r.p_value)?;
    d.set_item("cohens_d", r.cohens_d)?;
    Ok(d)
}

/// Read the mean-episode-reward series from a metrics CSV at a step stride.
#[pyfunction]
#[pyo3(signature = (path, stride=2000))]
fn reward_series(path: &str, stride: u64) -> PyResult<Vec<f64>> {
    evalstats::reward_series(Path::new(path), stride).map_err(to_py_err)
}

/// Run one experiment config end to end; returns artifact paths.
#[pyfunction]
#[pyo3(signature = (config_path, seed=None, overrides=vec![]))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_path: &str,
    seed: Option<u64>,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let parsed = hconfig::load_config_file(Path::new(config_path), &overrides, seed)
        .map_err(to_py_err)?;
    let cfg = match parsed {
        hconfig::ConfigFile::Single(cfg) => *cfg,
        hconfig::ConfigFile::Batch(_) => {
            return Err(PyValueError::new_err(
                "run_experiment takes a single-run config, not a batch file",
            ))
        }
    };
    let artifacts = harness::run_experiment(&cfg).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("run_dir", artifacts.run_dir.display().to_string())?;
    d.set_item("metrics", artifacts.metrics_path.display().to_string())?;
    d.set_item(
        "final_checkpoint",
        artifacts.final_checkpoint.display().to_string(),
    )?;
    d.set_item("wall_clock_minutes", artifacts.wall_clock_minutes)?;
    d.set_item("env_steps", artifacts.env_steps)?;
    d.set_item("episodes_completed", artifacts.episodes_completed)?;
    Ok(d)
}

#[pymodule]
fn parkrl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("OBS_DIM", env::OBS_DIM)?;
    m.add_class::<Scenario>()?;
    m.add_class::<Environment>()?;
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(welch_t, m)?)?;
    m.add_function(wrap_pyfunction!(reward_series, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
