//! Python bindings: configuration, the braking environment, Q-networks,
//! training and evaluation, and the link codec and frame transform.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use vve_core::agent::network::QNetwork as CoreNetwork;
use vve_core::agent::train::train as core_train;
use vve_core::config::PipelineConfig;
use vve_core::link::codec::{self, PosePayload};
use vve_core::link::transform::{inverse_transform as core_inverse, transform_pose as core_transform};
use vve_core::link::{FrameTransform, Payload, WireMessage};
use vve_core::pipeline::{self, Policy, RunDir};
use vve_core::sim::engine::Env as CoreEnv;
use vve_core::sim::observation::AgentObservation;
use vve_core::tire::{dugoff_forces as core_dugoff, SlipState, TireParams};
use vve_core::vehicle::{state_derivative as core_derivative, ControlInput, TireForces, VehicleParams, VehicleState};
use vve_core::CoreError;

fn err(e: CoreError) -> PyErr {
    match e {
        CoreError::InvalidInput(_) | CoreError::Config { .. } | CoreError::ModelIncompatible(_) => {
            PyValueError::new_err(e.to_string())
        }
        CoreError::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Serializable value to a plain Python object through the json module.
fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Resolved pipeline configuration.
#[pyclass(module = "vvepipe", skip_from_py_object)]
#[derive(Clone, Default)]
struct Config {
    inner: PipelineConfig,
}

#[pymethods]
impl Config {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Config {
            inner: PipelineConfig::from_toml(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Config {
            inner: PipelineConfig::load(&path).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Applies one `section.key=value` override.
    fn set(&mut self, assignment: &str) -> PyResult<()> {
        self.inner.apply_override(assignment).map_err(err)
    }
}

fn obs_tuple(obs: &AgentObservation) -> (Vec<f64>, Vec<f64>) {
    (obs.grid.to_vec(), obs.fusion())
}

/// The crosswalk braking task. Observations are `(grid, fusion)` lists.
#[pyclass(module = "vvepipe")]
struct Env {
    inner: CoreEnv,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&Config>) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
        Ok(Env {
            inner: CoreEnv::new(cfg.env()).map_err(err)?,
        })
    }

    #[getter]
    fn action_count(&self) -> usize {
        self.inner.task.action_count()
    }

    fn reset(&mut self, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        Ok(obs_tuple(&self.inner.reset(seed).map_err(err)?))
    }

    /// Returns `(grid, fusion, reward, terminal)`; `terminal` is None while
    /// the episode runs.
    fn step(&mut self, action: usize) -> PyResult<(Vec<f64>, Vec<f64>, f64, Option<&'static str>)> {
        let r = self.inner.step(action).map_err(err)?;
        let (g, f) = obs_tuple(&r.obs);
        Ok((g, f, r.reward, r.terminal.map(|t| t.as_str())))
    }

    /// Ego `(x, y, psi, v, beta, r)`.
    fn ego(&self) -> (f64, f64, f64, f64, f64, f64) {
        let s = self.inner.world.plant.vehicle;
        (s.x, s.y, s.psi, s.v, s.beta, s.r)
    }

    fn time(&self) -> f64 {
        self.inner.task.cfg.sim.time_at(self.inner.world.step)
    }
}

#[pyclass(module = "vvepipe", from_py_object)]
#[derive(Clone)]
struct QNetwork {
    inner: CoreNetwork,
}

#[pymethods]
impl QNetwork {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(QNetwork {
            inner: CoreNetwork::load(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(QNetwork {
            inner: CoreNetwork::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn forward(&self, grid: Vec<f64>, fusion: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&grid, &fusion).map_err(err)
    }

    fn checksum(&self) -> u64 {
        self.inner.checksum()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }
}

/// Trains from scratch; returns the network and the per-episode log.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None, episodes=None))]
fn train(
    py: Python<'_>,
    config: Option<&Config>,
    seed: Option<u64>,
    episodes: Option<usize>,
) -> PyResult<(QNetwork, Py<PyAny>)> {
    let mut cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    if let Some(n) = episodes {
        cfg.agent.episodes = n;
    }
    cfg.validate().map_err(err)?;
    let seed = seed.unwrap_or(cfg.sim.seed);
    let out = py
        .detach(|| {
            let mut env = CoreEnv::new(cfg.env())?;
            core_train(&mut env, &cfg.agent, seed)
        })
        .map_err(err)?;
    Ok((QNetwork { inner: out.net }, to_py(py, &out.log)?))
}

fn policy_from(policy: &Bound<'_, PyAny>) -> PyResult<Policy> {
    if let Ok(net) = policy.extract::<QNetwork>() {
        return Ok(Policy::Model(Box::new(net.inner)));
    }
    Policy::parse(&policy.extract::<String>()?).map_err(err)
}

/// Greedy rollouts of a network, a model file path, or one of
/// `hard-brake`, `never-brake`, `reference`. Writes CSV/JSON into `out_dir`.
#[pyfunction]
#[pyo3(signature = (policy, out_dir, config=None, seed=None, runs=1))]
fn mil_eval(
    py: Python<'_>,
    policy: &Bound<'_, PyAny>,
    out_dir: PathBuf,
    config: Option<&Config>,
    seed: Option<u64>,
    runs: usize,
) -> PyResult<Py<PyAny>> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let policy = policy_from(policy)?;
    let seed = seed.unwrap_or(cfg.sim.seed);
    let summary = py
        .detach(|| {
            let mut dir = RunDir::create(&out_dir)?;
            pipeline::mil_eval(&cfg, &policy, seed, runs, &mut dir)
        })
        .map_err(err)?;
    to_py(py, &summary)
}

/// Replays a `t_us,x,y,psi,v` trace into the virtual frame.
#[pyfunction]
#[pyo3(signature = (trace, out_dir, config=None))]
fn vve_replay(py: Python<'_>, trace: PathBuf, out_dir: PathBuf, config: Option<&Config>) -> PyResult<Py<PyAny>> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let report = py
        .detach(|| {
            let mut dir = RunDir::create(&out_dir)?;
            pipeline::vve_replay(&cfg, &trace, &mut dir)
        })
        .map_err(err)?;
    to_py(py, &report)
}

/// Longitudinal and lateral force `(f_x, f_y)` of one tire.
#[pyfunction]
fn dugoff_forces(s: f64, alpha: f64, f_z: f64, mu: f64) -> PyResult<(f64, f64)> {
    let out = core_dugoff(&SlipState { s, alpha, f_z, mu }, &TireParams::default()).map_err(err)?;
    Ok((out.f_x, out.f_y))
}

/// `(beta_dot, v_dot, r_dot)` with default chassis parameters. `forces`
/// is `(f_xf, f_xr, f_yf, f_yr)`.
#[pyfunction]
#[pyo3(signature = (beta, v, r, forces, delta_f=0.0, delta_r=0.0, m_zd=0.0, f_load=0.0))]
#[allow(clippy::too_many_arguments)]
fn state_derivative(
    beta: f64,
    v: f64,
    r: f64,
    forces: (f64, f64, f64, f64),
    delta_f: f64,
    delta_r: f64,
    m_zd: f64,
    f_load: f64,
) -> PyResult<(f64, f64, f64)> {
    let d = core_derivative(
        &VehicleState { beta, v, r, ..Default::default() },
        &TireForces {
            f_xf: forces.0,
            f_xr: forces.1,
            f_yf: forces.2,
            f_yr: forces.3,
        },
        &ControlInput {
            delta_f,
            delta_r,
            m_zd,
            ..Default::default()
        },
        f_load,
        &VehicleParams::default(),
    )
    .map_err(err)?;
    Ok((d.beta_dot, d.v_dot, d.r_dot))
}

fn pose(p: (f64, f64, f64)) -> PosePayload {
    PosePayload {
        x: p.0,
        y: p.1,
        psi: p.2,
        ..Default::default()
    }
}

/// Maps a real-frame `(x, y, psi)` into the virtual frame.
#[pyfunction]
fn transform_pose(p: (f64, f64, f64), origin: (f64, f64), rotation: f64, offset: (f64, f64)) -> (f64, f64, f64) {
    let q = core_transform(&pose(p), &FrameTransform::new(origin, rotation, offset));
    (q.x, q.y, q.psi)
}

#[pyfunction]
fn inverse_transform(p: (f64, f64, f64), origin: (f64, f64), rotation: f64, offset: (f64, f64)) -> (f64, f64, f64) {
    let q = core_inverse(&pose(p), &FrameTransform::new(origin, rotation, offset));
    (q.x, q.y, q.psi)
}

#[pyfunction]
fn encode_heartbeat(py: Python<'_>, seq: u32, t_us: u64) -> PyResult<Bound<'_, PyBytes>> {
    let b = codec::encode(&WireMessage::new(seq, t_us, Payload::Heartbeat))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(PyBytes::new(py, &b))
}

/// Header fields of a datagram as `(type, seq, t_us)`; raises ValueError on
/// anything the codec rejects.
#[pyfunction]
fn decode_header(bytes: &[u8]) -> PyResult<(u8, u32, u64)> {
    let m = codec::decode(bytes).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((m.payload.msg_type() as u8, m.seq, m.t_us))
}

#[pymodule]
fn vvepipe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Config>()?;
    m.add_class::<Env>()?;
    m.add_class::<QNetwork>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(mil_eval, m)?)?;
    m.add_function(wrap_pyfunction!(vve_replay, m)?)?;
    m.add_function(wrap_pyfunction!(dugoff_forces, m)?)?;
    m.add_function(wrap_pyfunction!(state_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(transform_pose, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_transform, m)?)?;
    m.add_function(wrap_pyfunction!(encode_heartbeat, m)?)?;
    m.add_function(wrap_pyfunction!(decode_header, m)?)?;
    Ok(())
}
