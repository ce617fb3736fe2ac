//! Python bindings: channel sampling, link physics, rewards, the episodic
//! environment, policy networks, PPO training and the experiment harness.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use coexist_ppo::env::{self as cenv, EnvConfig, ObservationKind, SpectrumEnv};
use coexist_ppo::geometry::{self, ChannelParams, GainMatrices, LinkMode, Matrix, Topology};
use coexist_ppo::harness::{self, ExperimentConfig, METRIC_COLUMNS};
use coexist_ppo::neural::{GaussianPolicyNet, Parameters};
use coexist_ppo::ppo::{self, AgentMode, Checkpoint, IterationMetrics, PpoHyper, Trainer as CoreTrainer, Transition};
use coexist_ppo::radio::{self, PowerAllocation, RadioConfig, RxDistortion};
use coexist_ppo::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::OutputExists(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn kind_from_str(s: &str) -> PyResult<ObservationKind> {
    match s {
        "primary" => Ok(ObservationKind::Primary),
        "secondary" => Ok(ObservationKind::Secondary),
        "centralized_dist" => Ok(ObservationKind::CentralizedDist),
        "centralized_full_csi" => Ok(ObservationKind::CentralizedFullCsi),
        _ => Err(PyValueError::new_err(format!(
            "unknown observation kind '{s}' (primary, secondary, centralized_dist, centralized_full_csi)"
        ))),
    }
}

fn rx_from_str(s: &str) -> PyResult<RxDistortion> {
    match s {
        "gain_weighted" => Ok(RxDistortion::GainWeighted),
        "unweighted" => Ok(RxDistortion::Unweighted),
        _ => Err(PyValueError::new_err(format!(
            "unknown rx_distortion '{s}' (gain_weighted or unweighted)"
        ))),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(py_err)
}

fn metrics_dict<'py>(py: Python<'py>, m: &IterationMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iter", m.iter)?;
    let values = harness::MetricsRow::from_iteration(0, m).values();
    for (name, v) in METRIC_COLUMNS.iter().zip(values) {
        d.set_item(*name, v)?;
    }
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (d, d0=18.0, d1=36.0))]
fn los_probability(d: f64, d0: f64, d1: f64) -> PyResult<f64> {
    let params = ChannelParams {
        d0,
        d1,
        ..ChannelParams::default()
    };
    geometry::los_probability(d, &params).map_err(py_err)
}

/// Mean path-loss gain at distance `d` (1 m floor applied).
#[pyfunction]
#[pyo3(signature = (d, los=true))]
fn path_loss(d: f64, los: bool) -> f64 {
    let mode = if los { LinkMode::Los } else { LinkMode::Nlos };
    geometry::path_loss(d, mode, &ChannelParams::default())
}

#[pyfunction]
fn noise_power_from_psd(psd_dbm_per_hz: f64, bandwidth_hz: f64) -> f64 {
    radio::noise_power_from_psd(psd_dbm_per_hz, bandwidth_hz)
}

/// Returns `{"p_tx", "p_rx", "s_tx", "s_rx"}` as lists of `(x, y)`.
#[pyfunction]
#[pyo3(signature = (k_p, k_s, seed, radius=100.0))]
fn sample_topology<'py>(py: Python<'py>, k_p: usize, k_s: usize, seed: u64, radius: f64) -> PyResult<Bound<'py, PyDict>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = geometry::sample_topology(&mut rng, k_p, k_s, radius).map_err(py_err)?;
    topology_dict(py, &t)
}

fn topology_dict<'py>(py: Python<'py>, t: &Topology) -> PyResult<Bound<'py, PyDict>> {
    let pts = |v: &[geometry::Point]| v.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>();
    let d = PyDict::new(py);
    d.set_item("p_tx", pts(&t.p_tx))?;
    d.set_item("p_rx", pts(&t.p_rx))?;
    d.set_item("s_tx", pts(&t.s_tx))?;
    d.set_item("s_rx", pts(&t.s_rx))?;
    d.set_item("radius", t.radius)?;
    Ok(d)
}

fn gains_dict<'py>(py: Python<'py>, g: &GainMatrices) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("h_pp", g.h_pp.to_rows())?;
    d.set_item("h_ps", g.h_ps.to_rows())?;
    d.set_item("h_sp", g.h_sp.to_rows())?;
    d.set_item("h_ss", g.h_ss.to_rows())?;
    Ok(d)
}

/// Samples a topology and one draw of all four gain matrices
/// (`h[j][k]` is transmitter `j` to receiver `k`).
#[pyfunction]
#[pyo3(signature = (k_p, k_s, seed))]
fn sample_gains<'py>(py: Python<'py>, k_p: usize, k_s: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = geometry::sample_topology(&mut rng, k_p, k_s, 100.0).map_err(py_err)?;
    let g = geometry::sample_gain_matrices(&t, &ChannelParams::default(), &mut rng);
    gains_dict(py, &g)
}

fn radio_config(kappa: f64, noise_power: Option<f64>, rx_distortion: &str, rate_threshold: f64) -> PyResult<RadioConfig> {
    let mut cfg = RadioConfig {
        kappa_t_p: kappa,
        kappa_r_p: kappa,
        kappa_t_s: kappa,
        kappa_r_s: kappa,
        rx_distortion: rx_from_str(rx_distortion)?,
        rate_threshold,
        ..RadioConfig::default()
    };
    if let Some(n) = noise_power {
        cfg.noise_power = n;
    }
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Per-link SINDR, rate, EE and the primary NACK count for one power
/// allocation.
#[pyfunction]
#[pyo3(signature = (h_pp, h_ps, h_sp, h_ss, p_primary, p_secondary, kappa=0.1, noise_power=None, rx_distortion="gain_weighted", rate_threshold=0.5))]
#[allow(clippy::too_many_arguments)]
fn link_metrics<'py>(
    py: Python<'py>,
    h_pp: Vec<Vec<f64>>,
    h_ps: Vec<Vec<f64>>,
    h_sp: Vec<Vec<f64>>,
    h_ss: Vec<Vec<f64>>,
    p_primary: Vec<f64>,
    p_secondary: Vec<f64>,
    kappa: f64,
    noise_power: Option<f64>,
    rx_distortion: &str,
    rate_threshold: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = radio_config(kappa, noise_power, rx_distortion, rate_threshold)?;
    let h = GainMatrices {
        h_pp: matrix(h_pp)?,
        h_ps: matrix(h_ps)?,
        h_sp: matrix(h_sp)?,
        h_ss: matrix(h_ss)?,
    };
    let alloc = PowerAllocation::new(p_primary, p_secondary, &cfg).map_err(py_err)?;
    let m = radio::link_metrics(&h, &alloc, &cfg).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("sindr_p", m.sindr_p)?;
    d.set_item("sindr_s", m.sindr_s)?;
    d.set_item("rate_p", m.rate_p)?;
    d.set_item("rate_s", m.rate_s)?;
    d.set_item("ee_s", m.ee_s)?;
    d.set_item("nqos_p", m.nqos_p)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (rates, rate_threshold=0.5, delta_p=0.0))]
fn reward_primary(rates: Vec<f64>, rate_threshold: f64, delta_p: f64) -> f64 {
    cenv::reward_primary(&rates, rate_threshold, delta_p)
}

#[pyfunction]
#[pyo3(signature = (ee, nqos_p, delta_s=0.0))]
fn reward_secondary(ee: Vec<f64>, nqos_p: usize, delta_s: f64) -> f64 {
    cenv::reward_secondary(&ee, nqos_p, delta_s)
}

#[pyfunction]
#[pyo3(signature = (raw, p_max=1.0))]
fn clamp_and_penalize(raw: Vec<f64>, p_max: f64) -> (Vec<f64>, f64) {
    cenv::clamp_and_penalize(&raw, p_max)
}

#[pyfunction]
fn observation_dim(kind: &str, k_p: usize, k_s: usize) -> PyResult<usize> {
    Ok(cenv::observation_dim(kind_from_str(kind)?, k_p, k_s))
}

/// Rewards-to-go and (unnormalized) GAE advantages.
#[pyfunction]
fn compute_gae(
    rewards: Vec<f64>,
    dones: Vec<bool>,
    values: Vec<f64>,
    bootstrap_value: f64,
    gamma: f64,
    lam: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != dones.len() || rewards.len() != values.len() {
        return Err(PyValueError::new_err("rewards, dones and values must have equal length"));
    }
    let trs: Vec<Transition> = rewards
        .iter()
        .zip(&dones)
        .zip(&values)
        .map(|((&reward, &done), &value_pred)| Transition {
            obs: Vec::new(),
            action: Vec::new(),
            log_prob_old: 0.0,
            reward,
            done,
            value_pred,
        })
        .collect();
    ppo::compute_gae(&trs, bootstrap_value, gamma, lam).map_err(py_err)
}

#[pyfunction]
fn clip_envelope(advantage: f64, eps: f64) -> f64 {
    ppo::clip_envelope(advantage, eps)
}

#[pyclass(name = "Env", module = "coexist_ppo_py")]
struct PyEnv {
    env: SpectrumEnv,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (k_p=4, k_s=8, episode_len=500, seed=0))]
    fn new(k_p: usize, k_s: usize, episode_len: usize, seed: u64) -> PyResult<Self> {
        let cfg = EnvConfig {
            k_p,
            k_s,
            episode_len,
            ..EnvConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = SpectrumEnv::new(cfg, &mut rng).map_err(py_err)?;
        Ok(Self { env, rng })
    }

    fn reset(&mut self) {
        self.env.reset(&mut self.rng);
    }

    fn observe(&self, kind: &str) -> PyResult<Vec<f64>> {
        Ok(self.env.observe(kind_from_str(kind)?).values)
    }

    /// Applies raw (unclamped) powers; returns rewards, `done` and metrics.
    fn step<'py>(&mut self, py: Python<'py>, p_primary: Vec<f64>, p_secondary: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let out = self.env.step(&p_primary, &p_secondary, &mut self.rng).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("reward_p", out.reward_p)?;
        d.set_item("reward_s", out.reward_s)?;
        d.set_item("done", out.done)?;
        d.set_item("applied_p", out.applied_p)?;
        d.set_item("applied_s", out.applied_s)?;
        let m = &out.metrics;
        d.set_item("rate_p", m.rate_p.clone())?;
        d.set_item("rate_s", m.rate_s.clone())?;
        d.set_item("ee_s", m.ee_s.clone())?;
        d.set_item("nqos_p", m.nqos_p)?;
        d.set_item("delta_p", m.delta_p)?;
        d.set_item("delta_s", m.delta_s)?;
        Ok(d)
    }

    fn gains<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        gains_dict(py, &self.env.world().gains)
    }

    fn topology<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        topology_dict(py, &self.env.world().topology)
    }

    #[getter]
    fn step_index(&self) -> usize {
        self.env.world().step_index
    }

    #[getter]
    fn done(&self) -> bool {
        self.env.world().is_done()
    }
}

#[pyclass(name = "PolicyNet", module = "coexist_ppo_py")]
struct PyPolicyNet {
    net: GaussianPolicyNet,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyPolicyNet {
    #[new]
    #[pyo3(signature = (obs_dim, action_dim, hidden=vec![64, 64], seed=0))]
    fn new(obs_dim: usize, action_dim: usize, hidden: Vec<usize>, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = GaussianPolicyNet::new(&mut rng, obs_dim, &hidden, action_dim).map_err(py_err)?;
        Ok(Self { net, rng })
    }

    /// `(mean, log_std)` with the log-std clamped.
    fn forward(&self, obs: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let out = self.net.forward(&obs).map_err(py_err)?;
        Ok((out.mean, out.log_std))
    }

    fn sample(&mut self, obs: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
        self.net.sample_action(&obs, &mut self.rng).map_err(py_err)
    }

    fn log_prob(&self, obs: Vec<f64>, action: Vec<f64>) -> PyResult<f64> {
        self.net.log_prob(&obs, &action).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn parameters(&self) -> Vec<f64> {
        self.net.to_flat()
    }
}

#[pyclass(name = "Trainer", module = "coexist_ppo_py")]
struct PyTrainer {
    inner: CoreTrainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (mode="coexist_dist", seed=0, k_p=2, k_s=2, iters=300, batch=200, episode_len=200))]
    fn new(mode: &str, seed: u64, k_p: usize, k_s: usize, iters: usize, batch: usize, episode_len: usize) -> PyResult<Self> {
        let mode: AgentMode = mode.parse().map_err(py_err)?;
        let env = EnvConfig {
            k_p,
            k_s,
            ..EnvConfig::default()
        };
        let hyper = PpoHyper {
            iters,
            batch,
            episode_len,
            ..PpoHyper::default()
        };
        let inner = CoreTrainer::new(env, hyper, mode, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(py_err)?;
        Ok(Self {
            inner: CoreTrainer::from_checkpoint(ckpt).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.checkpoint().save(&path).map_err(py_err)
    }

    /// One rollout-and-update iteration; returns its metric means.
    fn run_iteration<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let inner = &mut self.inner;
        let report = py.detach(|| inner.run_iteration()).map_err(py_err)?;
        metrics_dict(py, &report.metrics)
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.inner.iteration()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode().as_str()
    }
}

fn resolve_config(config_text: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<ExperimentConfig> {
    let mut entries = harness::parse_config_text(config_text, "<python>").map_err(py_err)?;
    if let Some(o) = overrides {
        let mut text = String::new();
        for (k, v) in o.iter() {
            text.push_str(&format!("{}={}\n", k.str()?, v.str()?));
        }
        entries.extend(harness::parse_config_text(&text, "<overrides>").map_err(py_err)?);
    }
    ExperimentConfig::resolve(&entries).map_err(py_err)
}

/// Runs every seed of a `key=value` configuration; returns the output
/// directory.
#[pyfunction]
#[pyo3(signature = (config_text="", overrides=None))]
fn run_experiment(py: Python<'_>, config_text: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<PathBuf> {
    let cfg = resolve_config(config_text, overrides)?;
    let out = py.detach(|| harness::run_experiment(&cfg)).map_err(py_err)?;
    Ok(out.out_dir)
}

/// Last-window means per CSV: `{file: {metric: mean, ...}}`.
#[pyfunction]
#[pyo3(signature = (dir, window=0.1))]
fn summarize<'py>(py: Python<'py>, dir: PathBuf, window: f64) -> PyResult<Bound<'py, PyDict>> {
    let s = harness::summarize(&dir, window).map_err(py_err)?;
    let out = PyDict::new(py);
    for line in &s.lines {
        let d = PyDict::new(py);
        d.set_item("rows", line.rows)?;
        d.set_item("window_rows", line.window_rows)?;
        for (name, v) in METRIC_COLUMNS.iter().zip(line.means) {
            d.set_item(*name, v)?;
        }
        out.set_item(&line.file, d)?;
    }
    Ok(out)
}

#[pymodule]
fn coexist_ppo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(los_probability, m)?)?;
    m.add_function(wrap_pyfunction!(path_loss, m)?)?;
    m.add_function(wrap_pyfunction!(noise_power_from_psd, m)?)?;
    m.add_function(wrap_pyfunction!(sample_topology, m)?)?;
    m.add_function(wrap_pyfunction!(sample_gains, m)?)?;
    m.add_function(wrap_pyfunction!(link_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(reward_primary, m)?)?;
    m.add_function(wrap_pyfunction!(reward_secondary, m)?)?;
    m.add_function(wrap_pyfunction!(clamp_and_penalize, m)?)?;
    m.add_function(wrap_pyfunction!(observation_dim, m)?)?;
    m.add_function(wrap_pyfunction!(compute_gae, m)?)?;
    m.add_function(wrap_pyfunction!(clip_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyPolicyNet>()?;
    m.add_class::<PyTrainer>()?;
    Ok(())
}
