//! PPO with a clipped surrogate, GAE advantages and an MSE critic, run for
//! two coexisting agents (primary and secondary) or one centralized agent.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{observation_dim, EnvConfig, ObservationKind, SpectrumEnv};
use crate::error::{check_len, invalid, Error, Result};
use crate::geometry::Topology;
use crate::neural::{AdamState, GaussianPolicyNet, Parameters, ValueNet, DEFAULT_HIDDEN};

const ADV_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoHyper {
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    /// Outer iterations L.
    pub iters: usize,
    /// Transitions per iteration N.
    pub batch: usize,
    /// Episode length T; N must be a multiple of T.
    pub episode_len: usize,
    pub update_epochs: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub hidden: Vec<usize>,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            lam: 0.94,
            clip: 0.1,
            iters: 4000,
            batch: 500,
            episode_len: 500,
            update_epochs: 10,
            lr_policy: 3e-4,
            lr_value: 1e-3,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(invalid(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("lam", self.lam)?;
        unit("clip", self.clip)?;
        if self.iters == 0 || self.batch == 0 || self.episode_len == 0 || self.update_epochs == 0 {
            return Err(invalid("iters, batch, episode_len and update_epochs must be >= 1"));
        }
        if self.batch % self.episode_len != 0 {
            return Err(invalid(format!(
                "batch ({}) must be a multiple of episode_len ({})",
                self.batch, self.episode_len
            )));
        }
        if !(self.lr_policy > 0.0 && self.lr_value > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(invalid("hidden layer sizes must be non-empty and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob_old: f64,
    pub reward: f64,
    pub done: bool,
    pub value_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryBatch {
    pub transitions: Vec<Transition>,
    /// `V(s_N)`, used only when the last transition is not terminal.
    pub bootstrap_value: f64,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn new(transitions: Vec<Transition>, bootstrap_value: f64) -> Self {
        Self {
            transitions,
            bootstrap_value,
            returns: Vec::new(),
            advantages: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Fills rewards-to-go and normalized GAE advantages.
    pub fn finish(&mut self, gamma: f64, lam: f64) -> Result<()> {
        let (r, mut a) = compute_gae(&self.transitions, self.bootstrap_value, gamma, lam)?;
        normalize_advantages(&mut a);
        self.returns = r;
        self.advantages = a;
        Ok(())
    }
}

/// Backward recursion over the batch:
///
/// ```text
/// R[t] = r_t + gamma (1 - d_t) R[t+1]
/// delta_t = r_t + gamma (1 - d_t) V(s_{t+1}) - V(s_t)
/// A[t] = delta_t + gamma lam (1 - d_t) A[t+1]
/// ```
///
/// `R[N]` is the bootstrap value and `A[N]` is zero.
pub fn compute_gae(
    transitions: &[Transition],
    bootstrap_value: f64,
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = transitions.len();
    if n == 0 {
        return Err(invalid("cannot compute advantages of an empty batch"));
    }
    let mut returns = vec![0.0; n];
    let mut advantages = vec![0.0; n];
    let mut next_return = bootstrap_value;
    let mut next_value = bootstrap_value;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let tr = &transitions[t];
        let live = if tr.done { 0.0 } else { 1.0 };
        returns[t] = tr.reward + gamma * live * next_return;
        let delta = tr.reward + gamma * live * next_value - tr.value_pred;
        advantages[t] = delta + gamma * lam * live * next_adv;
        next_return = returns[t];
        next_value = tr.value_pred;
        next_adv = advantages[t];
    }
    Ok((returns, advantages))
}

/// Zero mean, unit (population) std, std floored at 1e-8.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(ADV_STD_FLOOR);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// `c(eps, A) = (1 + sgn(A) eps) A`, with `sgn(0) = 0`.
pub fn clip_envelope(advantage: f64, eps: f64) -> f64 {
    let sgn = if advantage > 0.0 {
        1.0
    } else if advantage < 0.0 {
        -1.0
    } else {
        0.0
    };
    (1.0 + sgn * eps) * advantage
}

#[derive(Debug, Clone)]
pub struct PolicyObjective {
    pub objective: f64,
    /// d objective / d theta.
    pub grads: GaussianPolicyNet,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

/// `(1/N) sum_t min(ratio_t A_t, c(eps, A_t))` with
/// `ratio_t = exp(log pi(a_t|s_t) - log_prob_old_t)`.
pub fn policy_objective(policy: &GaussianPolicyNet, batch: &TrajectoryBatch, clip: f64) -> Result<PolicyObjective> {
    check_len("batch advantages", batch.len(), batch.advantages.len())?;
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let n = batch.len() as f64;
    let mut grads = policy.zeros_like();
    let mut objective = 0.0;
    let mut ratio_sum = 0.0;
    let mut clipped = 0usize;
    for (tr, &adv) in batch.transitions.iter().zip(&batch.advantages) {
        let envelope = clip_envelope(adv, clip);
        let mut ratio = 0.0;
        let mut is_clipped = false;
        policy.log_prob_backward_with(&tr.obs, &tr.action, &mut grads, |lp| {
            ratio = (lp - tr.log_prob_old).exp();
            is_clipped = ratio * adv > envelope;
            // the envelope does not depend on theta
            if is_clipped {
                0.0
            } else {
                adv * ratio / n
            }
        })?;
        if is_clipped {
            clipped += 1;
            objective += envelope / n;
        } else {
            objective += ratio * adv / n;
        }
        ratio_sum += ratio;
    }
    Ok(PolicyObjective {
        objective,
        grads,
        mean_ratio: ratio_sum / n,
        clip_fraction: clipped as f64 / n,
    })
}

/// `(1/N) sum_t (V(s_t) - R[t])^2` and its gradient.
pub fn value_objective(value: &ValueNet, batch: &TrajectoryBatch) -> Result<(f64, ValueNet)> {
    check_len("batch returns", batch.len(), batch.returns.len())?;
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let n = batch.len() as f64;
    let mut grads = value.zeros_like();
    let mut loss = 0.0;
    for (tr, &target) in batch.transitions.iter().zip(&batch.returns) {
        value.forward_backward_with(&tr.obs, &mut grads, |v| {
            let err = v - target;
            loss += err * err / n;
            2.0 * err / n
        })?;
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoAgent {
    pub policy: GaussianPolicyNet,
    pub value: ValueNet,
    pub policy_opt: AdamState,
    pub value_opt: AdamState,
}

impl PpoAgent {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, obs_dim: usize, action_dim: usize, hyper: &PpoHyper) -> Result<Self> {
        let policy = GaussianPolicyNet::new(rng, obs_dim, &hyper.hidden, action_dim)?;
        let value = ValueNet::new(rng, obs_dim, &hyper.hidden)?;
        Ok(Self {
            policy_opt: AdamState::new(&policy, hyper.lr_policy),
            value_opt: AdamState::new(&value, hyper.lr_value),
            policy,
            value,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub policy_objective: f64,
}

/// `update_epochs` full-batch Adam steps: ascent on the clipped surrogate,
/// descent on the value MSE. Stats are from the last epoch, before its step.
pub fn ppo_update(agent: &mut PpoAgent, batch: &TrajectoryBatch, hyper: &PpoHyper) -> Result<UpdateStats> {
    let mut stats = UpdateStats::default();
    for epoch in 0..hyper.update_epochs {
        let mut obj = policy_objective(&agent.policy, batch, hyper.clip)?;
        if !obj.objective.is_finite() || !obj.grads.all_finite() {
            return Err(Error::NonFinite(format!(
                "policy objective {} at epoch {epoch}",
                obj.objective
            )));
        }
        for s in obj.grads.param_slices_mut() {
            s.iter_mut().for_each(|g| *g = -*g);
        }
        agent.policy_opt.step(&mut agent.policy, &obj.grads)?;

        let (loss, vgrads) = value_objective(&agent.value, batch)?;
        if !loss.is_finite() || !vgrads.all_finite() {
            return Err(Error::NonFinite(format!("value loss {loss} at epoch {epoch}")));
        }
        agent.value_opt.step(&mut agent.value, &vgrads)?;

        stats = UpdateStats {
            mean_ratio: obj.mean_ratio,
            clip_fraction: obj.clip_fraction,
            value_loss: loss,
            policy_objective: obj.objective,
        };
    }
    if !agent.policy.all_finite() || !agent.value.all_finite() {
        return Err(Error::NonFinite("network parameters after update".into()));
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentMode {
    /// Separate primary and secondary agents, each seeing only its own
    /// system's distances.
    CoexistDist,
    CentralizedDist,
    CentralizedFullCsi,
}

impl AgentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentMode::CoexistDist => "coexist_dist",
            AgentMode::CentralizedDist => "centralized_dist",
            AgentMode::CentralizedFullCsi => "centralized_full_csi",
        }
    }

    pub fn agent_count(self) -> usize {
        match self {
            AgentMode::CoexistDist => 2,
            _ => 1,
        }
    }

    fn centralized_kind(self) -> ObservationKind {
        match self {
            AgentMode::CentralizedFullCsi => ObservationKind::CentralizedFullCsi,
            _ => ObservationKind::CentralizedDist,
        }
    }
}

impl fmt::Display for AgentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coexist_dist" => Ok(AgentMode::CoexistDist),
            "centralized_dist" => Ok(AgentMode::CentralizedDist),
            "centralized_full_csi" => Ok(AgentMode::CentralizedFullCsi),
            _ => Err(invalid(format!(
                "unknown mode '{s}' (expected coexist_dist, centralized_dist or centralized_full_csi)"
            ))),
        }
    }
}

/// Per-iteration means over the N collected steps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    pub reward_p: f64,
    pub reward_s: f64,
    pub sum_rate_p: f64,
    pub sum_rate_s: f64,
    pub sum_ee_s: f64,
    pub sum_power_p: f64,
    pub sum_power_s: f64,
    pub nqos_p: f64,
    pub delta_p: f64,
    pub delta_s: f64,
    pub active_p: f64,
    pub active_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub metrics: IterationMetrics,
    /// One entry per agent, primary first in coexisting mode.
    pub updates: Vec<UpdateStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos: u128,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    fn restore(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to resume a run bit-exactly between iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub mode: AgentMode,
    pub iteration: usize,
    pub env: EnvConfig,
    pub hyper: PpoHyper,
    pub base_topology: Topology,
    pub agents: Vec<PpoAgent>,
    rng: RngState,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let ckpt: Self = serde_json::from_reader(f)?;
        if ckpt.version != 1 {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: format!("unsupported checkpoint version {}", ckpt.version),
            });
        }
        Ok(ckpt)
    }
}

pub struct Trainer {
    mode: AgentMode,
    env: SpectrumEnv,
    agents: Vec<PpoAgent>,
    hyper: PpoHyper,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl Trainer {
    /// The run's episode length is taken from `hyper`.
    pub fn new(mut env_cfg: EnvConfig, hyper: PpoHyper, mode: AgentMode, seed: u64) -> Result<Self> {
        hyper.validate()?;
        env_cfg.episode_len = hyper.episode_len;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = SpectrumEnv::new(env_cfg, &mut rng)?;
        let (k_p, k_s) = (env_cfg.k_p, env_cfg.k_s);
        let agents = match mode {
            AgentMode::CoexistDist => vec![
                PpoAgent::new(&mut rng, observation_dim(ObservationKind::Primary, k_p, k_s), k_p, &hyper)?,
                PpoAgent::new(&mut rng, observation_dim(ObservationKind::Secondary, k_p, k_s), k_s, &hyper)?,
            ],
            _ => vec![PpoAgent::new(
                &mut rng,
                observation_dim(mode.centralized_kind(), k_p, k_s),
                k_p + k_s,
                &hyper,
            )?],
        };
        Ok(Self {
            mode,
            env,
            agents,
            hyper,
            rng,
            iteration: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.hyper.validate()?;
        if ckpt.agents.len() != ckpt.mode.agent_count() {
            return Err(invalid("checkpoint agent count does not match its mode"));
        }
        let env = SpectrumEnv::restore(ckpt.env, ckpt.base_topology)?;
        Ok(Self {
            mode: ckpt.mode,
            env,
            agents: ckpt.agents,
            hyper: ckpt.hyper,
            rng: ckpt.rng.restore(),
            iteration: ckpt.iteration,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: 1,
            mode: self.mode,
            iteration: self.iteration,
            env: *self.env.config(),
            hyper: self.hyper.clone(),
            base_topology: self.env.base_topology().clone(),
            agents: self.agents.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn mode(&self) -> AgentMode {
        self.mode
    }

    pub fn agents(&self) -> &[PpoAgent] {
        &self.agents
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn env(&self) -> &SpectrumEnv {
        &self.env
    }

    /// Rolls out N transitions, then updates each agent on its own batch.
    pub fn run_iteration(&mut self) -> Result<IterationReport> {
        let hyper = &self.hyper;
        let (k_p, k_s) = (self.env.config().k_p, self.env.config().k_s);
        let n_agents = self.agents.len();
        let mut buffers: Vec<Vec<Transition>> = (0..n_agents).map(|_| Vec::with_capacity(hyper.batch)).collect();
        let mut m = IterationMetrics {
            iter: self.iteration,
            ..Default::default()
        };
        let kinds: Vec<ObservationKind> = match self.mode {
            AgentMode::CoexistDist => vec![ObservationKind::Primary, ObservationKind::Secondary],
            mode => vec![mode.centralized_kind()],
        };

        for _ in 0..hyper.batch / hyper.episode_len {
            self.env.reset(&mut self.rng);
            for _ in 0..hyper.episode_len {
                let mut step_inputs = Vec::with_capacity(n_agents);
                for (agent, kind) in self.agents.iter().zip(&kinds) {
                    let obs = self.env.observe(*kind).values;
                    let (action, log_prob) = agent.policy.sample_action(&obs, &mut self.rng)?;
                    let value_pred = agent.value.forward(&obs)?;
                    step_inputs.push((obs, action, log_prob, value_pred));
                }
                let out = match self.mode {
                    AgentMode::CoexistDist => {
                        self.env.step(&step_inputs[0].1, &step_inputs[1].1, &mut self.rng)?
                    }
                    _ => {
                        let a = &step_inputs[0].1;
                        self.env.step(&a[..k_p], &a[k_p..k_p + k_s], &mut self.rng)?
                    }
                };
                let rewards = match self.mode {
                    AgentMode::CoexistDist => vec![out.reward_p, out.reward_s],
                    _ => vec![out.reward_p + out.reward_s],
                };
                for ((buf, (obs, action, log_prob_old, value_pred)), reward) in
                    buffers.iter_mut().zip(step_inputs).zip(rewards)
                {
                    buf.push(Transition {
                        obs,
                        action,
                        log_prob_old,
                        reward,
                        done: out.done,
                        value_pred,
                    });
                }

                let sm = &out.metrics;
                m.reward_p += out.reward_p;
                m.reward_s += out.reward_s;
                m.sum_rate_p += sm.sum_rate_p;
                m.sum_rate_s += sm.sum_rate_s;
                m.sum_ee_s += sm.sum_ee_s;
                m.sum_power_p += sm.sum_power_p;
                m.sum_power_s += sm.sum_power_s;
                m.nqos_p += sm.nqos_p as f64;
                m.delta_p += sm.delta_p;
                m.delta_s += sm.delta_s;
                m.active_p += sm.active_p as f64;
                m.active_s += sm.active_s as f64;
            }
        }
        let n = hyper.batch as f64;
        for v in [
            &mut m.reward_p,
            &mut m.reward_s,
            &mut m.sum_rate_p,
            &mut m.sum_rate_s,
            &mut m.sum_ee_s,
            &mut m.sum_power_p,
            &mut m.sum_power_s,
            &mut m.nqos_p,
            &mut m.delta_p,
            &mut m.delta_s,
            &mut m.active_p,
            &mut m.active_s,
        ] {
            *v /= n;
        }

        let mut updates = Vec::with_capacity(n_agents);
        for ((agent, buf), kind) in self.agents.iter_mut().zip(buffers).zip(&kinds) {
            let last_done = buf.last().is_some_and(|t| t.done);
            let bootstrap = if last_done {
                0.0
            } else {
                agent.value.forward(&self.env.observe(*kind).values)?
            };
            let mut batch = TrajectoryBatch::new(buf, bootstrap);
            batch.finish(self.hyper.gamma, self.hyper.lam)?;
            updates.push(ppo_update(agent, &batch, &self.hyper)?);
        }
        self.iteration += 1;
        Ok(IterationReport { metrics: m, updates })
    }

    /// Runs the remaining iterations up to `hyper.iters`.
    pub fn train<F: FnMut(&IterationReport)>(&mut self, mut sink: F) -> Result<Vec<IterationMetrics>> {
        let mut history = Vec::with_capacity(self.hyper.iters.saturating_sub(self.iteration));
        while self.iteration < self.hyper.iters {
            let report = self.run_iteration()?;
            sink(&report);
            history.push(report.metrics);
        }
        Ok(history)
    }
}

pub fn train<F: FnMut(&IterationReport)>(
    env_cfg: EnvConfig,
    hyper: PpoHyper,
    mode: AgentMode,
    seed: u64,
    sink: F,
) -> Result<Vec<IterationMetrics>> {
    Trainer::new(env_cfg, hyper, mode, seed)?.train(sink)
}
