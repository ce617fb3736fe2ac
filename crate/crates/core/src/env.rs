//! Episodic power-control environment shared by the primary and secondary
//! agents (or a single centralized agent).
//!
//! The world keeps a base topology drawn once per run. Each `reset` jitters
//! it by the mobility bound and draws fresh gains; every `step` evaluates
//! the physics on the current gains, then redraws shadowing and fading for
//! the next step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::geometry::{
    pairwise_distance_features, perturb_topology, sample_gain_matrices, sample_paired_topology,
    ChannelParams, GainMatrices, Matrix, Population, Topology, DEFAULT_PAIR_RING,
};
use crate::radio::{link_metrics, PowerAllocation, RadioConfig};

/// Full-CSI observations encode `log10(gain)` clipped to this range.
const LOG_GAIN_FLOOR: f64 = -20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub k_p: usize,
    pub k_s: usize,
    pub radius: f64,
    pub pair_ring: (f64, f64),
    pub episode_len: usize,
    /// Applied power above `active_threshold * p_max` counts as active.
    pub active_threshold: f64,
    pub channel: ChannelParams,
    pub radio: RadioConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            k_p: 4,
            k_s: 8,
            radius: 100.0,
            pair_ring: DEFAULT_PAIR_RING,
            episode_len: 500,
            active_threshold: 1e-3,
            channel: ChannelParams::default(),
            radio: RadioConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_p == 0 || self.k_s == 0 {
            return Err(invalid("k_p and k_s must be >= 1"));
        }
        if !(self.radius > 0.0) {
            return Err(invalid("radius must be positive"));
        }
        if self.episode_len == 0 {
            return Err(invalid("episode_len must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.active_threshold) {
            return Err(invalid("active_threshold must lie in [0, 1)"));
        }
        self.channel.validate()?;
        self.radio.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObservationKind {
    Primary,
    Secondary,
    CentralizedDist,
    CentralizedFullCsi,
}

pub fn observation_dim(kind: ObservationKind, k_p: usize, k_s: usize) -> usize {
    match kind {
        ObservationKind::Primary => k_p * k_p + k_p,
        ObservationKind::Secondary => k_s * k_s + k_s + 1,
        ObservationKind::CentralizedDist | ObservationKind::CentralizedFullCsi => {
            let n = k_p + k_s;
            n * n + n + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentObservation {
    pub values: Vec<f64>,
    pub kind: ObservationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub topology: Topology,
    pub gains: GainMatrices,
    pub last_rate_p: Vec<f64>,
    pub last_ee_s: Vec<f64>,
    pub last_nqos_p: usize,
    pub step_index: usize,
    pub episode_len: usize,
    dist_p: Vec<f64>,
    dist_s: Vec<f64>,
    dist_all: Vec<f64>,
}

impl WorldState {
    fn new(topology: Topology, gains: GainMatrices, episode_len: usize) -> Self {
        let (k_p, k_s) = (topology.k_p(), topology.k_s());
        Self {
            dist_p: pairwise_distance_features(&topology, Population::Primary),
            dist_s: pairwise_distance_features(&topology, Population::Secondary),
            dist_all: pairwise_distance_features(&topology, Population::All),
            topology,
            gains,
            last_rate_p: vec![0.0; k_p],
            last_ee_s: vec![0.0; k_s],
            last_nqos_p: 0,
            step_index: 0,
            episode_len,
        }
    }

    pub fn is_done(&self) -> bool {
        self.step_index >= self.episode_len
    }

    pub fn observe(&self, kind: ObservationKind) -> AgentObservation {
        let mut values = match kind {
            ObservationKind::Primary => self.dist_p.clone(),
            ObservationKind::Secondary => self.dist_s.clone(),
            ObservationKind::CentralizedDist => self.dist_all.clone(),
            ObservationKind::CentralizedFullCsi => encode_gains(&self.gains.stacked()),
        };
        let nqos = self.last_nqos_p as f64;
        match kind {
            ObservationKind::Primary => values.extend_from_slice(&self.last_rate_p),
            ObservationKind::Secondary => {
                values.extend_from_slice(&self.last_ee_s);
                values.push(nqos);
            }
            ObservationKind::CentralizedDist | ObservationKind::CentralizedFullCsi => {
                values.extend_from_slice(&self.last_rate_p);
                values.extend_from_slice(&self.last_ee_s);
                values.push(nqos);
            }
        }
        AgentObservation { values, kind }
    }
}

/// Maps linear gains to `[-1, 1]` through a clipped `log10`.
pub fn encode_gains(gains: &[f64]) -> Vec<f64> {
    gains
        .iter()
        .map(|g| {
            let l = if *g > 0.0 { g.log10() } else { LOG_GAIN_FLOOR };
            1.0 + 2.0 * l.clamp(LOG_GAIN_FLOOR, 0.0) / -LOG_GAIN_FLOOR
        })
        .collect()
}

pub fn build_centralized_obs(world: &WorldState, full_csi: bool) -> AgentObservation {
    world.observe(if full_csi {
        ObservationKind::CentralizedFullCsi
    } else {
        ObservationKind::CentralizedDist
    })
}

/// Clamps a raw action into `[0, p_max]` and returns the total excess
/// `sum max(0, a - p_max) + max(0, -a)`.
pub fn clamp_and_penalize(raw: &[f64], p_max: f64) -> (Vec<f64>, f64) {
    let mut delta = 0.0;
    let applied = raw
        .iter()
        .map(|&a| {
            delta += (a - p_max).max(0.0) + (-a).max(0.0);
            a.clamp(0.0, p_max)
        })
        .collect();
    (applied, delta)
}

pub fn reward_primary(rate_p: &[f64], rate_threshold: f64, delta_p: f64) -> f64 {
    let margin: f64 = rate_p.iter().map(|r| r - rate_threshold).sum();
    if delta_p > 0.0 {
        0.1 * margin - 5.0 * delta_p
    } else {
        margin
    }
}

/// The in-bounds branch charges `10 * nQoS_p`.
pub fn reward_secondary(ee_s: &[f64], nqos_p: usize, delta_s: f64) -> f64 {
    let ee: f64 = ee_s.iter().sum();
    let n = nqos_p as f64;
    if delta_s > 0.0 {
        0.1 * ee - 2.0 * n - 5.0 * delta_s
    } else {
        ee - 10.0 * n
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepMetrics {
    pub rate_p: Vec<f64>,
    pub rate_s: Vec<f64>,
    pub ee_s: Vec<f64>,
    pub sum_rate_p: f64,
    pub sum_rate_s: f64,
    pub sum_ee_s: f64,
    pub sum_power_p: f64,
    pub sum_power_s: f64,
    pub nqos_p: usize,
    pub delta_p: f64,
    pub delta_s: f64,
    pub active_p: usize,
    pub active_s: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward_p: f64,
    pub reward_s: f64,
    pub done: bool,
    pub applied_p: Vec<f64>,
    pub applied_s: Vec<f64>,
    pub metrics: StepMetrics,
}

#[derive(Debug, Clone)]
pub struct SpectrumEnv {
    cfg: EnvConfig,
    base: Topology,
    world: WorldState,
}

impl SpectrumEnv {
    /// Draws the base topology and starts an episode.
    pub fn new<R: Rng + ?Sized>(cfg: EnvConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let base = sample_paired_topology(rng, cfg.k_p, cfg.k_s, cfg.radius, cfg.pair_ring)?;
        Self::with_base(cfg, base, rng)
    }

    /// Starts from a known base topology (e.g. restored from a checkpoint).
    pub fn with_base<R: Rng + ?Sized>(cfg: EnvConfig, base: Topology, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        check_len("base topology primary users", cfg.k_p, base.k_p())?;
        check_len("base topology secondary users", cfg.k_s, base.k_s())?;
        let gains = sample_gain_matrices(&base, &cfg.channel, rng);
        let world = WorldState::new(base.clone(), gains, cfg.episode_len);
        let mut env = Self { cfg, base, world };
        env.reset(rng);
        Ok(env)
    }

    /// Rebuilds an environment between episodes without consuming
    /// randomness; the world is marked finished, so `reset` must come next.
    pub fn restore(cfg: EnvConfig, base: Topology) -> Result<Self> {
        cfg.validate()?;
        check_len("base topology primary users", cfg.k_p, base.k_p())?;
        check_len("base topology secondary users", cfg.k_s, base.k_s())?;
        let ones = |r: usize, c: usize| {
            let mut m = Matrix::zeros(r, c);
            for j in 0..r {
                for k in 0..c {
                    m.set(j, k, 1.0);
                }
            }
            m
        };
        let gains = GainMatrices {
            h_pp: ones(cfg.k_p, cfg.k_p),
            h_ps: ones(cfg.k_p, cfg.k_s),
            h_sp: ones(cfg.k_s, cfg.k_p),
            h_ss: ones(cfg.k_s, cfg.k_s),
        };
        let mut world = WorldState::new(base.clone(), gains, cfg.episode_len);
        world.step_index = cfg.episode_len;
        Ok(Self { cfg, base, world })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn base_topology(&self) -> &Topology {
        &self.base
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &WorldState {
        let topology = perturb_topology(&self.base, self.cfg.channel.max_displacement, rng);
        let gains = sample_gain_matrices(&topology, &self.cfg.channel, rng);
        self.world = WorldState::new(topology, gains, self.cfg.episode_len);
        &self.world
    }

    pub fn observe(&self, kind: ObservationKind) -> AgentObservation {
        self.world.observe(kind)
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        raw_action_p: &[f64],
        raw_action_s: &[f64],
        rng: &mut R,
    ) -> Result<StepOutcome> {
        if self.world.is_done() {
            return Err(Error::EpisodeFinished(self.world.step_index));
        }
        check_len("primary action", self.cfg.k_p, raw_action_p.len())?;
        check_len("secondary action", self.cfg.k_s, raw_action_s.len())?;
        let radio = &self.cfg.radio;

        let (applied_p, delta_p) = clamp_and_penalize(raw_action_p, radio.p_max_p);
        let (applied_s, delta_s) = clamp_and_penalize(raw_action_s, radio.p_max_s);
        let alloc = PowerAllocation::new(applied_p.clone(), applied_s.clone(), radio)?;
        let lm = link_metrics(&self.world.gains, &alloc, radio)?;

        let reward_p = reward_primary(&lm.rate_p, radio.rate_threshold, delta_p);
        let reward_s = reward_secondary(&lm.ee_s, lm.nqos_p, delta_s);

        let active = |p: &[f64], cap: f64| {
            p.iter()
                .filter(|&&x| x > self.cfg.active_threshold * cap)
                .count()
        };
        let metrics = StepMetrics {
            sum_rate_p: lm.rate_p.iter().sum(),
            sum_rate_s: lm.rate_s.iter().sum(),
            sum_ee_s: lm.ee_s.iter().sum(),
            sum_power_p: applied_p.iter().sum(),
            sum_power_s: applied_s.iter().sum(),
            nqos_p: lm.nqos_p,
            delta_p,
            delta_s,
            active_p: active(&applied_p, radio.p_max_p),
            active_s: active(&applied_s, radio.p_max_s),
            rate_p: lm.rate_p.clone(),
            rate_s: lm.rate_s,
            ee_s: lm.ee_s.clone(),
        };

        self.world.last_rate_p = lm.rate_p;
        self.world.last_ee_s = lm.ee_s;
        self.world.last_nqos_p = lm.nqos_p;
        self.world.step_index += 1;
        self.world.gains = sample_gain_matrices(&self.world.topology, &self.cfg.channel, rng);

        Ok(StepOutcome {
            reward_p,
            reward_s,
            done: self.world.is_done(),
            applied_p,
            applied_s,
            metrics,
        })
    }
}
