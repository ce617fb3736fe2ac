//! Experiment driver: flat `key=value` configuration, per-seed training
//! runs, CSV metrics and last-window summaries.
//!
//! Resolution order for a configuration is: built-in defaults, then the
//! profile (`desk` or `paper`), then the experiment preset (`ex1`, `ex2`),
//! then every remaining key in file order, then command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{invalid, Error, Result};
use crate::ppo::{AgentMode, IterationMetrics, PpoHyper, Trainer};
use crate::radio::{noise_power_from_psd, RxDistortion, DEFAULT_BANDWIDTH_HZ, DEFAULT_NOISE_PSD_DBM_HZ};

/// Column order of every per-seed CSV after `iter,seed`.
pub const METRIC_COLUMNS: [&str; 12] = [
    "reward_p",
    "reward_s",
    "sum_rate_p",
    "sum_rate_s",
    "sum_ee_s",
    "sum_power_p",
    "sum_power_s",
    "nqos_p",
    "delta_p",
    "delta_s",
    "active_p",
    "active_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    Ex1,
    Ex2,
    Custom,
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ex1" => Ok(Experiment::Ex1),
            "ex2" => Ok(Experiment::Ex2),
            "custom" => Ok(Experiment::Custom),
            _ => Err(format!("unknown experiment '{s}' (expected ex1, ex2 or custom)")),
        }
    }
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Ex1 => "ex1",
            Experiment::Ex2 => "ex2",
            Experiment::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    /// L=300, N=T=200, K_p=K_s=2.
    Desk,
    /// L=4000, N=T=500, K_p=4, K_s=8.
    Paper,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(format!("unknown profile '{s}' (expected desk or paper)")),
        }
    }
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

/// One `key=value` setting and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEntry {
    pub key: String,
    pub value: String,
    pub origin: String,
    pub line: usize,
}

impl ConfigEntry {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Config {
            path: self.origin.clone(),
            line: self.line,
            message: format!("{}: {}", self.key, message.into()),
        }
    }
}

/// Parses flat `key=value` lines; `#` starts a comment, blank lines are
/// ignored. Keys are not checked here.
pub fn parse_config_text(text: &str, origin: &str) -> Result<Vec<ConfigEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            path: origin.to_string(),
            line: i + 1,
            message: format!("expected key=value, got '{line}'"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config {
                path: origin.to_string(),
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push(ConfigEntry {
            key: key.to_string(),
            value: value.trim().to_string(),
            origin: origin.to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

pub fn parse_config_file(path: &Path) -> Result<Vec<ConfigEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        line: 0,
        message: format!("cannot read config file: {e}"),
    })?;
    parse_config_text(&text, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub profile: Profile,
    pub mode: AgentMode,
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    pub hyper: PpoHyper,
    pub out_dir: PathBuf,
    pub force: bool,
    /// Seeds trained concurrently; results do not depend on it.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::resolve(&[]).expect("defaults are valid")
    }
}

fn parse_value<T: FromStr>(e: &ConfigEntry) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    e.value
        .parse::<T>()
        .map_err(|err| e.error(format!("malformed value '{}': {err}", e.value)))
}

fn parse_f64_in(e: &ConfigEntry, ok: impl Fn(f64) -> bool, range: &str) -> Result<f64> {
    let v: f64 = parse_value(e)?;
    if v.is_finite() && ok(v) {
        Ok(v)
    } else {
        Err(e.error(format!("value {v} out of range, expected {range}")))
    }
}

fn parse_count(e: &ConfigEntry) -> Result<usize> {
    let v: usize = parse_value(e)?;
    if v == 0 {
        return Err(e.error("value 0 out of range, expected >= 1"));
    }
    Ok(v)
}

fn parse_list<T: FromStr>(e: &ConfigEntry) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items = e
        .value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|err| e.error(format!("malformed list item '{s}': {err}")))
        })
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(e.error("list must not be empty"));
    }
    Ok(items)
}

fn parse_bool(e: &ConfigEntry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        v => Err(e.error(format!("malformed value '{v}', expected true or false"))),
    }
}

fn last_value<'a>(entries: &'a [ConfigEntry], key: &str) -> Option<&'a ConfigEntry> {
    entries.iter().rev().find(|e| e.key == key)
}

impl ExperimentConfig {
    /// Builds a configuration from entries in precedence order (later wins).
    pub fn resolve(entries: &[ConfigEntry]) -> Result<Self> {
        let profile = match last_value(entries, "profile") {
            Some(e) => e.value.parse::<Profile>().map_err(|m| e.error(m))?,
            None => Profile::Desk,
        };
        let experiment = match last_value(entries, "experiment") {
            Some(e) => e.value.parse::<Experiment>().map_err(|m| e.error(m))?,
            None => Experiment::Custom,
        };

        let mut env = EnvConfig::default();
        let mut hyper = PpoHyper::default();
        match profile {
            Profile::Desk => {
                env.k_p = 2;
                env.k_s = 2;
                hyper.iters = 300;
                hyper.batch = 200;
                hyper.episode_len = 200;
            }
            Profile::Paper => {
                env.k_p = 4;
                env.k_s = 8;
                hyper.iters = 4000;
                hyper.batch = 500;
                hyper.episode_len = 500;
            }
        }
        match experiment {
            Experiment::Ex1 => (env.k_p, env.k_s) = (4, 8),
            Experiment::Ex2 => (env.k_p, env.k_s) = (8, 4),
            Experiment::Custom => {}
        }

        let mut cfg = Self {
            experiment,
            profile,
            mode: AgentMode::CoexistDist,
            seeds: (0..6).collect(),
            env,
            hyper,
            out_dir: PathBuf::from("results"),
            force: false,
            jobs: 1,
        };
        let mut noise_psd = DEFAULT_NOISE_PSD_DBM_HZ;
        let mut bandwidth = DEFAULT_BANDWIDTH_HZ;
        let mut noise_direct: Option<f64> = None;
        let mut pair_min = cfg.env.pair_ring.0;
        let mut pair_max = cfg.env.pair_ring.1;

        let pos = |v: f64| v > 0.0;
        let nonneg = |v: f64| v >= 0.0;
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        let kappa = |v: f64| (0.0..=0.5).contains(&v);

        for e in entries {
            let ch = &mut cfg.env.channel;
            let rd = &mut cfg.env.radio;
            let hy = &mut cfg.hyper;
            match e.key.as_str() {
                "profile" | "experiment" => {}
                "mode" => cfg.mode = e.value.parse().map_err(|err: Error| e.error(err.to_string()))?,
                "seeds" => cfg.seeds = parse_list(e)?,
                "out" => cfg.out_dir = PathBuf::from(&e.value),
                "force" => cfg.force = parse_bool(e)?,
                "jobs" => cfg.jobs = parse_count(e)?,
                "k_p" => cfg.env.k_p = parse_count(e)?,
                "k_s" => cfg.env.k_s = parse_count(e)?,
                "radius" => cfg.env.radius = parse_f64_in(e, pos, "> 0")?,
                "pair_min" => pair_min = parse_f64_in(e, nonneg, ">= 0")?,
                "pair_max" => pair_max = parse_f64_in(e, nonneg, ">= 0")?,
                "active_threshold" => {
                    cfg.env.active_threshold = parse_f64_in(e, |v| (0.0..1.0).contains(&v), "[0, 1)")?
                }

                "iters" => hy.iters = parse_count(e)?,
                "batch" => hy.batch = parse_count(e)?,
                "episode_len" => hy.episode_len = parse_count(e)?,
                "update_epochs" => hy.update_epochs = parse_count(e)?,
                "gamma" => hy.gamma = parse_f64_in(e, unit, "(0, 1]")?,
                "lam" => hy.lam = parse_f64_in(e, unit, "(0, 1]")?,
                "clip" => hy.clip = parse_f64_in(e, unit, "(0, 1]")?,
                "lr_policy" => hy.lr_policy = parse_f64_in(e, pos, "> 0")?,
                "lr_value" => hy.lr_value = parse_f64_in(e, pos, "> 0")?,
                "hidden" => {
                    let h: Vec<usize> = parse_list(e)?;
                    if h.contains(&0) {
                        return Err(e.error("hidden sizes must be >= 1"));
                    }
                    hy.hidden = h;
                }

                "alpha_los" => ch.alpha_los = parse_f64_in(e, pos, "> 0")?,
                "alpha_nlos" => ch.alpha_nlos = parse_f64_in(e, pos, "> 0")?,
                "d0" => ch.d0 = parse_f64_in(e, pos, "> 0")?,
                "d1" => ch.d1 = parse_f64_in(e, pos, "> 0")?,
                "nakagami_m" => ch.nakagami_m = parse_f64_in(e, |v| v >= 0.5, ">= 0.5")?,
                "shadow_std_los_db" => ch.shadow_std_los_db = parse_f64_in(e, nonneg, ">= 0")?,
                "shadow_std_nlos_db" => ch.shadow_std_nlos_db = parse_f64_in(e, nonneg, ">= 0")?,
                "max_displacement" => ch.max_displacement = parse_f64_in(e, nonneg, ">= 0")?,

                "kappa" => {
                    let k = parse_f64_in(e, kappa, "[0, 0.5]")?;
                    (rd.kappa_t_p, rd.kappa_r_p, rd.kappa_t_s, rd.kappa_r_s) = (k, k, k, k);
                }
                "kappa_t" => {
                    let k = parse_f64_in(e, kappa, "[0, 0.5]")?;
                    (rd.kappa_t_p, rd.kappa_t_s) = (k, k);
                }
                "kappa_r" => {
                    let k = parse_f64_in(e, kappa, "[0, 0.5]")?;
                    (rd.kappa_r_p, rd.kappa_r_s) = (k, k);
                }
                "kappa_t_p" => rd.kappa_t_p = parse_f64_in(e, kappa, "[0, 0.5]")?,
                "kappa_r_p" => rd.kappa_r_p = parse_f64_in(e, kappa, "[0, 0.5]")?,
                "kappa_t_s" => rd.kappa_t_s = parse_f64_in(e, kappa, "[0, 0.5]")?,
                "kappa_r_s" => rd.kappa_r_s = parse_f64_in(e, kappa, "[0, 0.5]")?,
                "noise_psd_dbm_hz" => noise_psd = parse_f64_in(e, |_| true, "a finite number")?,
                "bandwidth_hz" => bandwidth = parse_f64_in(e, pos, "> 0")?,
                "noise_power" => noise_direct = Some(parse_f64_in(e, pos, "> 0")?),
                "p_max" => {
                    let p = parse_f64_in(e, pos, "> 0")?;
                    (rd.p_max_p, rd.p_max_s) = (p, p);
                }
                "p_max_p" => rd.p_max_p = parse_f64_in(e, pos, "> 0")?,
                "p_max_s" => rd.p_max_s = parse_f64_in(e, pos, "> 0")?,
                "rate_threshold" => rd.rate_threshold = parse_f64_in(e, nonneg, ">= 0")?,
                "tau" => rd.tau = parse_f64_in(e, nonneg, ">= 0")?,
                "p_circuit" => rd.p_circuit = parse_f64_in(e, pos, "> 0")?,
                "rho_decode" => rd.rho_decode = parse_f64_in(e, nonneg, ">= 0")?,
                "rx_distortion" => {
                    rd.rx_distortion = match e.value.as_str() {
                        "gain_weighted" => RxDistortion::GainWeighted,
                        "unweighted" => RxDistortion::Unweighted,
                        v => {
                            return Err(e.error(format!(
                                "malformed value '{v}', expected gain_weighted or unweighted"
                            )))
                        }
                    }
                }
                _ => return Err(e.error("unknown key")),
            }
        }

        cfg.env.radio.noise_power = noise_direct.unwrap_or_else(|| noise_power_from_psd(noise_psd, bandwidth));
        if pair_max < pair_min {
            return Err(invalid(format!("pair_max ({pair_max}) must be >= pair_min ({pair_min})")));
        }
        cfg.env.pair_ring = (pair_min, pair_max);
        cfg.env.episode_len = cfg.hyper.episode_len;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(invalid("seeds must be distinct"));
        }
        self.env.validate()?;
        self.hyper.validate()
    }

    /// Resolved settings as `key=value` lines, re-parseable by `resolve`.
    pub fn to_config_text(&self) -> String {
        let e = &self.env;
        let (c, r, h) = (&e.channel, &e.radio, &self.hyper);
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let rx = match r.rx_distortion {
            RxDistortion::GainWeighted => "gain_weighted",
            RxDistortion::Unweighted => "unweighted",
        };
        let mut s = String::new();
        let pairs: Vec<(&str, String)> = vec![
            ("profile", self.profile.as_str().into()),
            ("experiment", self.experiment.as_str().into()),
            ("mode", self.mode.to_string()),
            ("seeds", seeds),
            ("k_p", e.k_p.to_string()),
            ("k_s", e.k_s.to_string()),
            ("radius", e.radius.to_string()),
            ("pair_min", e.pair_ring.0.to_string()),
            ("pair_max", e.pair_ring.1.to_string()),
            ("active_threshold", e.active_threshold.to_string()),
            ("iters", h.iters.to_string()),
            ("batch", h.batch.to_string()),
            ("episode_len", h.episode_len.to_string()),
            ("update_epochs", h.update_epochs.to_string()),
            ("gamma", h.gamma.to_string()),
            ("lam", h.lam.to_string()),
            ("clip", h.clip.to_string()),
            ("lr_policy", h.lr_policy.to_string()),
            ("lr_value", h.lr_value.to_string()),
            ("hidden", list(&h.hidden)),
            ("alpha_los", c.alpha_los.to_string()),
            ("alpha_nlos", c.alpha_nlos.to_string()),
            ("d0", c.d0.to_string()),
            ("d1", c.d1.to_string()),
            ("nakagami_m", c.nakagami_m.to_string()),
            ("shadow_std_los_db", c.shadow_std_los_db.to_string()),
            ("shadow_std_nlos_db", c.shadow_std_nlos_db.to_string()),
            ("max_displacement", c.max_displacement.to_string()),
            ("kappa_t_p", r.kappa_t_p.to_string()),
            ("kappa_r_p", r.kappa_r_p.to_string()),
            ("kappa_t_s", r.kappa_t_s.to_string()),
            ("kappa_r_s", r.kappa_r_s.to_string()),
            ("noise_power", r.noise_power.to_string()),
            ("p_max_p", r.p_max_p.to_string()),
            ("p_max_s", r.p_max_s.to_string()),
            ("rate_threshold", r.rate_threshold.to_string()),
            ("tau", r.tau.to_string()),
            ("p_circuit", r.p_circuit.to_string()),
            ("rho_decode", r.rho_decode.to_string()),
            ("rx_distortion", rx.into()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// One CSV row: iteration means for one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub seed: u64,
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

impl MetricsRow {
    pub fn from_iteration(seed: u64, m: &IterationMetrics) -> Self {
        Self {
            iter: m.iter,
            seed,
            reward_p: m.reward_p,
            reward_s: m.reward_s,
            sum_rate_p: m.sum_rate_p,
            sum_rate_s: m.sum_rate_s,
            sum_ee_s: m.sum_ee_s,
            sum_power_p: m.sum_power_p,
            sum_power_s: m.sum_power_s,
            nqos_p: m.nqos_p,
            delta_p: m.delta_p,
            delta_s: m.delta_s,
            active_p: m.active_p,
            active_s: m.active_s,
        }
    }

    /// Values in [`METRIC_COLUMNS`] order.
    pub fn values(&self) -> [f64; 12] {
        [
            self.reward_p,
            self.reward_s,
            self.sum_rate_p,
            self.sum_rate_s,
            self.sum_ee_s,
            self.sum_power_p,
            self.sum_power_s,
            self.nqos_p,
            self.delta_p,
            self.delta_s,
            self.active_p,
            self.active_s,
        ]
    }

    pub fn from_values(iter: usize, seed: u64, v: [f64; 12]) -> Self {
        Self {
            iter,
            seed,
            reward_p: v[0],
            reward_s: v[1],
            sum_rate_p: v[2],
            sum_rate_s: v[3],
            sum_ee_s: v[4],
            sum_power_p: v[5],
            sum_power_s: v[6],
            nqos_p: v[7],
            delta_p: v[8],
            delta_s: v[9],
            active_p: v[10],
            active_s: v[11],
        }
    }
}

/// 9 significant digits, exponent form, independent of locale.
pub fn format_value(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iter", "seed"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.iter.to_string(), r.seed.to_string()];
        rec.extend(r.values().iter().map(|v| format_value(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Cross-seed means per iteration: `iter,n_seeds,<metrics>`.
pub fn write_aggregate_csv(path: &Path, per_seed: &[Vec<MetricsRow>]) -> Result<Vec<[f64; 12]>> {
    let iters = per_seed.iter().map(Vec::len).min().unwrap_or(0);
    let n = per_seed.len() as f64;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iter", "n_seeds"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    let mut means = Vec::with_capacity(iters);
    for i in 0..iters {
        let mut acc = [0.0; 12];
        for rows in per_seed {
            for (a, v) in acc.iter_mut().zip(rows[i].values()) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        let mut rec = vec![i.to_string(), per_seed.len().to_string()];
        rec.extend(acc.iter().map(|v| format_value(*v)));
        w.write_record(&rec)?;
        means.push(acc);
    }
    w.flush()?;
    Ok(means)
}

/// Reads a per-seed or aggregate CSV. Aggregate rows get `seed = u64::MAX`.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let bad = |m: String| Error::Format {
        path: path.display().to_string(),
        message: m,
    };
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() != 14 || cols[0] != "iter" || cols[2..] != METRIC_COLUMNS[..] {
        return Err(bad(format!("unexpected header {cols:?}")));
    }
    let aggregate = cols[1] == "n_seeds";
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}: column {}: {e}", i + 1, cols[j])))
        };
        let iter: usize = rec[0]
            .parse()
            .map_err(|e| bad(format!("row {}: iter: {e}", i + 1)))?;
        let seed = if aggregate {
            u64::MAX
        } else {
            rec[1]
                .parse()
                .map_err(|e| bad(format!("row {}: seed: {e}", i + 1)))?
        };
        let mut v = [0.0; 12];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = num(k + 2)?;
        }
        rows.push(MetricsRow::from_values(iter, seed, v));
    }
    Ok(rows)
}

/// Number of trailing rows covered by a window fraction of `n` rows.
pub fn window_len(n: usize, window: f64) -> usize {
    ((window * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Column means over the final `window` fraction of rows.
pub fn window_mean(rows: &[MetricsRow], window: f64) -> [f64; 12] {
    let k = window_len(rows.len(), window);
    column_mean(&rows[rows.len().saturating_sub(k)..])
}

/// Column means over the first `k` rows.
pub fn head_mean(rows: &[MetricsRow], k: usize) -> [f64; 12] {
    column_mean(&rows[..k.min(rows.len())])
}

fn column_mean(rows: &[MetricsRow]) -> [f64; 12] {
    let mut acc = [0.0; 12];
    if rows.is_empty() {
        return acc;
    }
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.values()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= rows.len() as f64);
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub runs: Vec<SeedRun>,
    pub aggregate: Vec<[f64; 12]>,
}

fn seed_csv_name(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

fn is_harness_output(name: &str) -> bool {
    name == "aggregate.csv"
        || name == "config.txt"
        || (name.starts_with("seed_") && (name.ends_with(".csv") || name.ends_with(".ckpt.json")))
        || (name.starts_with("error_seed_") && name.ends_with(".txt"))
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        if !entries.is_empty() {
            if !force {
                return Err(Error::OutputExists(dir.to_path_buf()));
            }
            for e in entries {
                let name = e.file_name();
                if is_harness_output(&name.to_string_lossy()) {
                    fs::remove_file(e.path())?;
                }
            }
        }
    } else {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Trains one seed and writes its CSV and final checkpoint. On failure a
/// diagnostic file is left next to the CSVs.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let result = (|| {
        let mut trainer = Trainer::new(cfg.env, cfg.hyper.clone(), cfg.mode, seed)?;
        let history = trainer.train(|_| {})?;
        trainer
            .checkpoint()
            .save(&cfg.out_dir.join(format!("seed_{seed}.ckpt.json")))?;
        Ok::<_, Error>(history)
    })();
    match result {
        Ok(history) => {
            let rows: Vec<MetricsRow> = history.iter().map(|m| MetricsRow::from_iteration(seed, m)).collect();
            write_metrics_csv(&cfg.out_dir.join(seed_csv_name(seed)), &rows)?;
            Ok(SeedRun { seed, rows })
        }
        Err(e) => {
            let diag = format!(
                "seed={seed}\nmode={}\nerror={e}\n\n{}",
                cfg.mode,
                cfg.to_config_text()
            );
            fs::write(cfg.out_dir.join(format!("error_seed_{seed}.txt")), diag)?;
            Err(e)
        }
    }
}

/// Trains every seed, writes `seed_<s>.csv`, `aggregate.csv` and the
/// resolved `config.txt` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    prepare_out_dir(&cfg.out_dir, cfg.force)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_config_text())?;

    let mut runs: Vec<SeedRun> = Vec::with_capacity(cfg.seeds.len());
    for chunk in cfg.seeds.chunks(cfg.jobs.max(1)) {
        let results: Vec<Result<SeedRun>> = if chunk.len() == 1 {
            vec![run_seed(cfg, chunk[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|&seed| s.spawn(move || run_seed(cfg, seed))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("seed worker panicked"))
                    .collect()
            })
        };
        for r in results {
            runs.push(r?);
        }
    }

    let per_seed: Vec<Vec<MetricsRow>> = runs.iter().map(|r| r.rows.clone()).collect();
    let aggregate = write_aggregate_csv(&cfg.out_dir.join("aggregate.csv"), &per_seed)?;
    Ok(RunOutput {
        out_dir: cfg.out_dir.clone(),
        runs,
        aggregate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryLine {
    pub file: String,
    pub rows: usize,
    pub window_rows: usize,
    pub means: [f64; 12],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub window: f64,
    pub lines: Vec<SummaryLine>,
}

impl Summary {
    pub fn get(&self, file: &str) -> Option<&SummaryLine> {
        self.lines.iter().find(|l| l.file == file)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("file,rows,window_rows");
        for c in METRIC_COLUMNS {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for l in &self.lines {
            let _ = write!(s, "{},{},{}", l.file, l.rows, l.window_rows);
            for v in l.means {
                s.push(',');
                s.push_str(&format_value(v));
            }
            s.push('\n');
        }
        s
    }
}

/// Last-window means for every per-seed CSV and the aggregate in `dir`.
pub fn summarize(dir: &Path, window: f64) -> Result<Summary> {
    if !(window > 0.0 && window <= 1.0) {
        return Err(invalid(format!("window must lie in (0, 1], got {window}")));
    }
    let mut files: BTreeMap<String, PathBuf> = BTreeMap::new();
    for e in fs::read_dir(dir)? {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name == "aggregate.csv" || (name.starts_with("seed_") && name.ends_with(".csv")) {
            files.insert(name, e.path());
        }
    }
    if files.is_empty() {
        return Err(invalid(format!("no metrics CSVs found in {}", dir.display())));
    }
    let mut lines = Vec::with_capacity(files.len());
    for (name, path) in files {
        let rows = read_metrics_csv(&path)?;
        lines.push(SummaryLine {
            file: name,
            rows: rows.len(),
            window_rows: if rows.is_empty() { 0 } else { window_len(rows.len(), window) },
            means: window_mean(&rows, window),
        });
    }
    Ok(Summary { window, lines })
}
