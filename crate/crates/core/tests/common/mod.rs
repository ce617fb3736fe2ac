#![allow(dead_code)]

use coexist_ppo::geometry::{GainMatrices, Matrix};
use coexist_ppo::neural::{GaussianPolicyNet, Parameters, ValueNet};
use coexist_ppo::ppo::{Transition, TrajectoryBatch};
use coexist_ppo::radio::{RadioConfig, RxDistortion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gains spanning several decades, like real path losses.
pub fn random_gains<R: Rng>(rng: &mut R, k_p: usize, k_s: usize) -> GainMatrices {
    let mut m = |r: usize, c: usize| {
        let mut out = Matrix::zeros(r, c);
        for j in 0..r {
            for k in 0..c {
                out.set(j, k, 10f64.powf(rng.random_range(-6.0..0.0)));
            }
        }
        out
    };
    GainMatrices {
        h_pp: m(k_p, k_p),
        h_ps: m(k_p, k_s),
        h_sp: m(k_s, k_p),
        h_ss: m(k_s, k_s),
    }
}

/// Straight transcription of the SINDR definitions over the joint index
/// set: entries `0..k_p` are primary links, the rest secondary.
pub fn naive_sindr(h: &GainMatrices, p: &[f64], s: &[f64], cfg: &RadioConfig) -> (Vec<f64>, Vec<f64>) {
    let (kp, ks) = (p.len(), s.len());
    let n = kp + ks;
    let is_p = |i: usize| i < kp;
    let gain = |j: usize, k: usize| -> f64 {
        match (is_p(j), is_p(k)) {
            (true, true) => h.h_pp.get(j, k),
            (true, false) => h.h_ps.get(j, k - kp),
            (false, true) => h.h_sp.get(j - kp, k),
            (false, false) => h.h_ss.get(j - kp, k - kp),
        }
    };
    let power = |i: usize| if is_p(i) { p[i] } else { s[i - kp] };

    let mut out = vec![0.0; n];
    for k in 0..n {
        let kr = if is_p(k) { cfg.kappa_r_p } else { cfg.kappa_r_s };
        let rx_weight = match cfg.rx_distortion {
            RxDistortion::Unweighted => 1.0,
            RxDistortion::GainWeighted => gain(k, k),
        };
        let mut distortion = kr * kr * rx_weight * power(k);
        let mut interference = 0.0;
        for j in 0..n {
            let kt = if is_p(k) && is_p(j) { cfg.kappa_t_p } else { cfg.kappa_t_s };
            distortion += kt * kt * gain(j, k) * power(j);
            if j != k {
                interference += gain(j, k) * power(j);
            }
        }
        out[k] = gain(k, k) * power(k) / (cfg.noise_power + distortion + interference);
    }
    let s_out = out.split_off(kp);
    (out, s_out)
}

/// `R_t = sum_{l>=t} gamma^{l-t} r_l` and
/// `A_t = sum_{l>=t} (gamma lam)^{l-t} delta_l`, both truncated at the
/// first terminal at or after `t`; the tail past the batch is bootstrapped.
pub fn brute_force_gae(batch: &[Transition], bootstrap: f64, gamma: f64, lam: f64) -> (Vec<f64>, Vec<f64>) {
    let n = batch.len();
    let value_after = |l: usize| -> f64 {
        if batch[l].done {
            0.0
        } else if l + 1 < n {
            batch[l + 1].value_pred
        } else {
            bootstrap
        }
    };
    let mut returns = vec![0.0; n];
    let mut adv = vec![0.0; n];
    for t in 0..n {
        let (mut r, mut a) = (0.0, 0.0);
        let mut terminated = false;
        for l in t..n {
            let k = (l - t) as i32;
            r += gamma.powi(k) * batch[l].reward;
            let delta = batch[l].reward + gamma * value_after(l) - batch[l].value_pred;
            a += (gamma * lam).powi(k) * delta;
            if batch[l].done {
                terminated = true;
                break;
            }
        }
        if !terminated {
            r += gamma.powi((n - t) as i32) * bootstrap;
        }
        returns[t] = r;
        adv[t] = a;
    }
    (returns, adv)
}

pub fn random_transitions<R: Rng>(rng: &mut R, n: usize, obs_dim: usize, act_dim: usize, p_done: f64) -> Vec<Transition> {
    (0..n)
        .map(|_| Transition {
            obs: (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: (0..act_dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
            log_prob_old: 0.0,
            reward: rng.random_range(-3.0..3.0),
            done: rng.random_bool(p_done),
            value_pred: rng.random_range(-2.0..2.0),
        })
        .collect()
}

/// Overwrites every parameter with `U[-scale, scale]`.
pub fn randomize<P: Parameters, R: Rng>(net: &mut P, rng: &mut R, scale: f64) {
    for s in net.param_slices_mut() {
        s.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
}

pub fn random_policy<R: Rng>(rng: &mut R, obs: usize, hidden: usize, act: usize) -> GaussianPolicyNet {
    let mut net = GaussianPolicyNet::new(rng, obs, &[hidden], act).unwrap();
    randomize(&mut net, rng, 0.4);
    net
}

pub fn random_value<R: Rng>(rng: &mut R, obs: usize, hidden: usize) -> ValueNet {
    let mut net = ValueNet::new(rng, obs, &[hidden]).unwrap();
    randomize(&mut net, rng, 0.5);
    net
}

/// Batch whose old log-probs sit a random offset away from the current
/// policy, keeping ratios clear of the clip kinks at `1 +- eps`.
pub fn offpolicy_batch<R: Rng>(rng: &mut R, policy: &GaussianPolicyNet, n: usize, eps: f64) -> TrajectoryBatch {
    let mut trs = random_transitions(rng, n, policy.obs_dim(), policy.action_dim(), 0.2);
    let kinks = [(1.0 + eps).ln(), (1.0 - eps).ln()];
    for tr in &mut trs {
        let lp = policy.log_prob(&tr.obs, &tr.action).unwrap();
        let offset = loop {
            let o: f64 = rng.random_range(-0.3..0.3);
            if kinks.iter().all(|k| (o + k).abs() > 1e-3) {
                break o;
            }
        };
        tr.log_prob_old = lp + offset;
    }
    let mut batch = TrajectoryBatch::new(trs, 0.0);
    batch.advantages = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    batch.returns = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    batch
}

/// Central differences of `f` at every parameter of `net`.
pub fn finite_difference<P: Parameters + Clone>(net: &P, h: f64, f: impl Fn(&P) -> f64) -> Vec<f64> {
    let base = net.to_flat();
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] = base[i] + h;
        probe.assign_flat(&x).unwrap();
        let up = f(&probe);
        x[i] = base[i] - h;
        probe.assign_flat(&x).unwrap();
        let down = f(&probe);
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Largest relative error, treating both-tiny pairs as exact.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| {
            let scale = a.abs().max(b.abs());
            if scale < 1e-7 {
                0.0
            } else {
                (a - b).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-5;

/// Max relative FD error for the clipped surrogate, the value MSE and the
/// log-density, on freshly drawn 6 -> 8 -> 4 nets.
pub fn gradient_check(seed: u64) -> [f64; 3] {
    use coexist_ppo::ppo::{policy_objective, value_objective};
    let mut r = rng(seed);
    let eps = 0.1;
    let policy = random_policy(&mut r, 6, 8, 4);
    let value = random_value(&mut r, 6, 8);
    let batch = offpolicy_batch(&mut r, &policy, 24, eps);

    let surrogate = policy_objective(&policy, &batch, eps).unwrap();
    let fd = finite_difference(&policy, FD_STEP, |p| policy_objective(p, &batch, eps).unwrap().objective);
    let e_surrogate = max_relative_error(&surrogate.grads.to_flat(), &fd);

    let (_, vgrads) = value_objective(&value, &batch).unwrap();
    let fd = finite_difference(&value, FD_STEP, |v| value_objective(v, &batch).unwrap().0);
    let e_mse = max_relative_error(&vgrads.to_flat(), &fd);

    let tr = &batch.transitions[0];
    let mut g = policy.zeros_like();
    policy.log_prob_backward(&tr.obs, &tr.action, 1.0, &mut g).unwrap();
    let fd = finite_difference(&policy, FD_STEP, |p| p.log_prob(&tr.obs, &tr.action).unwrap());
    let e_lp = max_relative_error(&g.to_flat(), &fd);

    [e_surrogate, e_mse, e_lp]
}

/// Worst absolute gap between `compute_gae` and the brute-force sums over
/// `batches` random batches.
pub fn gae_oracle_gap(seed: u64, batches: usize) -> f64 {
    use coexist_ppo::ppo::compute_gae;
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for b in 0..batches {
        let gamma = [0.1, 0.5, 0.99][b % 3];
        let lam = [0.5, 0.94, 1.0][(b / 3) % 3];
        let n = r.random_range(1..=64);
        let p_done = r.random_range(0.0..0.3);
        let trs = random_transitions(&mut r, n, 0, 0, p_done);
        let bootstrap = r.random_range(-2.0..2.0);
        let (ret, adv) = compute_gae(&trs, bootstrap, gamma, lam).unwrap();
        let (ret_o, adv_o) = brute_force_gae(&trs, bootstrap, gamma, lam);
        for i in 0..n {
            worst = worst.max((ret[i] - ret_o[i]).abs()).max((adv[i] - adv_o[i]).abs());
        }
    }
    worst
}

/// `(worst relative SINDR gap, nqos mismatches)` over random instances with
/// randomized impairment levels and both receiver-distortion models.
pub fn sindr_oracle_gap(seed: u64, instances: usize) -> (f64, usize) {
    use coexist_ppo::radio::{compute_rates, compute_sindr, nqos, PowerAllocation};
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    for i in 0..instances {
        let (kp, ks) = (r.random_range(1..=8), r.random_range(1..=8));
        let mut cfg = RadioConfig {
            kappa_t_p: r.random_range(0.0..0.2),
            kappa_r_p: r.random_range(0.0..0.2),
            kappa_t_s: r.random_range(0.0..0.2),
            kappa_r_s: r.random_range(0.0..0.2),
            noise_power: 10f64.powf(r.random_range(-14.0..-6.0)),
            ..RadioConfig::default()
        };
        if i % 2 == 1 {
            cfg.rx_distortion = RxDistortion::Unweighted;
        }
        let h = random_gains(&mut r, kp, ks);
        let p: Vec<f64> = (0..kp).map(|_| r.random_range(0.0..=1.0)).collect();
        let s: Vec<f64> = (0..ks).map(|_| r.random_range(0.0..=1.0)).collect();
        let alloc = PowerAllocation::new(p.clone(), s.clone(), &cfg).unwrap();
        let (sp, ss) = compute_sindr(&h, &alloc, &cfg).unwrap();
        let (op, os) = naive_sindr(&h, &p, &s, &cfg);
        for (a, b) in sp.iter().chain(&ss).zip(op.iter().chain(&os)) {
            let scale = a.abs().max(b.abs());
            if scale > 0.0 {
                worst = worst.max((a - b).abs() / scale);
            }
        }
        let rates = compute_rates(&sp).unwrap();
        let (_, count) = nqos(&rates, &cfg);
        let recount = op
            .iter()
            .filter(|&&x| (1.0 + x).log2() < cfg.rate_threshold)
            .count();
        if count != recount {
            mismatches += 1;
        }
    }
    (worst, mismatches)
}
