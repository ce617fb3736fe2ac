//! Small dense networks with exact reverse-mode gradients.
//!
//! Only the graphs PPO needs are differentiated: the diagonal-Gaussian
//! log-density of the two-headed policy and the scalar value output.
//! Losses built on top of those (clipped surrogate, value MSE) chain
//! through them in `ppo`.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

const HEAD_INIT_SCALE: f64 = 0.01;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Flat access to every trainable array of a model, in a fixed order.
///
/// Gradient containers are values of the same type, so parameter and
/// gradient slices line up one-to-one.
pub trait Parameters {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("flat parameters", self.param_count(), flat.len())?;
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    fn fill_zero(&mut self) {
        for s in self.param_slices_mut() {
            s.fill(0.0);
        }
    }

    fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: &mut [f64]) {
        if let Activation::Tanh = self {
            x.iter_mut().for_each(|v| *v = v.tanh());
        }
    }

    /// Multiplies `grad` by the derivative, given post-activation outputs.
    fn backprop(self, y: &[f64], grad: &mut [f64]) {
        if let Activation::Tanh = self {
            grad.iter_mut().zip(y).for_each(|(g, y)| *g *= 1.0 - y * y);
        }
    }
}

/// Affine map `y = W x + b`, `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Fan-in uniform init `U[-1/sqrt(in), 1/sqrt(in)]`, weights scaled by
    /// `weight_scale`; biases zeroed when `weight_scale != 1`.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, out_dim: usize, weight_scale: f64) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in &mut layer.weights {
            *w = rng.random_range(-bound..=bound) * weight_scale;
        }
        if weight_scale == 1.0 {
            for b in &mut layer.bias {
                *b = rng.random_range(-bound..=bound);
            }
        }
        layer
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weights
            .chunks_exact(self.in_dim.max(1))
            .take(self.out_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grads` and returns dL/dx.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut DenseLayer) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_dim];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias[o] += g;
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                grads.weights[row + i] += g * x[i];
                grad_in[i] += g * self.weights[row + i];
            }
        }
        grad_in
    }
}

/// Activations of every layer from a recorded forward pass;
/// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds at least the input")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<DenseLayer>,
    pub activations: Vec<Activation>,
}

impl DenseNet {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dims: &[usize], output: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(invalid(format!("bad layer dims {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::init(rng, w[0], w[1], 1.0))
            .collect();
        let mut activations = vec![Activation::Tanh; n];
        activations[n - 1] = output;
        Ok(Self {
            layers,
            activations,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim))
                .collect(),
            activations: self.activations.clone(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            h = layer.forward(&h);
            act.apply(&mut h);
        }
        h
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let mut h = layer.forward(acts.last().unwrap());
            act.apply(&mut h);
            acts.push(h);
        }
        Trace { acts }
    }

    /// Backpropagates dL/d(output) through the recorded pass, accumulating
    /// into `grads`; returns dL/d(input).
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut DenseNet) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            self.activations[i].backprop(&trace.acts[i + 1], &mut g);
            g = self.layers[i].backward(&trace.acts[i], &g, &mut grads.layers[i]);
        }
        g
    }
}

impl Parameters for DenseNet {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

/// Log-density of a diagonal Gaussian at `x`.
pub fn diag_gaussian_log_prob(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((x, m), s)| {
            let z = (x - m) * (-s).exp();
            -0.5 * z * z - s - HALF_LN_2PI
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// Shared tanh trunk feeding a linear mean head and a linear log-std head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicyNet {
    pub trunk: DenseNet,
    pub mean_head: DenseLayer,
    pub logstd_head: DenseLayer,
}

impl GaussianPolicyNet {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        obs_dim: usize,
        hidden: &[usize],
        action_dim: usize,
    ) -> Result<Self> {
        if hidden.is_empty() || action_dim == 0 {
            return Err(invalid("policy needs at least one hidden layer and action_dim >= 1"));
        }
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        let trunk = DenseNet::init(rng, &dims, Activation::Tanh)?;
        let h = trunk.out_dim();
        let mean_head = DenseLayer::init(rng, h, action_dim, HEAD_INIT_SCALE);
        let logstd_head = DenseLayer::init(rng, h, action_dim, HEAD_INIT_SCALE);
        Ok(Self {
            trunk,
            mean_head,
            logstd_head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            trunk: self.trunk.zeros_like(),
            mean_head: DenseLayer::zeros(self.mean_head.in_dim, self.mean_head.out_dim),
            logstd_head: DenseLayer::zeros(self.logstd_head.in_dim, self.logstd_head.out_dim),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean_head.out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = self.trunk.dims();
        d.push(self.action_dim());
        d
    }

    pub fn forward(&self, obs: &[f64]) -> Result<PolicyOutput> {
        check_len("policy observation", self.obs_dim(), obs.len())?;
        let h = self.trunk.forward(obs);
        let mean = self.mean_head.forward(&h);
        let log_std = self
            .logstd_head
            .forward(&h)
            .into_iter()
            .map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok(PolicyOutput { mean, log_std })
    }

    /// `a = mean + exp(log_std) * z`, with the log-density of `a`.
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let out = self.forward(obs)?;
        let mut log_prob = 0.0;
        let action = out
            .mean
            .iter()
            .zip(&out.log_std)
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                log_prob += -0.5 * z * z - s - HALF_LN_2PI;
                m + s.exp() * z
            })
            .collect();
        Ok((action, log_prob))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        check_len("policy action", self.action_dim(), action.len())?;
        let out = self.forward(obs)?;
        Ok(diag_gaussian_log_prob(action, &out.mean, &out.log_std))
    }

    /// Returns `log pi(action | obs)` and adds `scale * d log pi / d theta`
    /// into `grads`.
    pub fn log_prob_backward(
        &self,
        obs: &[f64],
        action: &[f64],
        scale: f64,
        grads: &mut GaussianPolicyNet,
    ) -> Result<f64> {
        self.log_prob_backward_with(obs, action, grads, |_| scale)
    }

    /// Like [`log_prob_backward`](Self::log_prob_backward), with the scale
    /// chosen from the forward log-density.
    pub fn log_prob_backward_with<F: FnOnce(f64) -> f64>(
        &self,
        obs: &[f64],
        action: &[f64],
        grads: &mut GaussianPolicyNet,
        scale_fn: F,
    ) -> Result<f64> {
        check_len("policy observation", self.obs_dim(), obs.len())?;
        check_len("policy action", self.action_dim(), action.len())?;
        let trace = self.trunk.forward_trace(obs);
        let h = trace.output();
        let mean = self.mean_head.forward(h);
        let raw_log_std = self.logstd_head.forward(h);

        let n = action.len();
        let mut d_mean = vec![0.0; n];
        let mut d_log_std = vec![0.0; n];
        let mut log_prob = 0.0;
        for i in 0..n {
            let s = raw_log_std[i].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let inv_std = (-s).exp();
            let z = (action[i] - mean[i]) * inv_std;
            log_prob += -0.5 * z * z - s - HALF_LN_2PI;
            d_mean[i] = z * inv_std;
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_log_std[i]) {
                d_log_std[i] = z * z - 1.0;
            }
        }
        let scale = scale_fn(log_prob);
        if scale == 0.0 {
            return Ok(log_prob);
        }
        d_mean.iter_mut().for_each(|g| *g *= scale);
        d_log_std.iter_mut().for_each(|g| *g *= scale);

        let mut d_h = self.mean_head.backward(h, &d_mean, &mut grads.mean_head);
        let d_h2 = self.logstd_head.backward(h, &d_log_std, &mut grads.logstd_head);
        d_h.iter_mut().zip(&d_h2).for_each(|(a, b)| *a += b);
        self.trunk.backward(&trace, &d_h, &mut grads.trunk);
        Ok(log_prob)
    }
}

impl Parameters for GaussianPolicyNet {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.trunk.param_slices();
        v.extend([
            self.mean_head.weights.as_slice(),
            self.mean_head.bias.as_slice(),
            self.logstd_head.weights.as_slice(),
            self.logstd_head.bias.as_slice(),
        ]);
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.trunk.param_slices_mut();
        v.extend([
            self.mean_head.weights.as_mut_slice(),
            self.mean_head.bias.as_mut_slice(),
            self.logstd_head.weights.as_mut_slice(),
            self.logstd_head.bias.as_mut_slice(),
        ]);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNet {
    pub net: DenseNet,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, obs_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Ok(Self {
            net: DenseNet::init(rng, &dims, Activation::Identity)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            net: self.net.zeros_like(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.net.dims()
    }

    pub fn forward(&self, obs: &[f64]) -> Result<f64> {
        check_len("value observation", self.obs_dim(), obs.len())?;
        Ok(self.net.forward(obs)[0])
    }

    /// Returns `V(obs)` and adds `scale * dV/d omega` into `grads`.
    pub fn forward_backward(&self, obs: &[f64], scale: f64, grads: &mut ValueNet) -> Result<f64> {
        self.forward_backward_with(obs, grads, |_| scale)
    }

    /// Backward scale chosen from the forward value, e.g. `2 (V - R) / N`.
    pub fn forward_backward_with<F: FnOnce(f64) -> f64>(
        &self,
        obs: &[f64],
        grads: &mut ValueNet,
        scale_fn: F,
    ) -> Result<f64> {
        check_len("value observation", self.obs_dim(), obs.len())?;
        let trace = self.net.forward_trace(obs);
        let v = trace.output()[0];
        let scale = scale_fn(v);
        if scale != 0.0 {
            self.net.backward(&trace, &[scale], &mut grads.net);
        }
        Ok(v)
    }
}

impl Parameters for ValueNet {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.net.param_slices()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.param_slices_mut()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(params: &P, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam descent step along `grads`.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g_slices = grads.param_slices();
        let mut p_slices = params.param_slices_mut();
        check_len("adam parameter groups", self.m.len(), p_slices.len())?;
        check_len("adam gradient groups", self.m.len(), g_slices.len())?;
        for ((p, g), m) in p_slices.iter().zip(&g_slices).zip(&self.m) {
            check_len("adam parameter group", m.len(), p.len())?;
            check_len("adam gradient group", m.len(), g.len())?;
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in p_slices
            .iter_mut()
            .zip(&g_slices)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

// Snapshot text format:
//
//   coexist-ppo-net v1
//   kind <policy|value>
//   dims <d0> <d1> ... <dn>
//   params <count>
//   <one value per line, shortest round-trip form>
//
// Values follow the `Parameters` order: for each trunk layer its weights
// (row-major, out x in) then biases; a policy then has mean-head weights,
// mean-head biases, log-std-head weights, log-std-head biases.

const SNAPSHOT_MAGIC: &str = "coexist-ppo-net v1";

fn write_snapshot<W: Write, P: Parameters>(mut w: W, kind: &str, dims: &[usize], p: &P) -> Result<()> {
    writeln!(w, "{SNAPSHOT_MAGIC}")?;
    writeln!(w, "kind {kind}")?;
    let dims: Vec<String> = dims.iter().map(usize::to_string).collect();
    writeln!(w, "dims {}", dims.join(" "))?;
    writeln!(w, "params {}", p.param_count())?;
    for s in p.param_slices() {
        for v in s {
            writeln!(w, "{v:e}")?;
        }
    }
    Ok(())
}

struct RawSnapshot {
    kind: String,
    dims: Vec<usize>,
    params: Vec<f64>,
}

fn read_snapshot<R: BufRead>(r: R) -> Result<RawSnapshot> {
    let bad = |m: String| Error::Format {
        path: "<snapshot>".into(),
        message: m,
    };
    let mut lines = r.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| bad(format!("missing {what}")))?
            .map_err(Error::from)
    };
    if next("header")?.trim() != SNAPSHOT_MAGIC {
        return Err(bad("unrecognised header".into()));
    }
    let kind_line = next("kind")?;
    let kind = kind_line
        .strip_prefix("kind ")
        .ok_or_else(|| bad("expected 'kind'".into()))?
        .trim()
        .to_string();
    let dims_line = next("dims")?;
    let dims = dims_line
        .strip_prefix("dims ")
        .ok_or_else(|| bad("expected 'dims'".into()))?
        .split_whitespace()
        .map(|d| d.parse::<usize>().map_err(|e| bad(format!("bad dim {d}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let count_line = next("params")?;
    let count: usize = count_line
        .strip_prefix("params ")
        .ok_or_else(|| bad("expected 'params'".into()))?
        .trim()
        .parse()
        .map_err(|e| bad(format!("bad param count: {e}")))?;
    let mut params = Vec::with_capacity(count);
    for i in 0..count {
        let l = next("parameter value")?;
        params.push(
            l.trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("parameter {i}: {e}")))?,
        );
    }
    Ok(RawSnapshot { kind, dims, params })
}

fn zeroed_dense(dims: &[usize], output: Activation) -> DenseNet {
    let n = dims.len() - 1;
    let mut activations = vec![Activation::Tanh; n];
    activations[n - 1] = output;
    DenseNet {
        layers: dims.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect(),
        activations,
    }
}

impl GaussianPolicyNet {
    pub fn write_snapshot<W: Write>(&self, w: W) -> Result<()> {
        write_snapshot(w, "policy", &self.dims(), self)
    }

    pub fn read_snapshot<R: BufRead>(r: R) -> Result<Self> {
        let raw = read_snapshot(r)?;
        if raw.kind != "policy" || raw.dims.len() < 3 || raw.dims.contains(&0) {
            return Err(invalid(format!("not a policy snapshot: kind={} dims={:?}", raw.kind, raw.dims)));
        }
        let n = raw.dims.len();
        let trunk = zeroed_dense(&raw.dims[..n - 1], Activation::Tanh);
        let (h, a) = (raw.dims[n - 2], raw.dims[n - 1]);
        let mut net = Self {
            trunk,
            mean_head: DenseLayer::zeros(h, a),
            logstd_head: DenseLayer::zeros(h, a),
        };
        net.assign_flat(&raw.params)?;
        Ok(net)
    }
}

impl ValueNet {
    pub fn write_snapshot<W: Write>(&self, w: W) -> Result<()> {
        write_snapshot(w, "value", &self.dims(), self)
    }

    pub fn read_snapshot<R: BufRead>(r: R) -> Result<Self> {
        let raw = read_snapshot(r)?;
        if raw.kind != "value" || raw.dims.len() < 2 || raw.dims.contains(&0) {
            return Err(invalid(format!("not a value snapshot: kind={} dims={:?}", raw.kind, raw.dims)));
        }
        let mut net = Self {
            net: zeroed_dense(&raw.dims, Activation::Identity),
        };
        net.assign_flat(&raw.params)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// ln of the Gaussian pdf product, written from the density itself.
    fn oracle_log_density(x: &[f64], mean: &[f64], std: &[f64]) -> f64 {
        x.iter()
            .zip(mean)
            .zip(std)
            .map(|((x, m), s)| {
                let pdf = (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
                pdf.ln()
            })
            .sum()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut p = GaussianPolicyNet::new(&mut rng(0), 5, &[8, 8], 3).unwrap();
        p.fill_zero();
        let out = p.forward(&[0.3, -1.0, 2.0, 0.0, 1.0]).unwrap();
        assert_eq!(out.mean, vec![0.0; 3]);
        assert_eq!(out.log_std, vec![0.0; 3]);

        let mut v = ValueNet::new(&mut rng(0), 5, &[8, 8]).unwrap();
        v.fill_zero();
        assert_eq!(v.forward(&[1.0; 5]).unwrap(), 0.0);
    }

    #[test]
    fn output_shapes_and_dimension_errors() {
        let p = GaussianPolicyNet::new(&mut rng(1), 20, &DEFAULT_HIDDEN, 4).unwrap();
        let out = p.forward(&[0.1; 20]).unwrap();
        assert_eq!(out.mean.len(), 4);
        assert_eq!(out.log_std.len(), 4);
        assert!(p.forward(&[0.1; 19]).is_err());
        assert!(p.log_prob(&[0.1; 20], &[0.0; 3]).is_err());
        let v = ValueNet::new(&mut rng(1), 20, &DEFAULT_HIDDEN).unwrap();
        assert!(v.forward(&[0.0; 21]).is_err());
    }

    #[test]
    fn log_std_is_clamped() {
        let mut p = GaussianPolicyNet::new(&mut rng(2), 3, &[4], 2).unwrap();
        p.logstd_head.weights.fill(0.0);
        p.logstd_head.bias = vec![5.0, -30.0];
        let out = p.forward(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(out.log_std, vec![2.0, -20.0]);
    }

    #[test]
    fn standard_normal_log_density_at_zero() {
        let lp = diag_gaussian_log_prob(&[0.0], &[0.0], &[0.0]);
        assert!((lp - (-0.918_939)).abs() < 1e-6);
    }

    #[test]
    fn sampled_log_prob_matches_closed_form_oracle() {
        let p = GaussianPolicyNet::new(&mut rng(3), 4, &[8, 8], 3).unwrap();
        let mut r = rng(4);
        for _ in 0..50 {
            let obs: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            let (a, lp) = p.sample_action(&obs, &mut r).unwrap();
            let out = p.forward(&obs).unwrap();
            let std: Vec<f64> = out.log_std.iter().map(|s| s.exp()).collect();
            let oracle = oracle_log_density(&a, &out.mean, &std);
            assert!((lp - oracle).abs() < 1e-12, "{lp} vs {oracle}");
            let re = p.log_prob(&obs, &a).unwrap();
            assert!((lp - re).abs() < 1e-12);
        }
    }

    #[test]
    fn near_deterministic_policy_returns_mean() {
        let mut p = GaussianPolicyNet::new(&mut rng(5), 2, &[4], 2).unwrap();
        p.logstd_head.weights.fill(0.0);
        p.logstd_head.bias.fill(-20.0);
        let obs = [0.2, -0.4];
        let (a, _) = p.sample_action(&obs, &mut rng(6)).unwrap();
        let mean = p.forward(&obs).unwrap().mean;
        for (a, m) in a.iter().zip(&mean) {
            assert!((a - m).abs() < 1e-8);
        }
    }

    #[test]
    fn log_prob_mode_and_symmetry() {
        let p = GaussianPolicyNet::new(&mut rng(7), 3, &[5], 2).unwrap();
        let obs = [0.1, 0.2, 0.3];
        let mean = p.forward(&obs).unwrap().mean;
        let at_mean = p.log_prob(&obs, &mean).unwrap();
        let plus: Vec<f64> = mean.iter().map(|m| m + 0.3).collect();
        let minus: Vec<f64> = mean.iter().map(|m| m - 0.3).collect();
        let lp_plus = p.log_prob(&obs, &plus).unwrap();
        let lp_minus = p.log_prob(&obs, &minus).unwrap();
        assert!(at_mean > lp_plus);
        assert!((lp_plus - lp_minus).abs() < 1e-12);
    }

    #[test]
    fn init_bounds_and_determinism() {
        let p = GaussianPolicyNet::new(&mut rng(8), 10, &[16, 16], 3).unwrap();
        let q = GaussianPolicyNet::new(&mut rng(8), 10, &[16, 16], 3).unwrap();
        assert_eq!(p, q);
        let b0 = 1.0 / 10f64.sqrt();
        assert!(p.trunk.layers[0].weights.iter().all(|w| w.abs() <= b0));
        let bh = 0.01 / 16f64.sqrt();
        assert!(p.mean_head.weights.iter().all(|w| w.abs() <= bh));
        assert!(p.logstd_head.bias.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn initial_policy_mean_is_small() {
        let mut r = rng(9);
        let p = GaussianPolicyNet::new(&mut r, 20, &DEFAULT_HIDDEN, 4).unwrap();
        for _ in 0..200 {
            let raw: Vec<f64> = (0..20).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            let obs: Vec<f64> = raw.iter().map(|x| x / n).collect();
            let out = p.forward(&obs).unwrap();
            assert!(out.mean.iter().all(|m| m.abs() < 0.1));
            assert!(out.log_std.iter().all(|s| s.abs() < 0.1));
        }
    }

    #[test]
    fn hidden_activations_bounded() {
        let p = GaussianPolicyNet::new(&mut rng(10), 3, &[6, 6], 1).unwrap();
        let trace = p.trunk.forward_trace(&[100.0, -100.0, 50.0]);
        assert!(trace.output().iter().all(|h| h.abs() <= 1.0));
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = ValueNet::new(&mut rng(11), 3, &[4]).unwrap();
        let before = p.clone();
        let g = p.zeros_like();
        let mut adam = AdamState::new(&p, 1e-3);
        adam.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let mut p = ValueNet::new(&mut rng(12), 2, &[3]).unwrap();
        let mut g = p.zeros_like();
        let flat: Vec<f64> = (0..g.param_count()).map(|i| 0.5 + i as f64 * 0.1).collect();
        g.assign_flat(&flat).unwrap();
        let lr = 1e-3;
        let mut adam = AdamState::new(&p, lr);
        for _ in 0..2000 {
            adam.step(&mut p, &g).unwrap();
        }
        let prev = p.to_flat();
        adam.step(&mut p, &g).unwrap();
        for (a, b) in prev.iter().zip(p.to_flat()) {
            let d = (a - b).abs();
            assert!((d - lr).abs() < 1e-3 * lr, "{d}");
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = ValueNet::new(&mut rng(13), 2, &[3]).unwrap();
        let other = ValueNet::new(&mut rng(13), 3, &[3]).unwrap();
        let mut adam = AdamState::new(&p, 1e-3);
        assert!(adam.step(&mut p, &other).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let p = GaussianPolicyNet::new(&mut rng(14), 5, &[7, 6], 2).unwrap();
        let mut buf = Vec::new();
        p.write_snapshot(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("coexist-ppo-net v1\nkind policy\ndims 5 7 6 2\n"));
        let q = GaussianPolicyNet::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(p, q);

        let v = ValueNet::new(&mut rng(15), 5, &[7]).unwrap();
        let mut buf = Vec::new();
        v.write_snapshot(&mut buf).unwrap();
        assert_eq!(ValueNet::read_snapshot(buf.as_slice()).unwrap(), v);
        assert!(GaussianPolicyNet::read_snapshot(buf.as_slice()).is_err());
    }
}
