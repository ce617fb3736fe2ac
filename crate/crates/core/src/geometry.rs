//! User placement, mobility and the LOS/NLOS channel gain model.
//!
//! Path loss follows the 3GPP LOS/NLOS model: a link of length `d` is LOS
//! with probability `p_L(d) = min(D0/d, 1)(1 - e^{-d/D1}) + e^{-d/D1}` and
//! otherwise NLOS. The power gain is `d^{-alpha} * shadow * fade` with
//! lognormal shadowing (0 dB mean) and unit-mean fading: Nakagami-m under
//! LOS, exponential under NLOS.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Links shorter than this use the floor distance for path loss.
pub const MIN_LINK_DISTANCE: f64 = 1.0;

/// Receivers are dropped in a ring of this inner/outer radius around their
/// own transmitter.
pub const DEFAULT_PAIR_RING: (f64, f64) = (10.0, 30.0);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Pulls the point radially back onto the disc boundary if it lies outside.
    fn clamp_to_disc(self, radius: f64) -> Point {
        let n = self.norm();
        if n > radius {
            let s = radius / n;
            Point::new(self.x * s, self.y * s)
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub p_tx: Vec<Point>,
    pub p_rx: Vec<Point>,
    pub s_tx: Vec<Point>,
    pub s_rx: Vec<Point>,
    pub radius: f64,
}

impl Topology {
    pub fn k_p(&self) -> usize {
        self.p_tx.len()
    }

    pub fn k_s(&self) -> usize {
        self.s_tx.len()
    }

    pub fn points(&self) -> impl Iterator<Item = &Point> {
        self.p_tx
            .iter()
            .chain(&self.p_rx)
            .chain(&self.s_tx)
            .chain(&self.s_rx)
    }

    fn points_mut(&mut self) -> impl Iterator<Item = &mut Point> {
        self.p_tx
            .iter_mut()
            .chain(self.p_rx.iter_mut())
            .chain(self.s_tx.iter_mut())
            .chain(self.s_rx.iter_mut())
    }

    fn all_tx(&self) -> impl Iterator<Item = &Point> {
        self.p_tx.iter().chain(&self.s_tx)
    }

    fn all_rx(&self) -> impl Iterator<Item = &Point> {
        self.p_rx.iter().chain(&self.s_rx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    pub d0: f64,
    pub d1: f64,
    pub nakagami_m: f64,
    pub shadow_std_los_db: f64,
    pub shadow_std_nlos_db: f64,
    pub max_displacement: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            alpha_los: 2.4,
            alpha_nlos: 3.78,
            d0: 18.0,
            d1: 36.0,
            nakagami_m: 10.0,
            shadow_std_los_db: 5.0,
            shadow_std_nlos_db: 8.6,
            max_displacement: 5.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_los > 0.0 && self.alpha_nlos > self.alpha_los) {
            return Err(invalid(format!(
                "path-loss exponents must satisfy 0 < alpha_los < alpha_nlos (got {} and {})",
                self.alpha_los, self.alpha_nlos
            )));
        }
        if !(self.d0 > 0.0 && self.d1 > 0.0) {
            return Err(invalid("d0 and d1 must be positive"));
        }
        if !(self.nakagami_m >= 0.5) {
            return Err(invalid(format!(
                "nakagami_m must be >= 0.5, got {}",
                self.nakagami_m
            )));
        }
        if !(self.shadow_std_los_db >= 0.0 && self.shadow_std_nlos_db >= 0.0) {
            return Err(invalid("shadowing standard deviations must be >= 0"));
        }
        if !(self.max_displacement >= 0.0) {
            return Err(invalid("max_displacement must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkMode {
    Los,
    Nlos,
}

/// Dense row-major matrix; entry `(j, k)` is the gain from transmitter `j`
/// to receiver `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged matrix rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.cols + k]
    }

    #[inline]
    pub fn set(&mut self, j: usize, k: usize, v: f64) {
        self.data[j * self.cols + k] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).take(self.rows).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainMatrices {
    pub h_pp: Matrix,
    pub h_ps: Matrix,
    pub h_sp: Matrix,
    pub h_ss: Matrix,
}

impl GainMatrices {
    pub fn k_p(&self) -> usize {
        self.h_pp.rows()
    }

    pub fn k_s(&self) -> usize {
        self.h_ss.rows()
    }

    /// Block matrix `[[h_pp, h_ps], [h_sp, h_ss]]` over all transmitters
    /// (primary first) and all receivers (primary first), row-major.
    pub fn stacked(&self) -> Vec<f64> {
        let (kp, ks) = (self.k_p(), self.k_s());
        let n = kp + ks;
        let mut out = Vec::with_capacity(n * n);
        for j in 0..kp {
            out.extend((0..kp).map(|k| self.h_pp.get(j, k)));
            out.extend((0..ks).map(|k| self.h_ps.get(j, k)));
        }
        for j in 0..ks {
            out.extend((0..kp).map(|k| self.h_sp.get(j, k)));
            out.extend((0..ks).map(|k| self.h_ss.get(j, k)));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let (kp, ks) = (self.k_p(), self.k_s());
        let ok = self.h_pp.shape() == (kp, kp)
            && self.h_ps.shape() == (kp, ks)
            && self.h_sp.shape() == (ks, kp)
            && self.h_ss.shape() == (ks, ks);
        if ok {
            Ok(())
        } else {
            Err(invalid("gain matrix shapes are inconsistent"))
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        self.validate()
    }
}

fn uniform_in_disc<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = 2.0 * PI * rng.random::<f64>();
    Point::new(r * theta.cos(), r * theta.sin())
}

fn check_counts(k_p: usize, k_s: usize, radius: f64) -> Result<()> {
    if k_p == 0 || k_s == 0 {
        return Err(invalid(format!(
            "user counts must be >= 1 (got k_p={k_p}, k_s={k_s})"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    Ok(())
}

/// Transmitters uniform on the disc; each receiver uniform on the default
/// ring around its own transmitter, clamped to the disc.
pub fn sample_topology<R: Rng + ?Sized>(
    rng: &mut R,
    k_p: usize,
    k_s: usize,
    radius: f64,
) -> Result<Topology> {
    sample_paired_topology(rng, k_p, k_s, radius, DEFAULT_PAIR_RING)
}

pub fn sample_paired_topology<R: Rng + ?Sized>(
    rng: &mut R,
    k_p: usize,
    k_s: usize,
    radius: f64,
    ring: (f64, f64),
) -> Result<Topology> {
    check_counts(k_p, k_s, radius)?;
    let (r_min, r_max) = ring;
    if !(r_min >= 0.0 && r_max >= r_min) {
        return Err(invalid(format!("bad pairing ring [{r_min}, {r_max}]")));
    }
    let mut pairs = |n: usize| {
        let mut tx = Vec::with_capacity(n);
        let mut rx = Vec::with_capacity(n);
        for _ in 0..n {
            let t = uniform_in_disc(rng, radius);
            // uniform over the annulus area
            let u: f64 = rng.random();
            let d = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
            let theta = 2.0 * PI * rng.random::<f64>();
            let r = Point::new(t.x + d * theta.cos(), t.y + d * theta.sin()).clamp_to_disc(radius);
            tx.push(t);
            rx.push(r);
        }
        (tx, rx)
    };
    let (p_tx, p_rx) = pairs(k_p);
    let (s_tx, s_rx) = pairs(k_s);
    Ok(Topology {
        p_tx,
        p_rx,
        s_tx,
        s_rx,
        radius,
    })
}

/// Every one of the `2(k_p + k_s)` points i.i.d. uniform on the disc.
pub fn sample_unpaired_topology<R: Rng + ?Sized>(
    rng: &mut R,
    k_p: usize,
    k_s: usize,
    radius: f64,
) -> Result<Topology> {
    check_counts(k_p, k_s, radius)?;
    let mut draw = |n: usize| (0..n).map(|_| uniform_in_disc(rng, radius)).collect::<Vec<_>>();
    let p_tx = draw(k_p);
    let p_rx = draw(k_p);
    let s_tx = draw(k_s);
    let s_rx = draw(k_s);
    Ok(Topology {
        p_tx,
        p_rx,
        s_tx,
        s_rx,
        radius,
    })
}

/// Moves `p` by `distance` along `angle`, then clamps it back onto the disc.
pub fn displace_point(p: Point, distance: f64, angle: f64, radius: f64) -> Point {
    Point::new(p.x + distance * angle.cos(), p.y + distance * angle.sin()).clamp_to_disc(radius)
}

pub fn perturb_topology<R: Rng + ?Sized>(
    topo: &Topology,
    max_displacement: f64,
    rng: &mut R,
) -> Topology {
    let mut out = topo.clone();
    if max_displacement == 0.0 {
        return out;
    }
    let radius = topo.radius;
    for p in out.points_mut() {
        let dist = max_displacement * rng.random::<f64>();
        let angle = 2.0 * PI * rng.random::<f64>();
        *p = displace_point(*p, dist, angle, radius);
    }
    out
}

pub fn los_probability(d: f64, params: &ChannelParams) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(invalid(format!("distance must be >= 0, got {d}")));
    }
    if d <= params.d0 {
        return Ok(1.0);
    }
    let e = (-d / params.d1).exp();
    Ok((params.d0 / d) * (1.0 - e) + e)
}

pub fn path_loss(d: f64, mode: LinkMode, params: &ChannelParams) -> f64 {
    let alpha = match mode {
        LinkMode::Los => params.alpha_los,
        LinkMode::Nlos => params.alpha_nlos,
    };
    d.max(MIN_LINK_DISTANCE).powf(-alpha)
}

/// Linear shadowing factor, `10^{x/10}` with `x ~ N(0, std_db)`.
pub fn sample_shadowing<R: Rng + ?Sized>(mode: LinkMode, params: &ChannelParams, rng: &mut R) -> f64 {
    let std_db = match mode {
        LinkMode::Los => params.shadow_std_los_db,
        LinkMode::Nlos => params.shadow_std_nlos_db,
    };
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    10f64.powf(std_db * z / 10.0)
}

/// Unit-mean fading power gain: Gamma(m, 1/m) under LOS, Exp(1) under NLOS.
pub fn sample_fading<R: Rng + ?Sized>(mode: LinkMode, params: &ChannelParams, rng: &mut R) -> f64 {
    match mode {
        LinkMode::Los => {
            let m = params.nakagami_m;
            Gamma::new(m, 1.0 / m)
                .expect("nakagami_m validated >= 0.5")
                .sample(rng)
        }
        LinkMode::Nlos => Exp1.sample(rng),
    }
}

pub fn sample_link_gain_in_mode<R: Rng + ?Sized>(
    d: f64,
    mode: LinkMode,
    params: &ChannelParams,
    rng: &mut R,
) -> f64 {
    let shadow = sample_shadowing(mode, params, rng);
    let fade = sample_fading(mode, params, rng);
    // Exp1 and Gamma can return exact zeros with vanishing probability.
    (path_loss(d, mode, params) * shadow * fade).max(f64::MIN_POSITIVE)
}

pub fn sample_link_gain<R: Rng + ?Sized>(d: f64, params: &ChannelParams, rng: &mut R) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(invalid(format!("link distance must be positive, got {d}")));
    }
    let p_los = los_probability(d, params)?;
    let mode = if rng.random::<f64>() < p_los {
        LinkMode::Los
    } else {
        LinkMode::Nlos
    };
    Ok(sample_link_gain_in_mode(d, mode, params, rng))
}

pub fn sample_gain_matrices<R: Rng + ?Sized>(
    topo: &Topology,
    params: &ChannelParams,
    rng: &mut R,
) -> GainMatrices {
    let mut block = |tx: &[Point], rx: &[Point]| {
        let mut m = Matrix::zeros(tx.len(), rx.len());
        for (j, t) in tx.iter().enumerate() {
            for (k, r) in rx.iter().enumerate() {
                let d = t.distance(*r).max(MIN_LINK_DISTANCE);
                let g = sample_link_gain(d, params, rng).expect("distance floored to >= 1 m");
                m.set(j, k, g);
            }
        }
        m
    };
    let h_pp = block(&topo.p_tx, &topo.p_rx);
    let h_ps = block(&topo.p_tx, &topo.s_rx);
    let h_sp = block(&topo.s_tx, &topo.p_rx);
    let h_ss = block(&topo.s_tx, &topo.s_rx);
    GainMatrices {
        h_pp,
        h_ps,
        h_sp,
        h_ss,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Population {
    Primary,
    Secondary,
    All,
}

/// Row-major transmitter-to-receiver distances divided by the disc radius.
pub fn pairwise_distance_features(topo: &Topology, which: Population) -> Vec<f64> {
    let (tx, rx): (Vec<&Point>, Vec<&Point>) = match which {
        Population::Primary => (topo.p_tx.iter().collect(), topo.p_rx.iter().collect()),
        Population::Secondary => (topo.s_tx.iter().collect(), topo.s_rx.iter().collect()),
        Population::All => (topo.all_tx().collect(), topo.all_rx().collect()),
    };
    let mut out = Vec::with_capacity(tx.len() * rx.len());
    for t in &tx {
        for r in &rx {
            out.push(t.distance(**r) / topo.radius);
        }
    }
    out
}
