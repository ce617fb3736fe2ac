//! Distortion-aware link metrics: distortion powers, SINDR, Shannon rates,
//! secondary energy efficiency and the primary QoS-violation count.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::geometry::GainMatrices;

/// How the receiver-side distortion term scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RxDistortion {
    /// `kappa_r^2 * P_k`, with no channel gain on the term.
    Unweighted,
    /// `kappa_r^2 * h_kk * P_k`: proportional to the received useful power.
    GainWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    pub kappa_t_p: f64,
    pub kappa_r_p: f64,
    pub kappa_t_s: f64,
    pub kappa_r_s: f64,
    /// Watts, identical at every receiver.
    pub noise_power: f64,
    pub p_max_p: f64,
    pub p_max_s: f64,
    /// bit/s/Hz
    pub rate_threshold: f64,
    pub tau: f64,
    /// Watts.
    pub p_circuit: f64,
    /// Decoding power slope, watts per bit/s/Hz.
    pub rho_decode: f64,
    pub rx_distortion: RxDistortion,
}

/// `psd * bandwidth` in watts.
pub fn noise_power_from_psd(psd_dbm_per_hz: f64, bandwidth_hz: f64) -> f64 {
    10f64.powf((psd_dbm_per_hz - 30.0) / 10.0) * bandwidth_hz
}

pub const DEFAULT_NOISE_PSD_DBM_HZ: f64 = -173.0;
pub const DEFAULT_BANDWIDTH_HZ: f64 = 10e6;

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            kappa_t_p: 0.1,
            kappa_r_p: 0.1,
            kappa_t_s: 0.1,
            kappa_r_s: 0.1,
            noise_power: noise_power_from_psd(DEFAULT_NOISE_PSD_DBM_HZ, DEFAULT_BANDWIDTH_HZ),
            p_max_p: 1.0,
            p_max_s: 1.0,
            rate_threshold: 0.5,
            tau: 1.0,
            p_circuit: 0.1,
            rho_decode: 0.1,
            rx_distortion: RxDistortion::GainWeighted,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [
            ("kappa_t_p", self.kappa_t_p),
            ("kappa_r_p", self.kappa_r_p),
            ("kappa_t_s", self.kappa_t_s),
            ("kappa_r_s", self.kappa_r_s),
        ] {
            if !(0.0..=0.5).contains(&k) {
                return Err(invalid(format!("{name} must lie in [0, 0.5], got {k}")));
            }
        }
        if !(self.noise_power > 0.0) {
            return Err(invalid("noise_power must be positive"));
        }
        if !(self.p_max_p > 0.0 && self.p_max_s > 0.0) {
            return Err(invalid("power caps must be positive"));
        }
        if !(self.tau >= 0.0 && self.rho_decode >= 0.0 && self.rate_threshold >= 0.0) {
            return Err(invalid("tau, rho_decode and rate_threshold must be >= 0"));
        }
        if !(self.p_circuit > 0.0) {
            return Err(invalid("p_circuit must be positive"));
        }
        Ok(())
    }
}

/// Applied (already clamped) transmit powers in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    p_primary: Vec<f64>,
    p_secondary: Vec<f64>,
}

impl PowerAllocation {
    pub fn new(p_primary: Vec<f64>, p_secondary: Vec<f64>, cfg: &RadioConfig) -> Result<Self> {
        let in_range = |v: &[f64], cap: f64| v.iter().all(|p| (0.0..=cap).contains(p));
        if !in_range(&p_primary, cfg.p_max_p) || !in_range(&p_secondary, cfg.p_max_s) {
            return Err(invalid("transmit powers must lie in [0, p_max]"));
        }
        Ok(Self {
            p_primary,
            p_secondary,
        })
    }

    pub fn primary(&self) -> &[f64] {
        &self.p_primary
    }

    pub fn secondary(&self) -> &[f64] {
        &self.p_secondary
    }

    fn check(&self, h: &GainMatrices) -> Result<()> {
        h.check()?;
        check_len("primary powers", h.k_p(), self.p_primary.len())?;
        check_len("secondary powers", h.k_s(), self.p_secondary.len())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkMetrics {
    pub sindr_p: Vec<f64>,
    pub sindr_s: Vec<f64>,
    pub rate_p: Vec<f64>,
    pub rate_s: Vec<f64>,
    pub ee_s: Vec<f64>,
    pub nack_p: Vec<u8>,
    pub nqos_p: usize,
}

/// Distortion power at every primary and secondary receiver.
///
/// Transmitter sums run over all `j` including the receiver's own link.
/// The cross-system transmitter term uses `kappa_t_s` at both kinds of
/// receiver.
pub fn distortion_powers(
    h: &GainMatrices,
    p: &PowerAllocation,
    cfg: &RadioConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    p.check(h)?;
    let (pp, ps) = (p.primary(), p.secondary());
    let (kp, ks) = (pp.len(), ps.len());
    let rx_gain = |direct: f64| match cfg.rx_distortion {
        RxDistortion::Unweighted => 1.0,
        RxDistortion::GainWeighted => direct,
    };
    let kt_p2 = cfg.kappa_t_p * cfg.kappa_t_p;
    let kr_p2 = cfg.kappa_r_p * cfg.kappa_r_p;
    let kt_s2 = cfg.kappa_t_s * cfg.kappa_t_s;
    let kr_s2 = cfg.kappa_r_s * cfg.kappa_r_s;

    let d_p = (0..kp)
        .map(|k| {
            let own: f64 = (0..kp).map(|j| h.h_pp.get(j, k) * pp[j]).sum();
            let cross: f64 = (0..ks).map(|j| h.h_sp.get(j, k) * ps[j]).sum();
            kr_p2 * rx_gain(h.h_pp.get(k, k)) * pp[k] + kt_p2 * own + kt_s2 * cross
        })
        .collect();
    let d_s = (0..ks)
        .map(|k| {
            let own: f64 = (0..ks).map(|j| h.h_ss.get(j, k) * ps[j]).sum();
            let cross: f64 = (0..kp).map(|j| h.h_ps.get(j, k) * pp[j]).sum();
            kr_s2 * rx_gain(h.h_ss.get(k, k)) * ps[k] + kt_s2 * own + kt_s2 * cross
        })
        .collect();
    Ok((d_p, d_s))
}

pub fn compute_sindr(
    h: &GainMatrices,
    p: &PowerAllocation,
    cfg: &RadioConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d_p, d_s) = distortion_powers(h, p, cfg)?;
    let (pp, ps) = (p.primary(), p.secondary());
    let (kp, ks) = (pp.len(), ps.len());

    let sindr_p = (0..kp)
        .map(|k| {
            let intra: f64 = (0..kp)
                .filter(|&j| j != k)
                .map(|j| h.h_pp.get(j, k) * pp[j])
                .sum();
            let inter: f64 = (0..ks).map(|j| h.h_sp.get(j, k) * ps[j]).sum();
            h.h_pp.get(k, k) * pp[k] / (cfg.noise_power + d_p[k] + intra + inter)
        })
        .collect();
    let sindr_s = (0..ks)
        .map(|k| {
            let intra: f64 = (0..ks)
                .filter(|&j| j != k)
                .map(|j| h.h_ss.get(j, k) * ps[j])
                .sum();
            let inter: f64 = (0..kp).map(|j| h.h_ps.get(j, k) * pp[j]).sum();
            h.h_ss.get(k, k) * ps[k] / (cfg.noise_power + d_s[k] + intra + inter)
        })
        .collect();
    Ok((sindr_p, sindr_s))
}

/// `log2(1 + sindr)` elementwise.
pub fn compute_rates(sindr: &[f64]) -> Result<Vec<f64>> {
    sindr
        .iter()
        .map(|&s| {
            if s >= 0.0 {
                Ok(s.ln_1p() / std::f64::consts::LN_2)
            } else {
                Err(invalid(format!("SINDR must be >= 0, got {s}")))
            }
        })
        .collect()
}

/// `r / (tau (p + P0) + rho r)` for every secondary link.
pub fn energy_efficiency(rate_s: &[f64], p_s: &[f64], cfg: &RadioConfig) -> Vec<f64> {
    rate_s
        .iter()
        .zip(p_s)
        .map(|(&r, &p)| r / (cfg.tau * (p + cfg.p_circuit) + cfg.rho_decode * r))
        .collect()
}

/// Per-user NACK flags (`rate < r_th`) and their sum.
pub fn nqos(rate_p: &[f64], cfg: &RadioConfig) -> (Vec<u8>, usize) {
    let nack: Vec<u8> = rate_p
        .iter()
        .map(|&r| u8::from(r < cfg.rate_threshold))
        .collect();
    let count = nack.iter().map(|&n| n as usize).sum();
    (nack, count)
}

pub fn link_metrics(h: &GainMatrices, p: &PowerAllocation, cfg: &RadioConfig) -> Result<LinkMetrics> {
    let (sindr_p, sindr_s) = compute_sindr(h, p, cfg)?;
    let rate_p = compute_rates(&sindr_p)?;
    let rate_s = compute_rates(&sindr_s)?;
    let ee_s = energy_efficiency(&rate_s, p.secondary(), cfg);
    let (nack_p, nqos_p) = nqos(&rate_p, cfg);
    Ok(LinkMetrics {
        sindr_p,
        sindr_s,
        rate_p,
        rate_s,
        ee_s,
        nack_p,
        nqos_p,
    })
}
