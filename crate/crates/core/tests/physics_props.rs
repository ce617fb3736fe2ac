mod common;

use coexist_ppo::env::{clamp_and_penalize, reward_primary, reward_secondary};
use coexist_ppo::geometry::{
    los_probability, perturb_topology, sample_gain_matrices, sample_topology, ChannelParams, GainMatrices, Matrix,
};
use coexist_ppo::radio::{compute_rates, compute_sindr, nqos, PowerAllocation, RadioConfig, RxDistortion};
use common::*;
use proptest::prelude::*;

fn gains_from(v: &[f64], kp: usize, ks: usize) -> GainMatrices {
    let mut it = v.iter().copied();
    let mut m = |r: usize, c: usize| {
        let rows: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| it.next().unwrap()).collect()).collect();
        Matrix::from_rows(&rows).unwrap()
    };
    GainMatrices {
        h_pp: m(kp, kp),
        h_ps: m(kp, ks),
        h_sp: m(ks, kp),
        h_ss: m(ks, ks),
    }
}

fn instance() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(kp, ks)| {
        let n = (kp + ks) * (kp + ks);
        (
            Just(kp),
            Just(ks),
            prop::collection::vec(-6.0f64..0.0, n).prop_map(|v| v.iter().map(|e| 10f64.powf(*e)).collect()),
            prop::collection::vec(0.01f64..=1.0, kp),
            prop::collection::vec(0.01f64..=1.0, ks),
        )
    })
}

#[test]
fn sindr_matches_naive_oracle() {
    let (gap, mismatches) = sindr_oracle_gap(17, 500);
    assert!(gap < 1e-12, "{gap:e}");
    assert_eq!(mismatches, 0);
}

proptest! {
    #[test]
    fn sindr_agrees_with_oracle((kp, ks, g, p, s) in instance(), unweighted in any::<bool>()) {
        let cfg = RadioConfig {
            rx_distortion: if unweighted { RxDistortion::Unweighted } else { RxDistortion::GainWeighted },
            ..RadioConfig::default()
        };
        let h = gains_from(&g, kp, ks);
        let alloc = PowerAllocation::new(p.clone(), s.clone(), &cfg).unwrap();
        let (sp, ss) = compute_sindr(&h, &alloc, &cfg).unwrap();
        let (op, os) = naive_sindr(&h, &p, &s, &cfg);
        for (a, b) in sp.iter().chain(&ss).zip(op.iter().chain(&os)) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(*b));
        }
    }

    #[test]
    fn raising_an_interferer_never_helps((kp, ks, g, p, s) in instance(), bump in 0.01f64..1.0) {
        let cfg = RadioConfig::default();
        let h = gains_from(&g, kp, ks);
        let base = compute_sindr(&h, &PowerAllocation::new(p.clone(), s.clone(), &cfg).unwrap(), &cfg).unwrap();
        // raise secondary 0's power: every primary SINDR and every other
        // secondary SINDR can only fall
        let mut s2 = s.clone();
        s2[0] = (s2[0] + bump).min(1.0);
        let after = compute_sindr(&h, &PowerAllocation::new(p.clone(), s2, &cfg).unwrap(), &cfg).unwrap();
        for (b, a) in base.0.iter().zip(&after.0) {
            prop_assert!(a <= b);
        }
        for k in 1..ks {
            prop_assert!(after.1[k] <= base.1[k]);
        }
    }

    #[test]
    fn distortion_free_sindr_is_scale_invariant((kp, ks, g, p, s) in instance(), c in 0.1f64..10.0) {
        let cfg = RadioConfig {
            kappa_t_p: 0.0, kappa_r_p: 0.0, kappa_t_s: 0.0, kappa_r_s: 0.0,
            noise_power: 1e-300,
            p_max_p: 10.0, p_max_s: 10.0,
            ..RadioConfig::default()
        };
        let h = gains_from(&g, kp, ks);
        let a = compute_sindr(&h, &PowerAllocation::new(p.clone(), s.clone(), &cfg).unwrap(), &cfg).unwrap();
        let ps: Vec<f64> = p.iter().map(|x| x * c).collect();
        let ss: Vec<f64> = s.iter().map(|x| x * c).collect();
        let b = compute_sindr(&h, &PowerAllocation::new(ps, ss, &cfg).unwrap(), &cfg).unwrap();
        for (x, y) in a.0.iter().chain(&a.1).zip(b.0.iter().chain(&b.1)) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(*y));
        }
    }

    #[test]
    fn nqos_counts_strictly_below_threshold(rates in prop::collection::vec(0.0f64..2.0, 1..10), th in 0.0f64..1.5) {
        let cfg = RadioConfig { rate_threshold: th, ..RadioConfig::default() };
        let (flags, n) = nqos(&rates, &cfg);
        prop_assert_eq!(n, rates.iter().filter(|&&r| r < th).count());
        prop_assert_eq!(flags.iter().map(|&f| f as usize).sum::<usize>(), n);
        prop_assert!(n <= rates.len());
    }

    #[test]
    fn rates_are_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6) {
        let r = compute_rates(&[a, b]).unwrap();
        prop_assert_eq!(a <= b, r[0] <= r[1]);
        prop_assert!(r[0] >= 0.0);
    }

    #[test]
    fn clamp_penalty_is_total_excess(raw in prop::collection::vec(-3.0f64..3.0, 1..10)) {
        let (applied, delta) = clamp_and_penalize(&raw, 1.0);
        let moved: f64 = raw.iter().zip(&applied).map(|(r, a)| (r - a).abs()).sum();
        prop_assert!((moved - delta).abs() < 1e-12);
        prop_assert!(applied.iter().all(|a| (0.0..=1.0).contains(a)));
        prop_assert_eq!(delta == 0.0, raw.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn reward_branches(rates in prop::collection::vec(0.0f64..5.0, 1..6), ee in prop::collection::vec(0.0f64..10.0, 1..6),
                       n in 0usize..6, delta in 0.0f64..2.0) {
        let margin: f64 = rates.iter().map(|r| r - 0.5).sum();
        let ee_sum: f64 = ee.iter().sum();
        let rp = reward_primary(&rates, 0.5, delta);
        let rs = reward_secondary(&ee, n, delta);
        if delta > 0.0 {
            prop_assert!((rp - (0.1 * margin - 5.0 * delta)).abs() < 1e-12);
            prop_assert!((rs - (0.1 * ee_sum - 2.0 * n as f64 - 5.0 * delta)).abs() < 1e-12);
        } else {
            prop_assert!((rp - margin).abs() < 1e-12);
            prop_assert!((rs - (ee_sum - 10.0 * n as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn los_probability_is_a_probability(d in 0.0f64..1e4) {
        let p = los_probability(d, &ChannelParams::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        if d <= 18.0 { prop_assert_eq!(p, 1.0); } else { prop_assert!(p < 1.0); }
    }

    #[test]
    fn perturbation_stays_in_disc_and_bounded(seed in any::<u64>(), kp in 1usize..6, ks in 1usize..6) {
        let mut r = rng(seed);
        let topo = sample_topology(&mut r, kp, ks, 100.0).unwrap();
        let moved = perturb_topology(&topo, 5.0, &mut r);
        for (a, b) in topo.points().zip(moved.points()) {
            prop_assert!(b.norm() <= 100.0 + 1e-9);
            prop_assert!(a.distance(*b) <= 5.0 + 1e-9);
        }
        let h = sample_gain_matrices(&moved, &ChannelParams::default(), &mut r);
        prop_assert!(h.stacked().iter().all(|g| g.is_finite() && *g > 0.0));
    }
}
