use std::collections::HashSet;

use cutlab::chains::{truncate_kernel, BirthDeathChain, KernelSource, KilledNetwork};
use cutlab::greens::{drift_from_greens, greens_from_d};
use cutlab::killing::{exact_pn, log_pn_to_target, ratio_lemma_check, vc_bound};
use cutlab::scales::{decompose, running_minima};
use cutlab::simulate::{detect_cut_times_bd, finite_horizon_cuts, run_bd, Trajectory};
use proptest::prelude::*;

fn brute_force_cuts(xs: &[u32]) -> Vec<usize> {
    (0..xs.len() - 1)
        .filter(|&n| {
            let past: HashSet<u32> = xs[..=n].iter().copied().collect();
            xs[n + 1..].iter().all(|x| !past.contains(x))
        })
        .collect()
}

fn bd_path(bits: &[bool]) -> Vec<u32> {
    let mut xs = vec![0u32];
    for &up in bits {
        let x = *xs.last().unwrap();
        xs.push(if x == 0 || up { x + 1 } else { x - 1 });
    }
    xs
}

fn network() -> impl Strategy<Value = KilledNetwork> {
    (3usize..8).prop_flat_map(|n| {
        let edges = proptest::collection::vec((0..n, 0..n, 0.2f64..3.0), n..3 * n);
        let kill = proptest::collection::vec(0.0f64..1.5, n);
        (Just(n), edges, kill).prop_filter_map("connected", |(n, edges, kill)| {
            let mut e: Vec<_> = edges.into_iter().filter(|(u, v, _)| u != v).collect();
            for i in 1..n {
                e.push((i - 1, i, 1.0));
            }
            KilledNetwork::new(n, &e).ok()?.with_killing(kill).ok()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constant_chain_d_is_geometric_sum(p in 0.02f64..0.48) {
        let chain = BirthDeathChain::constant(p).unwrap();
        let table = greens_from_d(&chain, 30, 1e-14).unwrap();
        let q = (1.0 - 2.0 * p) / (1.0 + 2.0 * p);
        for m in 0..=30 {
            prop_assert!((table.d(m) * (1.0 - q) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn drift_round_trip(mut drifts in proptest::collection::vec(0.05f64..0.45, 40)) {
        drifts.sort_by(|a, b| b.total_cmp(a));
        let tail = *drifts.last().unwrap();
        let table_values: Vec<f64> = drifts.iter().copied().chain(std::iter::repeat_n(tail, 4000)).collect();
        let chain = BirthDeathChain::from_table(table_values).unwrap();
        let table = greens_from_d(&chain, 30, 1e-14).unwrap();
        let back = drift_from_greens(&table, 29).unwrap();
        for (i, p) in back.iter().enumerate() {
            prop_assert!((p - drifts[i]).abs() < 1e-8, "n={} {} vs {}", i + 1, p, drifts[i]);
        }
    }

    #[test]
    fn finite_horizon_cuts_match_definition(bits in proptest::collection::vec(any::<bool>(), 1..200)) {
        let xs = bd_path(&bits);
        prop_assert_eq!(finite_horizon_cuts(&xs), brute_force_cuts(&xs));
    }

    #[test]
    fn certified_cuts_are_cuts(seed in 0u64..1000, eps in 1e-6f64..1.0) {
        let chain = BirthDeathChain::constant(0.25).unwrap();
        let traj = run_bd(&chain, 300, 5, seed).unwrap();
        let table = greens_from_d(&chain, 400, 1e-14).unwrap();
        let rep = detect_cut_times_bd(&traj, &table, eps).unwrap();
        let cuts: HashSet<usize> = brute_force_cuts(&traj.states).into_iter().collect();
        let sum: f64 = rep.certified.iter().map(|c| c.residual).sum();
        prop_assert!(rep.certified.iter().all(|c| cuts.contains(&c.time)));
        prop_assert!((sum - rep.total_error).abs() <= 1e-12);
        prop_assert!(rep.total_error <= eps);
    }

    #[test]
    fn nested_horizons_only_add_cuts(seed in 0u64..500) {
        let chain = BirthDeathChain::constant(0.25).unwrap();
        let traj = run_bd(&chain, 2000, 9, seed).unwrap();
        let table = greens_from_d(&chain, 3000, 1e-14).unwrap();
        let prefix = |t: usize| Trajectory { states: traj.states[..=t].to_vec(), seed, horizon: t, kill_time: None, survival: 1.0 };
        let short = detect_cut_times_bd(&prefix(500), &table, 0.01).unwrap().certified_times();
        let long = detect_cut_times_bd(&prefix(2000), &table, 0.01).unwrap().certified_times();
        prop_assert!(short.iter().all(|t| long.contains(t)));
    }

    #[test]
    fn running_minima_properties(z in proptest::collection::vec(1e-6f64..1.0, 1..100)) {
        let m = running_minima(&z).unwrap();
        prop_assert!(m.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(m.iter().zip(&z).all(|(a, b)| a <= b));
    }

    #[test]
    fn scale_drops_span_each_scale(steps in proptest::collection::vec(0.0f64..0.6, 10..200)) {
        let mut log_z = vec![0.0];
        for s in steps {
            let last = *log_z.last().unwrap();
            log_z.push(last - s);
        }
        let z: Vec<f64> = log_z.iter().map(|l: &f64| l.exp()).collect();
        let d = decompose(&z, None).unwrap();
        for s in &d.scales {
            let k = s.k as f64;
            prop_assert_eq!(s.log_d[0], -k);
            prop_assert_eq!(*s.log_d.last().unwrap(), -k - 1.0);
            prop_assert!(s.log_d.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn carne_bound_with_factor_two(net in network(), n in 1usize..12) {
        let w: Vec<usize> = (0..net.len()).collect();
        let kernel = truncate_kernel(KernelSource::Network(&net), &w).unwrap();
        for x in 0..net.len() {
            for y in 0..net.len() {
                let p = exact_pn(&kernel, x, y, n, 0.0).unwrap().p[n];
                prop_assert!(p <= 2.0 * vc_bound(&net, x, y, n).unwrap() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn backward_iteration_matches_forward(net in network(), n in 0usize..10) {
        let w: Vec<usize> = (0..net.len()).collect();
        let kernel = truncate_kernel(KernelSource::Network(&net), &w).unwrap();
        let mut back = Vec::new();
        log_pn_to_target(&kernel, 0, n, |k, v| if k == n { back = v.to_vec() }).unwrap();
        for (x, b) in back.iter().enumerate() {
            let p = exact_pn(&kernel, x, 0, n, 0.0).unwrap().p[n];
            prop_assert!((b.exp() - p).abs() <= 1e-12 * p.max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn ratio_expectation_below_survival_bound(net in network(), n in 1usize..6, m in 1usize..6) {
        let w: Vec<usize> = (0..net.len()).collect();
        let kernel = truncate_kernel(KernelSource::Network(&net), &w).unwrap();
        let r = ratio_lemma_check(&kernel, 0, n, m, 200, 1, 1).unwrap();
        prop_assert!(r.exact <= r.sharper_bound + 1e-10);
        if n == m {
            prop_assert!((r.exact - 1.0).abs() < 1e-10);
        }
        prop_assert!(r.exact <= 2.0 + 1e-12);
    }
}

#[test]
fn trajectories_repeat_per_seed() {
    let chain = BirthDeathChain::constant(0.3).unwrap();
    let a = run_bd(&chain, 1000, 42, 7).unwrap();
    let b = run_bd(&chain, 1000, 42, 7).unwrap();
    let c = run_bd(&chain, 1000, 42, 8).unwrap();
    assert_eq!(a.states, b.states);
    assert_ne!(a.states, c.states);
}
