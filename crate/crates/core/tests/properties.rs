mod common;

use common::{random_paths, rng, unit_rows};
use hicle_core::eval::{
    distance_violation_rate, kmeans, map_at_r, nmi, topk_retrieval, KMEANS_MAX_ITERS,
};
use hicle_core::hierarchy::{PairingOptions, PairingTensor, PositivesMode};
use hicle_core::losses::{evaluate, himulcon, Features, LambdaSchedule, LossConfig, LossKind};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_permutation_equivariant(seed in any::<u64>(), levels in 1usize..4, kind in 0usize..5) {
        let kind = LossKind::ALL[kind];
        let mut r = rng(seed, "prop/perm");
        let paths = random_paths(&mut r, 5, 2, levels, 2);
        let f = unit_rows(&mut r, paths.len(), 4);
        let mut perm: Vec<usize> = (0..paths.len()).collect();
        perm.shuffle(&mut r);
        let pf = f.select(Axis(0), &perm);
        let pp: Vec<_> = perm.iter().map(|&i| paths[i].clone()).collect();
        let cfg = LossConfig::default();
        let a = evaluate(kind, &Features::new(f).unwrap(), &paths, &cfg).unwrap();
        let b = evaluate(kind, &Features::new(pf).unwrap(), &pp, &cfg).unwrap();
        prop_assert!((a.total - b.total).abs() < 1e-9 * a.total.abs().max(1.0));
        let permuted = a.gradient.select(Axis(0), &perm);
        prop_assert!(permuted.iter().zip(b.gradient.iter()).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn one_level_weighting_scales_total_and_gradient(seed in any::<u64>()) {
        let mut r = rng(seed, "prop/lambda");
        let paths = random_paths(&mut r, 6, 2, 1, 3);
        let f = Features::new(unit_rows(&mut r, paths.len(), 5)).unwrap();
        let plain = LossConfig { lambda_schedule: LambdaSchedule::Identity, instance_level: false, ..LossConfig::default() };
        let weighted = LossConfig { lambda_schedule: LambdaSchedule::ExpInvGap, ..plain };
        let a = himulcon(&f, &paths, &plain).unwrap();
        let b = himulcon(&f, &paths, &weighted).unwrap();
        let e = std::f64::consts::E;
        prop_assert!((b.total - e * a.total).abs() < 1e-9 * b.total.abs().max(1.0));
        prop_assert!(a.gradient.iter().zip(b.gradient.iter()).all(|(x, y)| (y - e * x).abs() < 1e-9));
    }

    #[test]
    fn cumulative_sets_nest_and_exact_sets_partition(seed in any::<u64>(), levels in 1usize..5, instance: bool) {
        let mut r = rng(seed, "prop/pairing");
        let paths = random_paths(&mut r, 7, 2, levels, 2);
        let cum = PairingTensor::build(&paths, PairingOptions { mode: PositivesMode::Cumulative, instance_level: instance }).unwrap();
        let exact = PairingTensor::build(&paths, PairingOptions { mode: PositivesMode::ExactLca, instance_level: instance }).unwrap();
        let k = cum.level_count();
        for l in 1..k {
            prop_assert!(cum.positives(l).iter().zip(cum.positives(l - 1).iter()).all(|(&fine, &coarse)| !fine || coarse));
        }
        let n = paths.len();
        for i in 0..n {
            for j in 0..n {
                let hits = (0..k).filter(|&l| exact.positives(l)[[i, j]]).count();
                prop_assert!(hits <= 1);
                prop_assert_eq!(hits == 1, cum.positives(0)[[i, j]]);
            }
        }
    }

    #[test]
    fn nmi_is_symmetric_and_label_invariant(a in prop::collection::vec(0u32..4, 2..40), seed in any::<u64>()) {
        let mut r = rng(seed, "prop/nmi");
        let b: Vec<u32> = a.iter().map(|&x| if r.random_bool(0.3) { r.random_range(0..4) } else { x }).collect();
        let forward = nmi(&a, &b).unwrap();
        prop_assert!((forward - nmi(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&forward));
        let mut relabel: Vec<u32> = (0..4).collect();
        relabel.shuffle(&mut r);
        let a2: Vec<u32> = a.iter().map(|&x| relabel[x as usize] + 10).collect();
        prop_assert!((forward - nmi(&a2, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn retrieval_is_monotone_and_bounded(seed in any::<u64>(), classes in 1u32..5) {
        let mut r = rng(seed, "prop/retrieval");
        let q = unit_rows(&mut r, 8, 3);
        let g = unit_rows(&mut r, 20, 3);
        let qc: Vec<u32> = (0..8).map(|_| r.random_range(0..classes)).collect();
        let gc: Vec<u32> = (0..20).map(|_| r.random_range(0..classes)).collect();
        let ks: Vec<usize> = (1..=20).collect();
        let rep = topk_retrieval(q.view(), g.view(), &qc, &gc, &ks).unwrap();
        let accs: Vec<f64> = ks.iter().map(|k| rep.topk[k]).collect();
        prop_assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(accs.iter().all(|a| (0.0..=1.0).contains(a)));
        if let Ok((m, _)) = map_at_r(q.view(), g.view(), &qc, &gc) {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn kmeans_inertia_never_increases(seed in any::<u64>(), k in 1usize..6) {
        let mut r = rng(seed, "prop/kmeans");
        let x = unit_rows(&mut r, 40, 3);
        let km = kmeans(x.view(), k, seed, KMEANS_MAX_ITERS).unwrap();
        prop_assert!(km.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn violation_rate_survives_orthogonal_maps(seed in any::<u64>()) {
        let mut r = rng(seed, "prop/orthogonal");
        let paths = random_paths(&mut r, 40, 1, 3, 2);
        let x = unit_rows(&mut r, 40, 4);
        // Householder reflection
        let v = unit_rows(&mut r, 1, 4);
        let h = Array2::eye(4) - 2.0 * v.t().dot(&v);
        let y = x.dot(&h);
        let a = distance_violation_rate(x.view(), &paths, 2000, seed).unwrap();
        let b = distance_violation_rate(y.view(), &paths, 2000, seed).unwrap();
        // only exact distance ties may flip under rounding
        prop_assert!((a.violation_rate - b.violation_rate).abs() <= 2.0 / 2000.0);
    }
}
