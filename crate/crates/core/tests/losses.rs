mod common;

use common::{oracle_loss, oracle_pair_loss, oracle_positives, random_paths, rng, unit_rows};
use hicle_core::hierarchy::{LabelPath, PositivesMode};
use hicle_core::losses::{evaluate, hicone, Features, LambdaSchedule, LossConfig, LossKind};
use rand::Rng;

const SCHEDULES: [LambdaSchedule; 7] = [
    LambdaSchedule::ExpInvGap,
    LambdaSchedule::ExpLevel,
    LambdaSchedule::Pow2Level,
    LambdaSchedule::Pow2InvGap,
    LambdaSchedule::InvGap,
    LambdaSchedule::Identity,
    LambdaSchedule::ExpInvLevel,
];

fn random_config(r: &mut impl Rng, levels: usize) -> LossConfig {
    LossConfig {
        temperature: [0.1, 0.5, 1.0][r.random_range(0..3)],
        lambda_schedule: SCHEDULES[r.random_range(0..SCHEDULES.len())],
        positives_mode: if r.random() {
            PositivesMode::Cumulative
        } else {
            PositivesMode::ExactLca
        },
        instance_level: r.random(),
        clamp_floor_stop_gradient: r.random(),
        skip_empty_levels: r.random(),
        supcon_level: r.random_range(0..levels),
    }
}

#[test]
fn every_loss_matches_the_per_pair_oracle_across_configurations() {
    let mut r = rng(1, "test/loss-oracle");
    for case in 0..200 {
        let levels = r.random_range(1..=4);
        let samples = r.random_range(2..=6);
        let paths = random_paths(&mut r, samples, 2, levels, 2);
        let d = r.random_range(2..=6);
        let f = unit_rows(&mut r, paths.len(), d);
        let cfg = random_config(&mut r, levels);
        let features = Features::new(f.clone()).unwrap();
        for kind in LossKind::ALL {
            let out = evaluate(kind, &features, &paths, &cfg).unwrap();
            let expected = oracle_loss(kind, &f, &paths, &cfg);
            assert!(
                (out.total - expected).abs() < 1e-9 * expected.abs().max(1.0),
                "case {case} {kind:?} {cfg:?}: {} vs {expected}",
                out.total
            );
        }
    }
}

#[test]
fn reported_pair_losses_match_the_oracle_sets() {
    let mut r = rng(2, "test/pair-sets");
    for _ in 0..50 {
        let levels = r.random_range(1..=3);
        let paths = random_paths(&mut r, 5, 2, levels, 2);
        let f = unit_rows(&mut r, paths.len(), 4);
        let cfg = random_config(&mut r, levels);
        let out = evaluate(
            LossKind::HiMulCon,
            &Features::new(f.clone()).unwrap(),
            &paths,
            &cfg,
        )
        .unwrap();
        for level in &out.levels {
            let mut expected: Vec<(usize, usize)> = oracle_positives(&paths, &cfg, level.level)
                .into_iter()
                .enumerate()
                .flat_map(|(i, ps)| ps.into_iter().map(move |p| (i, p)))
                .collect();
            let mut got: Vec<(usize, usize)> =
                level.pairs.iter().map(|p| (p.anchor, p.positive)).collect();
            expected.sort_unstable();
            got.sort_unstable();
            assert_eq!(got, expected);
            for p in &level.pairs {
                assert!(
                    (p.loss - oracle_pair_loss(&f, p.anchor, p.positive, cfg.temperature)).abs()
                        < 1e-12
                );
            }
        }
    }
}

#[test]
fn hicone_eight_by_four_batch_matches_sequential_clamp() {
    let mut r = rng(3, "test/hicone-8x4");
    let paths: Vec<LabelPath> = random_paths(&mut r, 4, 2, 3, 2);
    let f = unit_rows(&mut r, 8, 4);
    let cfg = LossConfig::default();
    let out = hicone(&Features::new(f.clone()).unwrap(), &paths, &cfg).unwrap();
    assert!((out.total - oracle_loss(LossKind::HiConE, &f, &paths, &cfg)).abs() < 1e-9);
}

#[test]
fn clamped_losses_never_rise_toward_finer_levels() {
    let mut r = rng(4, "test/clamp-order");
    for _ in 0..100 {
        let levels = r.random_range(1..=4);
        let samples = r.random_range(2..=8);
        let paths = random_paths(&mut r, samples, 2, levels, 2);
        let f = unit_rows(&mut r, paths.len(), 3);
        let cfg = random_config(&mut r, levels);
        for kind in [LossKind::HiConE, LossKind::HiMulConE] {
            let out = evaluate(kind, &Features::new(f.clone()).unwrap(), &paths, &cfg).unwrap();
            assert_eq!(out.clamp_order_violations(), 0);
            let nonempty: Vec<_> = out.levels.iter().filter(|l| !l.pairs.is_empty()).collect();
            for w in nonempty.windows(2) {
                let coarse_min = w[0]
                    .pairs
                    .iter()
                    .map(|p| p.clamped)
                    .fold(f64::INFINITY, f64::min);
                let fine_max = w[1]
                    .pairs
                    .iter()
                    .map(|p| p.clamped)
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(coarse_min >= fine_max);
            }
        }
    }
}
