mod common;

use common::{
    oracle_map_at_r, oracle_nmi, oracle_topk, random_paths, retrieval_fixture, rng, unit_rows,
};
use hicle_core::eval::{clustering_report, distance_violation_rate, map_at_r, nmi, topk_retrieval};
use hicle_core::hierarchy::LabelPath;
use ndarray::Array2;
use rand::Rng;

#[test]
fn retrieval_matches_exhaustive_oracle_on_ten_query_fixtures() {
    for seed in 0..20 {
        let fx = retrieval_fixture(seed);
        let ks = [1, 2, 3, 5, 10, 30];
        let rep = topk_retrieval(
            fx.query.view(),
            fx.gallery.view(),
            &fx.query_classes,
            &fx.gallery_classes,
            &ks,
        )
        .unwrap();
        for k in ks {
            assert!(
                (rep.topk[&k] - oracle_topk(&fx, k)).abs() < 1e-12,
                "seed {seed} k {k}"
            );
        }
        let (m, excluded) = map_at_r(
            fx.query.view(),
            fx.gallery.view(),
            &fx.query_classes,
            &fx.gallery_classes,
        )
        .unwrap();
        let (expected, expected_excluded) = oracle_map_at_r(&fx);
        assert!((m - expected).abs() < 1e-12, "seed {seed}");
        assert_eq!(excluded, expected_excluded);
    }
}

#[test]
fn k_beyond_gallery_is_clamped_and_flagged() {
    let fx = retrieval_fixture(0);
    let rep = topk_retrieval(
        fx.query.view(),
        fx.gallery.view(),
        &fx.query_classes,
        &fx.gallery_classes,
        &[50],
    )
    .unwrap();
    assert!(rep.k_clamped);
    assert!((rep.topk[&50] - oracle_topk(&fx, 30)).abs() < 1e-12);
}

#[test]
fn nmi_matches_entropy_oracle() {
    let mut r = rng(5, "test/nmi-oracle");
    for _ in 0..50 {
        let n = r.random_range(2..60);
        let a: Vec<u32> = (0..n).map(|_| r.random_range(0..5)).collect();
        let b: Vec<u32> = (0..n).map(|_| r.random_range(0..4)).collect();
        assert!((nmi(&a, &b).unwrap() - oracle_nmi(&a, &b)).abs() < 1e-12);
    }
}

fn grid_paths(cats: u32, subs: u32, per: u32) -> Vec<LabelPath> {
    let mut out = Vec::new();
    for c in 0..cats {
        for s in 0..subs {
            for _ in 0..per {
                out.push(LabelPath::new(out.len() as u64, vec![c, c * subs + s]));
            }
        }
    }
    out
}

#[test]
fn perfectly_grouped_embeddings_score_one_at_every_level() {
    let paths = grid_paths(3, 3, 5);
    let mut r = rng(6, "test/grouped");
    let categories = unit_rows(&mut r, 3, 8);
    let subs = unit_rows(&mut r, 9, 8);
    let emb = Array2::from_shape_fn((paths.len(), 8), |(i, j)| {
        let p = &paths[i].labels;
        10.0 * categories[[p[0] as usize, j]]
            + subs[[p[1] as usize, j]]
            + 1e-4 * (i as f64 * 0.37 + j as f64).sin()
    });
    let rep = clustering_report(emb.view(), &paths, 0).unwrap();
    for v in rep.nmi_per_level {
        assert!((v.unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn random_embeddings_have_low_nmi() {
    for seed in 0..20 {
        let paths = grid_paths(4, 3, 20);
        assert!(paths.len() >= 200);
        let emb = unit_rows(&mut rng(seed, "test/random-nmi"), paths.len(), 16);
        let rep = clustering_report(emb.view(), &paths, seed).unwrap();
        for v in rep.nmi_per_level {
            assert!(v.unwrap() < 0.2, "seed {seed}: {v:?}");
        }
    }
}

#[test]
fn random_embeddings_violate_half_the_time() {
    for seed in 0..5 {
        let mut r = rng(seed, "test/random-violations");
        let paths = random_paths(&mut r, 300, 1, 3, 3);
        let emb = unit_rows(&mut r, paths.len(), 16);
        let rep = distance_violation_rate(emb.view(), &paths, 10_000, seed).unwrap();
        assert_eq!(rep.comparisons, 10_000);
        assert!(
            (rep.violation_rate - 0.5).abs() <= 0.05,
            "seed {seed}: {}",
            rep.violation_rate
        );
    }
}

/// Embedding whose Gram matrix is `a·I + b + c·[same category] + d·[same
/// subcategory]`, factored by Cholesky. Pair distances then depend only on
/// the LCA level.
fn gram_embedding(paths: &[LabelPath], a: f64, b: f64, c: f64, d: f64) -> Array2<f64> {
    let n = paths.len();
    let g = Array2::from_shape_fn((n, n), |(i, j)| {
        let same = |l: usize| paths[i].labels[..=l] == paths[j].labels[..=l];
        a * f64::from(u8::from(i == j))
            + b
            + c * f64::from(u8::from(same(0)))
            + d * f64::from(u8::from(same(1)))
    });
    let mut x = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| x[[i, k]] * x[[j, k]]).sum();
            x[[i, j]] = if i == j {
                (g[[i, i]] - s).sqrt()
            } else {
                (g[[i, j]] - s) / x[[j, j]]
            };
        }
    }
    x
}

#[test]
fn violation_rate_extremes() {
    let paths = grid_paths(3, 2, 3);
    // closer with deeper ancestry
    let nested = gram_embedding(&paths, 0.4, 0.1, 0.2, 0.3);
    assert_eq!(
        distance_violation_rate(nested.view(), &paths, 5000, 1)
            .unwrap()
            .violation_rate,
        0.0
    );
    // farther with deeper ancestry
    let inverted = gram_embedding(&paths, 1.0, 0.1, -0.05, -0.1);
    assert_eq!(
        distance_violation_rate(inverted.view(), &paths, 5000, 1)
            .unwrap()
            .violation_rate,
        1.0
    );
}
