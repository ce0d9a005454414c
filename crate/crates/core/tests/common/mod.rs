//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use hicle_core::hierarchy::{LabelPath, PositivesMode};
use hicle_core::losses::{LambdaSchedule, LossConfig, LossKind};
use hicle_core::rng::{self, StreamRng};
use ndarray::Array2;
use rand::Rng;

pub fn rng(seed: u64, tag: &str) -> StreamRng {
    rng::stream(seed, tag)
}

/// Rows drawn from a standard normal and scaled to unit length.
pub fn unit_rows(rng: &mut StreamRng, n: usize, d: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((n, d), |_| {
        // Box-Muller keeps the fixture independent of the library's samplers
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let v: f64 = rng.random();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    });
    for mut row in m.rows_mut() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.mapv_inplace(|x| x / norm);
    }
    m
}

/// `samples × views` rows; views of a sample are consecutive and share the
/// sample id. Labels at each level are drawn from `fanout` children of the
/// parent, giving frequent collisions.
pub fn random_paths(
    rng: &mut StreamRng,
    samples: usize,
    views: usize,
    levels: usize,
    fanout: u32,
) -> Vec<LabelPath> {
    let mut out = Vec::with_capacity(samples * views);
    for s in 0..samples {
        let mut labels = Vec::with_capacity(levels);
        let mut parent = 0u32;
        for _ in 0..levels {
            let label = parent * fanout + rng.random_range(0..fanout);
            labels.push(label);
            parent = label;
        }
        for _ in 0..views {
            out.push(LabelPath::new(s as u64, labels.clone()));
        }
    }
    out
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `-log(exp(s_ip/τ) / Σ_{a≠i} exp(s_ia/τ))` evaluated term by term.
pub fn oracle_pair_loss(f: &Array2<f64>, i: usize, p: usize, tau: f64) -> f64 {
    let sim = |a: usize| f.row(i).dot(&f.row(a)) / tau;
    let denom: f64 = (0..f.nrows())
        .filter(|&a| a != i)
        .map(|a| sim(a).exp())
        .sum();
    -(sim(p).exp() / denom).ln()
}

fn oracle_lambda(schedule: LambdaSchedule, l: usize, k: usize) -> f64 {
    let (l, k) = (l as f64, k as f64);
    match schedule {
        LambdaSchedule::ExpInvGap => (1.0 / (k - l)).exp(),
        LambdaSchedule::ExpLevel => l.exp(),
        LambdaSchedule::Pow2Level => 2f64.powf(l),
        LambdaSchedule::Pow2InvGap => 2f64.powf(1.0 / (k - l)),
        LambdaSchedule::InvGap => 1.0 / (k - l),
        LambdaSchedule::Identity => 1.0,
        LambdaSchedule::ExpInvLevel => (1.0 / (l + 1.0)).exp(),
    }
}

/// Label columns including the optional instance column.
fn columns(path: &LabelPath, instance: bool) -> Vec<u64> {
    let mut c: Vec<u64> = path.labels.iter().map(|&l| l as u64).collect();
    if instance {
        c.push(path.sample_id);
    }
    c
}

fn shared_prefix(a: &[u64], b: &[u64]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Positive partners of every anchor at level `l`.
pub fn oracle_positives(paths: &[LabelPath], cfg: &LossConfig, l: usize) -> Vec<Vec<usize>> {
    let cols: Vec<Vec<u64>> = paths
        .iter()
        .map(|p| columns(p, cfg.instance_level))
        .collect();
    (0..paths.len())
        .map(|i| {
            (0..paths.len())
                .filter(|&j| j != i)
                .filter(|&j| {
                    let shared = shared_prefix(&cols[i], &cols[j]);
                    match cfg.positives_mode {
                        PositivesMode::Cumulative => shared > l,
                        PositivesMode::ExactLca => shared == l + 1,
                    }
                })
                .collect()
        })
        .collect()
}

/// Direct evaluation of any objective from per-pair scalar losses.
pub fn oracle_loss(kind: LossKind, f: &Array2<f64>, paths: &[LabelPath], cfg: &LossConfig) -> f64 {
    let tau = cfg.temperature;
    let n = paths.len();
    match kind {
        LossKind::SupCon => {
            let c = cfg.supcon_level;
            let mut total = 0.0;
            for i in 0..n {
                let ps: Vec<usize> = (0..n)
                    .filter(|&j| j != i && paths[j].labels[c] == paths[i].labels[c])
                    .collect();
                if !ps.is_empty() {
                    total += ps
                        .iter()
                        .map(|&p| oracle_pair_loss(f, i, p, tau))
                        .sum::<f64>()
                        / ps.len() as f64;
                }
            }
            total
        }
        LossKind::SimClr => (0..n)
            .map(|i| {
                let p = (0..n)
                    .find(|&j| j != i && paths[j].sample_id == paths[i].sample_id)
                    .unwrap();
                oracle_pair_loss(f, i, p, tau)
            })
            .sum(),
        _ => {
            let k = paths[0].depth() + usize::from(cfg.instance_level);
            let positives: Vec<Vec<Vec<usize>>> =
                (0..k).map(|l| oracle_positives(paths, cfg, l)).collect();
            let nonempty = positives
                .iter()
                .filter(|ps| ps.iter().any(|p| !p.is_empty()))
                .count();
            let norm = if cfg.skip_empty_levels { nonempty } else { k } as f64;
            let clamp = kind.clamps();
            let weighted = matches!(kind, LossKind::HiMulCon | LossKind::HiMulConE);
            let mut total = 0.0;
            // largest clamped loss over every finer level seen so far
            let mut floor = f64::NEG_INFINITY;
            for l in (0..k).rev() {
                let mut level_sum = 0.0;
                let mut level_max = f64::NEG_INFINITY;
                for (i, ps) in positives[l].iter().enumerate() {
                    if ps.is_empty() {
                        continue;
                    }
                    let mut anchor_sum = 0.0;
                    for &p in ps {
                        let raw = oracle_pair_loss(f, i, p, tau);
                        let value = if clamp { raw.max(floor) } else { raw };
                        level_max = level_max.max(value);
                        anchor_sum += value;
                    }
                    level_sum += anchor_sum / ps.len() as f64;
                }
                let lambda = if weighted {
                    oracle_lambda(cfg.lambda_schedule, l, k)
                } else {
                    1.0
                };
                total += lambda * level_sum / norm;
                floor = floor.max(level_max);
            }
            total
        }
    }
}

/// Ten queries and thirty gallery items in four dimensions, four classes.
pub struct RetrievalFixture {
    pub query: Array2<f64>,
    pub gallery: Array2<f64>,
    pub query_classes: Vec<u32>,
    pub gallery_classes: Vec<u32>,
}

pub fn retrieval_fixture(seed: u64) -> RetrievalFixture {
    let mut r = rng(seed, "fixture/retrieval");
    let query = unit_rows(&mut r, 10, 4);
    let gallery = unit_rows(&mut r, 30, 4);
    let query_classes = (0..10).map(|_| r.random_range(0..4)).collect();
    let gallery_classes = (0..30).map(|_| r.random_range(0..4)).collect();
    RetrievalFixture {
        query,
        gallery,
        query_classes,
        gallery_classes,
    }
}

/// Gallery order for one query by exhaustive pairwise comparison: item `a`
/// precedes `b` iff it scores higher, or scores equal and has a lower index.
fn oracle_ranking(fx: &RetrievalFixture, q: usize) -> Vec<usize> {
    let score = |g: usize| -> f64 { (0..4).map(|c| fx.query[[q, c]] * fx.gallery[[g, c]]).sum() };
    let n = fx.gallery.nrows();
    let rank: Vec<usize> = (0..n)
        .map(|a| {
            (0..n)
                .filter(|&b| score(b) > score(a) || (score(b) == score(a) && b < a))
                .count()
        })
        .collect();
    let mut order = vec![0; n];
    for (g, &r) in rank.iter().enumerate() {
        order[r] = g;
    }
    order
}

pub fn oracle_topk(fx: &RetrievalFixture, k: usize) -> f64 {
    let hits = (0..fx.query.nrows())
        .filter(|&q| {
            oracle_ranking(fx, q)[..k.min(fx.gallery.nrows())]
                .iter()
                .any(|&g| fx.gallery_classes[g] == fx.query_classes[q])
        })
        .count();
    hits as f64 / fx.query.nrows() as f64
}

/// Mean MAP@R over queries with at least one relevant item, and the number
/// of excluded queries.
pub fn oracle_map_at_r(fx: &RetrievalFixture) -> (f64, usize) {
    let mut values = Vec::new();
    let mut excluded = 0;
    for q in 0..fx.query.nrows() {
        let rel: Vec<bool> = oracle_ranking(fx, q)
            .iter()
            .map(|&g| fx.gallery_classes[g] == fx.query_classes[q])
            .collect();
        let r = rel.iter().filter(|&&x| x).count();
        if r == 0 {
            excluded += 1;
            continue;
        }
        let mut ap = 0.0;
        for i in 1..=r {
            if rel[i - 1] {
                let precision = rel[..i].iter().filter(|&&x| x).count() as f64 / i as f64;
                ap += precision;
            }
        }
        values.push(ap / r as f64);
    }
    (values.iter().sum::<f64>() / values.len() as f64, excluded)
}

/// NMI from entropies: `MI = H(a) + H(b) - H(a, b)`, normalised by the
/// arithmetic mean of `H(a)` and `H(b)`.
pub fn oracle_nmi(a: &[u32], b: &[u32]) -> f64 {
    let n = a.len() as f64;
    let entropy = |keys: Vec<(u32, u32)>| {
        let mut sorted = keys;
        sorted.sort_unstable();
        let mut h = 0.0;
        let mut i = 0;
        while i < sorted.len() {
            let j = (i..sorted.len())
                .find(|&j| sorted[j] != sorted[i])
                .unwrap_or(sorted.len());
            let p = (j - i) as f64 / n;
            h -= p * p.ln();
            i = j;
        }
        h
    };
    let ha = entropy(a.iter().map(|&x| (x, 0)).collect());
    let hb = entropy(b.iter().map(|&y| (y, 0)).collect());
    let hab = entropy(a.iter().zip(b).map(|(&x, &y)| (x, y)).collect());
    if ha + hb == 0.0 {
        return 0.0;
    }
    (ha + hb - hab) / (0.5 * (ha + hb))
}
