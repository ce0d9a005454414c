use std::collections::HashMap;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{lca_level, LabelPath};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub violation_rate: f64,
    pub comparisons: usize,
    pub seed: u64,
}

/// Number of unordered pairs at each exact LCA level, indexed by `level + 1`.
pub fn pair_counts_by_lca(paths: &[LabelPath]) -> Vec<u64> {
    let levels = paths.first().map_or(0, LabelPath::depth);
    // pairs sharing at least the first `len` labels
    let at_least: Vec<u64> = (0..=levels)
        .map(|len| {
            let mut groups: HashMap<&[u32], u64> = HashMap::new();
            for p in paths {
                *groups.entry(&p.labels[..len]).or_default() += 1;
            }
            groups.values().map(|&c| c * c.saturating_sub(1) / 2).sum()
        })
        .collect();
    (0..levels)
        .map(|len| at_least[len] - at_least[len + 1])
        .chain(std::iter::once(at_least[levels]))
        .collect()
}

fn distance(emb: ArrayView2<f64>, a: usize, b: usize) -> f64 {
    emb.row(a)
        .iter()
        .zip(emb.row(b))
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Fraction of sampled pair-of-pairs where the pair with the deeper common
/// ancestor lies strictly farther apart than the pair with the shallower one.
///
/// Pairs are drawn uniformly over distinct samples; draws whose two pairs
/// share an LCA level are rejected.
pub fn distance_violation_rate(
    emb: ArrayView2<f64>,
    paths: &[LabelPath],
    num_comparisons: usize,
    seed: u64,
) -> Result<ViolationReport> {
    let n = paths.len();
    if emb.nrows() != n {
        return Err(Error::Structural(format!(
            "{} embeddings for {n} label paths",
            emb.nrows()
        )));
    }
    if n < 4 {
        return Err(Error::EmptyInput("at least four samples are needed"));
    }
    if num_comparisons == 0 {
        return Err(Error::Config("num_comparisons must be at least 1".into()));
    }
    let counts = pair_counts_by_lca(paths);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::UndefinedMetric("all pairs share one LCA level"));
    }
    let mut rng = rng::stream(seed, "distance-violations");
    let draw_pair = |rng: &mut rng::StreamRng| -> Result<(usize, usize, i32)> {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        Ok((a, b, lca_level(&paths[a], &paths[b])?))
    };
    let mut violations = 0;
    let mut done = 0;
    while done < num_comparisons {
        let u = draw_pair(&mut rng)?;
        let v = draw_pair(&mut rng)?;
        if u.2 == v.2 {
            continue;
        }
        let (fine, coarse) = if u.2 > v.2 { (u, v) } else { (v, u) };
        if distance(emb, fine.0, fine.1) > distance(emb, coarse.0, coarse.1) {
            violations += 1;
        }
        done += 1;
    }
    Ok(ViolationReport {
        violation_rate: violations as f64 / done as f64,
        comparisons: done,
        seed,
    })
}
