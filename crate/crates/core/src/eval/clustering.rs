use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::LabelPath;
use crate::rng;

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centers: Array2<f64>,
    /// Inertia after every assignment step, first entry from the seeding.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// D² seeding: first center uniform, each next one drawn with probability
/// proportional to the squared distance to the nearest chosen center.
fn seed_centers(x: ArrayView2<f64>, k: usize, rng: &mut rng::StreamRng) -> Array2<f64> {
    let n = x.nrows();
    let mut centers = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, x.row(first)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, x.row(pick)));
        }
    }
    centers
}

/// Nearest center per row (lowest index on ties) and the total inertia.
fn assign(x: ArrayView2<f64>, centers: &Array2<f64>, out: &mut [usize], dist: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for (i, r) in x.rows().into_iter().enumerate() {
        let (best, d) = centers
            .rows()
            .into_iter()
            .map(|c| sq_dist(r, c))
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (j, d)| if d < acc.1 { (j, d) } else { acc },
            );
        out[i] = best;
        dist[i] = d;
        inertia += d;
    }
    inertia
}

/// Lloyd's algorithm with k-means++ seeding, deterministic per seed.
pub fn kmeans(x: ArrayView2<f64>, k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    if n < k {
        return Err(Error::Config(format!("k-means with k = {k} on {n} points")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite embedding value".into()));
    }
    let mut rng = rng::stream(seed, "kmeans");
    let mut centers = seed_centers(x, k, &mut rng);
    let mut assignments = vec![0; n];
    let mut dist = vec![0.0; n];
    let mut history = vec![assign(x, &centers, &mut assignments, &mut dist)];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let mut sums = Array2::<f64>::zeros((k, x.ncols()));
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows().into_iter().enumerate() {
            sums.row_mut(assignments[i]).scaled_add(1.0, &r);
            counts[assignments[i]] += 1;
        }
        let mut shift: f64 = 0.0;
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let new: Array1<f64> = sums.row(c).mapv(|v| v / count as f64);
            shift = shift.max(sq_dist(new.view(), centers.row(c)).sqrt());
            centers.row_mut(c).assign(&new);
        }
        // empty clusters take the point farthest from its own center
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[assignments[i]] -= 1;
                counts[c] = 1;
                assignments[i] = c;
                dist[i] = 0.0;
                centers.row_mut(c).assign(&x.row(i));
                shift = f64::INFINITY;
            }
        }
        history.push(assign(x, &centers, &mut assignments, &mut dist));
        if shift <= KMEANS_TOLERANCE {
            converged = true;
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centers,
        inertia_history: history,
        iterations,
        converged,
    })
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization and
/// natural logarithms. Returns 0 when both labelings are constant.
pub fn nmi<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Structural(format!(
            "labelings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("no labels"));
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(&A, &B), usize> = BTreeMap::new();
    let mut ca: BTreeMap<&A, usize> = BTreeMap::new();
    let mut cb: BTreeMap<&B, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    let mi: f64 = joint
        .iter()
        .map(|((x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[x] as f64 * cb[y] as f64)).ln()
        })
        .sum();
    let denom = 0.5 * (ha + hb);
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi.max(0.0) / denom).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusteringReport {
    /// Level 0 is clustered globally with one cluster per category. Deeper
    /// levels are the unweighted mean of per-category NMIs. `None` where no
    /// clustering was defined.
    pub nmi_per_level: Vec<Option<f64>>,
    /// Categories skipped per level because they hold a single label there.
    pub excluded_categories: Vec<usize>,
}

fn distinct<T: Ord + Copy>(v: impl Iterator<Item = T>) -> usize {
    v.collect::<BTreeSet<_>>().len()
}

fn cluster_nmi(x: ArrayView2<f64>, labels: &[u32], seed: u64) -> Result<Option<f64>> {
    let k = distinct(labels.iter().copied());
    if k < 2 {
        return Ok(None);
    }
    let km = kmeans(x, k, seed, KMEANS_MAX_ITERS)?;
    nmi(&km.assignments, labels).map(Some)
}

/// K-means NMI at every hierarchy level.
pub fn clustering_report(
    emb: ArrayView2<f64>,
    paths: &[LabelPath],
    seed: u64,
) -> Result<ClusteringReport> {
    if emb.nrows() != paths.len() {
        return Err(Error::Structural(format!(
            "{} embeddings for {} label paths",
            emb.nrows(),
            paths.len()
        )));
    }
    let levels = paths
        .first()
        .ok_or(Error::EmptyInput("no label paths"))?
        .depth();
    if paths.iter().any(|p| p.depth() != levels) {
        return Err(Error::Structural("label paths of different depth".into()));
    }
    let mut report = ClusteringReport {
        nmi_per_level: Vec::with_capacity(levels),
        excluded_categories: vec![0; levels],
    };
    let top: Vec<u32> = paths.iter().map(|p| p.label(0)).collect();
    report
        .nmi_per_level
        .push(cluster_nmi(emb, &top, seed ^ rng::fnv1a64("level/0"))?);

    let mut by_category: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &c) in top.iter().enumerate() {
        by_category.entry(c).or_default().push(i);
    }
    for level in 1..levels {
        let mut scores = Vec::new();
        for (&cat, rows) in &by_category {
            let sub = emb.select(ndarray::Axis(0), rows);
            let labels: Vec<u32> = rows.iter().map(|&i| paths[i].label(level)).collect();
            let tag = format!("level/{level}/category/{cat}");
            match cluster_nmi(sub.view(), &labels, seed ^ rng::fnv1a64(&tag))? {
                Some(v) => scores.push(v),
                None => report.excluded_categories[level] += 1,
            }
        }
        report.nmi_per_level.push(if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1], &[5, 5, 3, 3]).unwrap() - 1.0).abs() < 1e-12);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-12);
        let v = nmi(&[0, 0, 1], &[0, 1, 1]).unwrap();
        // MI = (1/3) ln(27/16), H = ln 3 - (2/3) ln 2 for both labelings
        let h = 3f64.ln() - 2.0 / 3.0 * 2f64.ln();
        let expected = (27.0f64 / 16.0).ln() / 3.0 / h;
        assert!((v - expected).abs() < 1e-12, "{v}");
        assert!((v - 0.2742).abs() < 5e-4);
        assert_eq!(nmi(&[1, 1], &[2, 2]).unwrap(), 0.0);
        assert!(matches!(nmi(&[1], &[1, 2]), Err(Error::Structural(_))));
    }

    #[test]
    fn kmeans_two_blobs() {
        let x = array![
            [0.0, 0.0],
            [0.01, 0.0],
            [10.0, 10.0],
            [10.0, 10.01],
            [0.0, 0.02]
        ];
        let r = kmeans(x.view(), 2, 3, KMEANS_MAX_ITERS).unwrap();
        let a = &r.assignments;
        assert_eq!(a[0], a[1]);
        assert_eq!(a[0], a[4]);
        assert_eq!(a[2], a[3]);
        assert_ne!(a[0], a[2]);
    }

    #[test]
    fn kmeans_edge_k() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]];
        assert!(kmeans(x.view(), 1, 0, 100)
            .unwrap()
            .assignments
            .iter()
            .all(|&a| a == 0));
        let r = kmeans(x.view(), 3, 0, 100).unwrap();
        assert_eq!(r.inertia(), 0.0);
        assert_eq!(distinct(r.assignments.iter().copied()), 3);
        assert!(matches!(kmeans(x.view(), 4, 0, 100), Err(Error::Config(_))));
    }

    #[test]
    fn single_category_has_no_top_level_nmi() {
        let x = array![[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]];
        let paths: Vec<_> = [[0, 0], [0, 0], [0, 1], [0, 1]]
            .iter()
            .enumerate()
            .map(|(i, l)| LabelPath::new(i as u64, l.to_vec()))
            .collect();
        let r = clustering_report(x.view(), &paths, 1).unwrap();
        assert_eq!(r.nmi_per_level[0], None);
        assert!((r.nmi_per_level[1].unwrap() - 1.0).abs() < 1e-12);
    }
}
