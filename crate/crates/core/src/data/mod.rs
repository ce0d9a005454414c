//! Synthetic hierarchical data, vector-space augmentation and splits.

pub mod io;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::LabelPath;
use crate::rng;

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    #[default]
    Seen,
    Unseen,
}

/// Hierarchical Gaussian mixture.
///
/// `level_counts[l]` is the number of children each level-`l - 1` node has
/// (level 0: number of categories). Every finest-level node is an instance
/// that emits `samples_per_instance` observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub level_counts: Vec<usize>,
    pub samples_per_instance: usize,
    pub input_dim: usize,
    /// Offset scale of each level's mean around its parent; strictly decreasing.
    pub level_sigmas: Vec<f64>,
    pub obs_sigma: f64,
    /// When set, category `c` of `C` gets its finest-level fan-out scaled by
    /// `ratio^(-c / (C - 1))`, giving a geometric size profile whose largest
    /// to smallest category ratio is `ratio`.
    pub skew_ratio: Option<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            level_counts: vec![4, 3, 4],
            samples_per_instance: 16,
            input_dim: 32,
            level_sigmas: vec![1.0, 0.8, 0.6],
            obs_sigma: 0.5,
            skew_ratio: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Skewed layout used for the sampler ablation: 8 categories × 4
    /// subcategories, 30 down to 1 instances per subcategory, 3 samples each.
    pub fn skewed(seed: u64) -> Self {
        Self {
            level_counts: vec![8, 4, 30],
            samples_per_instance: 3,
            skew_ratio: Some(30.0),
            seed,
            ..Self::default()
        }
    }

    pub fn level_count(&self) -> usize {
        self.level_counts.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.level_counts.is_empty() || self.level_counts.contains(&0) {
            return fail(format!(
                "level counts must be non-empty and positive: {:?}",
                self.level_counts
            ));
        }
        if self.samples_per_instance == 0 || self.input_dim == 0 {
            return fail("samples_per_instance and input_dim must be positive".into());
        }
        if self.level_sigmas.len() != self.level_counts.len() {
            return fail(format!(
                "{} level sigmas for {} levels",
                self.level_sigmas.len(),
                self.level_counts.len()
            ));
        }
        if self
            .level_sigmas
            .iter()
            .any(|&s| !(s >= 0.0 && s.is_finite()))
            || self.level_sigmas.windows(2).any(|w| w[1] >= w[0])
        {
            return fail(format!(
                "level sigmas must be strictly decreasing: {:?}",
                self.level_sigmas
            ));
        }
        if !(self.obs_sigma > 0.0 && self.obs_sigma.is_finite()) {
            return fail(format!(
                "obs_sigma must be positive, got {}",
                self.obs_sigma
            ));
        }
        if let Some(r) = self.skew_ratio {
            if !(r >= 1.0 && r.is_finite()) {
                return fail(format!("skew_ratio must be >= 1, got {r}"));
            }
        }
        Ok(())
    }

    fn fan_out(&self, level: usize, category: usize) -> usize {
        let base = self.level_counts[level];
        let last = self.level_count() - 1;
        match self.skew_ratio {
            Some(ratio) if level == last && level > 0 && self.level_counts[0] > 1 => {
                let t = category as f64 / (self.level_counts[0] - 1) as f64;
                ((base as f64) * ratio.powf(-t)).round().max(1.0) as usize
            }
            _ => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub paths: Vec<LabelPath>,
    pub level_count: usize,
    pub splits: Vec<Split>,
    pub partitions: Vec<Partition>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, paths: Vec<LabelPath>, level_count: usize) -> Result<Self> {
        let n = paths.len();
        let ds = Self {
            features,
            paths,
            level_count,
            splits: vec![Split::Train; n],
            partitions: vec![Partition::Seen; n],
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.paths.len();
        if self.features.nrows() != n || self.splits.len() != n || self.partitions.len() != n {
            return Err(Error::Structural("dataset row counts disagree".into()));
        }
        if let Some(p) = self.paths.iter().find(|p| p.depth() != self.level_count) {
            return Err(Error::Structural(format!(
                "sample {} has {} levels, expected {}",
                p.sample_id,
                p.depth(),
                self.level_count
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Row indices with the given split (and partition, when given).
    pub fn indices(&self, split: Split, partition: Option<Partition>) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                self.splits[i] == split && partition.is_none_or(|p| self.partitions[i] == p)
            })
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            paths: rows.iter().map(|&i| self.paths[i].clone()).collect(),
            level_count: self.level_count,
            splits: rows.iter().map(|&i| self.splits[i]).collect(),
            partitions: rows.iter().map(|&i| self.partitions[i]).collect(),
        }
    }

    /// Labels of every row at `level`.
    pub fn labels_at(&self, level: usize) -> Vec<u32> {
        self.paths.iter().map(|p| p.labels[level]).collect()
    }
}

/// Draws the mixture. Labels at each level are globally unique ids assigned
/// in generation order, `sample_id` is the row index, and features are
/// rounded to f32 precision so they survive the `HCB1` round trip exactly.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, "synthetic");
    let levels = spec.level_count();
    let dim = spec.input_dim;

    let mut rows: Vec<Array1<f64>> = Vec::new();
    let mut paths = Vec::new();
    let mut next_label = vec![0u32; levels];
    // depth-first stack of (level, mean, labels so far, category)
    let mut stack: Vec<(usize, Array1<f64>, Vec<u32>, usize)> = Vec::new();
    for c in (0..spec.level_counts[0]).rev() {
        stack.push((0, Array1::zeros(dim), Vec::new(), c));
    }
    // Assign ids in pre-order: pop order is ascending because children are
    // pushed in reverse.
    while let Some((level, parent_mean, mut labels, category)) = stack.pop() {
        let mean = &parent_mean + &gaussian(&mut rng, dim, spec.level_sigmas[level]);
        labels.push(next_label[level]);
        next_label[level] += 1;
        if level + 1 == levels {
            for _ in 0..spec.samples_per_instance {
                let x = &mean + &gaussian(&mut rng, dim, spec.obs_sigma);
                rows.push(x.mapv(|v| v as f32 as f64));
                paths.push(LabelPath::new(paths.len() as u64, labels.clone()));
            }
        } else {
            let children = spec.fan_out(level + 1, category);
            let child_means: Vec<_> = (0..children).map(|_| mean.clone()).collect();
            for m in child_means.into_iter().rev() {
                stack.push((level + 1, m, labels.clone(), category));
            }
        }
    }

    let mut features = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in features.axis_iter_mut(Axis(0)).zip(&rows) {
        dst.assign(src);
    }
    Dataset::new(features, paths, levels)
}

fn gaussian<R: Rng>(rng: &mut R, dim: usize, sigma: f64) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Adds `N(0, σ²)` noise to every coordinate; `σ = 0` returns the input.
pub fn augment<R: Rng>(row: ArrayView1<f64>, sigma: f64, rng: &mut R) -> Array1<f64> {
    if sigma == 0.0 {
        return row.to_owned();
    }
    row.mapv(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            val_fraction: 0.1,
            test_fraction: 0.3,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..1.0).contains(&f);
        if !ok(self.val_fraction)
            || !ok(self.test_fraction)
            || self.val_fraction + self.test_fraction >= 1.0
        {
            return Err(Error::Config(format!(
                "val/test fractions {}/{} must be in [0, 1) and leave room for training",
                self.val_fraction, self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Tags rows train/val/test. Each finest-level label is split separately so
/// every class keeps its share on every side; a sample lands on exactly one
/// side.
pub fn split_samples(mut dataset: Dataset, spec: &SplitSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let finest = dataset.level_count - 1;
    let mut groups: std::collections::BTreeMap<(Partition, u32), Vec<usize>> = Default::default();
    for (i, p) in dataset.paths.iter().enumerate() {
        groups
            .entry((dataset.partitions[i], p.labels[finest]))
            .or_default()
            .push(i);
    }
    let mut rng = rng::stream(seed, "split/samples");
    for mut rows in groups.into_values() {
        rows.shuffle(&mut rng);
        let n = rows.len() as f64;
        let test = (n * spec.test_fraction).round() as usize;
        let val = (n * spec.val_fraction).round() as usize;
        for (k, &i) in rows.iter().enumerate() {
            dataset.splits[i] = if k < test {
                Split::Test
            } else if k < test + val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    Ok(dataset)
}

/// Moves a fraction of whole categories to the unseen partition, then splits
/// each side into train/val/test.
pub fn split_seen_unseen(
    mut dataset: Dataset,
    unseen_category_fraction: f64,
    spec: &SplitSpec,
    seed: u64,
) -> Result<Dataset> {
    let mut categories: Vec<u32> = dataset.paths.iter().map(|p| p.labels[0]).collect();
    categories.sort_unstable();
    categories.dedup();
    if categories.len() < 2 {
        return Err(Error::Config(
            "seen/unseen split needs at least two categories".into(),
        ));
    }
    let unseen = (categories.len() as f64 * unseen_category_fraction).round() as usize;
    if unseen == 0 || unseen >= categories.len() {
        return Err(Error::Config(format!(
            "unseen fraction {unseen_category_fraction} leaves one side empty ({unseen} of {} categories)",
            categories.len()
        )));
    }
    categories.shuffle(&mut rng::stream(seed, "split/categories"));
    let unseen_set: std::collections::BTreeSet<u32> =
        categories[..unseen].iter().copied().collect();
    for (i, p) in dataset.paths.iter().enumerate() {
        dataset.partitions[i] = if unseen_set.contains(&p.labels[0]) {
            Partition::Unseen
        } else {
            Partition::Seen
        };
    }
    split_samples(dataset, spec, seed)
}
