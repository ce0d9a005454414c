//! Label taxonomy: label paths, the tree they induce, lowest-common-ancestor
//! levels and the per-level positive-pair masks consumed by the losses.
//!
//! Levels are indexed from the coarsest label (level 0) to the finest
//! (level `L - 1`). When the instance level is enabled the sample id acts as
//! an extra level `L`, so two augmented views of one sample are positives at
//! every level.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labels of one sample from coarsest to finest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelPath {
    pub sample_id: u64,
    pub labels: Vec<u32>,
}

impl LabelPath {
    pub fn new(sample_id: u64, labels: Vec<u32>) -> Self {
        Self { sample_id, labels }
    }

    pub fn depth(&self) -> usize {
        self.labels.len()
    }

    /// Label at `level`, panicking on out-of-range levels.
    pub fn label(&self, level: usize) -> u32 {
        self.labels[level]
    }
}

/// Deepest level on which `a` and `b` agree on every label from the root
/// down, or `-1` when they already differ at level 0.
pub fn lca_level(a: &LabelPath, b: &LabelPath) -> Result<i32> {
    if a.labels.len() != b.labels.len() {
        return Err(Error::Structural(format!(
            "label paths of different depth ({} vs {})",
            a.labels.len(),
            b.labels.len()
        )));
    }
    Ok(common_prefix(&a.labels, &b.labels) as i32 - 1)
}

fn common_prefix(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn check_depths(paths: &[LabelPath]) -> Result<usize> {
    let first = paths.first().ok_or(Error::EmptyInput("no label paths"))?;
    let depth = first.depth();
    if depth == 0 {
        return Err(Error::Structural(
            "label paths must have at least one level".into(),
        ));
    }
    if let Some((i, p)) = paths.iter().enumerate().find(|(_, p)| p.depth() != depth) {
        return Err(Error::Structural(format!(
            "path {i} has {} levels, expected {depth}",
            p.depth()
        )));
    }
    Ok(depth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeNode {
    /// `None` only for the virtual root.
    pub parent: Option<usize>,
    /// `-1` for the virtual root.
    pub level: i32,
    pub label: u32,
}

/// The taxonomy induced by a set of label paths.
///
/// Node ids are assigned in (depth, lexicographic prefix) order, so the tree
/// is identical for any permutation of the input paths.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyTree {
    level_count: usize,
    nodes: Vec<TreeNode>,
    children: Vec<Vec<usize>>,
    prefix_index: BTreeMap<Vec<u32>, usize>,
    leaf_index: BTreeMap<u64, usize>,
}

impl HierarchyTree {
    pub const ROOT: usize = 0;

    pub fn build(paths: &[LabelPath]) -> Result<Self> {
        let level_count = check_depths(paths)?;

        let mut prefixes: BTreeSet<Vec<u32>> = BTreeSet::new();
        for p in paths {
            for len in 1..=level_count {
                prefixes.insert(p.labels[..len].to_vec());
            }
        }
        let mut ordered: Vec<Vec<u32>> = prefixes.into_iter().collect();
        ordered.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));

        let mut nodes = vec![TreeNode {
            parent: None,
            level: -1,
            label: 0,
        }];
        let mut children = vec![Vec::new()];
        let mut prefix_index = BTreeMap::new();
        prefix_index.insert(Vec::new(), Self::ROOT);
        for prefix in ordered {
            let parent = prefix_index[&prefix[..prefix.len() - 1]];
            let id = nodes.len();
            nodes.push(TreeNode {
                parent: Some(parent),
                level: prefix.len() as i32 - 1,
                label: *prefix.last().expect("non-empty prefix"),
            });
            children.push(Vec::new());
            children[parent].push(id);
            prefix_index.insert(prefix, id);
        }

        let mut leaf_index = BTreeMap::new();
        for p in paths {
            let leaf = prefix_index[&p.labels];
            if let Some(prev) = leaf_index.insert(p.sample_id, leaf) {
                if prev != leaf {
                    return Err(Error::Structural(format!(
                        "sample {} appears under two different label paths",
                        p.sample_id
                    )));
                }
            }
        }

        Ok(Self {
            level_count,
            nodes,
            children,
            prefix_index,
            leaf_index,
        })
    }

    pub fn level_count(&self) -> usize {
        self.level_count
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.nodes[node].parent
    }

    /// Number of nodes at each level `0..L`.
    pub fn nodes_per_level(&self) -> Vec<usize> {
        let mut counts = vec![0; self.level_count];
        for n in &self.nodes[1..] {
            counts[n.level as usize] += 1;
        }
        counts
    }

    /// Node reached by following `path` down to `level`.
    pub fn node_at(&self, path: &LabelPath, level: usize) -> Option<usize> {
        if level >= self.level_count || path.depth() != self.level_count {
            return None;
        }
        self.prefix_index.get(&path.labels[..=level]).copied()
    }

    /// Finest-level node holding the sample.
    pub fn leaf_of(&self, sample_id: u64) -> Option<usize> {
        self.leaf_index.get(&sample_id).copied()
    }

    /// Number of distinct samples registered at the leaves.
    pub fn sample_count(&self) -> usize {
        self.leaf_index.len()
    }
}

/// Which pairs count as positives at level `l`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositivesMode {
    /// Positive at `l` when the paths agree on levels `0..=l`.
    #[default]
    Cumulative,
    /// Positive at `l` only when the paths diverge right after `l`.
    ExactLca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairingOptions {
    pub mode: PositivesMode,
    pub instance_level: bool,
}

impl Default for PairingOptions {
    fn default() -> Self {
        Self {
            mode: PositivesMode::Cumulative,
            instance_level: true,
        }
    }
}

/// Per-level positive masks for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingTensor {
    lca: Array2<i32>,
    positives: Vec<Array2<bool>>,
    mode: PositivesMode,
    label_levels: usize,
}

impl PairingTensor {
    pub fn build(paths: &[LabelPath], options: PairingOptions) -> Result<Self> {
        if paths.len() < 2 {
            return Err(Error::BatchTooSmall {
                needed: 2,
                got: paths.len(),
            });
        }
        let label_levels = check_depths(paths)?;
        let n = paths.len();
        let mut lca = Array2::<i32>::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let mut level = common_prefix(&paths[i].labels, &paths[j].labels) as i32 - 1;
                if options.instance_level
                    && level == label_levels as i32 - 1
                    && paths[i].sample_id == paths[j].sample_id
                {
                    level += 1;
                }
                lca[[i, j]] = level;
                lca[[j, i]] = level;
            }
        }

        let levels = label_levels + usize::from(options.instance_level);
        let positives = (0..levels)
            .map(|l| {
                let l = l as i32;
                Array2::from_shape_fn((n, n), |(i, j)| {
                    i != j
                        && match options.mode {
                            PositivesMode::Cumulative => lca[[i, j]] >= l,
                            PositivesMode::ExactLca => lca[[i, j]] == l,
                        }
                })
            })
            .collect();

        Ok(Self {
            lca,
            positives,
            mode: options.mode,
            label_levels,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lca.nrows()
    }

    /// Levels carrying positive masks, including the instance level if enabled.
    pub fn level_count(&self) -> usize {
        self.positives.len()
    }

    pub fn label_levels(&self) -> usize {
        self.label_levels
    }

    pub fn mode(&self) -> PositivesMode {
        self.mode
    }

    pub fn lca(&self) -> &Array2<i32> {
        &self.lca
    }

    pub fn positives(&self, level: usize) -> &Array2<bool> {
        &self.positives[level]
    }

    /// Positive partners of `anchor` at `level`, ascending.
    pub fn positives_of(&self, level: usize, anchor: usize) -> impl Iterator<Item = usize> + '_ {
        self.positives[level]
            .row(anchor)
            .into_iter()
            .enumerate()
            .filter_map(|(j, &p)| p.then_some(j))
            .collect::<Vec<_>>()
            .into_iter()
    }

    /// Ordered (i, j) pairs that are positive at `level`.
    pub fn positive_pairs(&self, level: usize) -> Vec<(usize, usize)> {
        self.positives[level]
            .indexed_iter()
            .filter_map(|((i, j), &p)| p.then_some((i, j)))
            .collect()
    }
}

/// Reads the labels CSV (`id,level_0,...,level_{L-1}`).
pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<LabelPath>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let levels = headers.len().saturating_sub(1);
    if headers.get(0) != Some("id")
        || levels == 0
        || headers
            .iter()
            .skip(1)
            .enumerate()
            .any(|(l, h)| h != format!("level_{l}"))
    {
        return Err(Error::Structural(format!(
            "labels header must be id,level_0,...; got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut paths = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |field: Option<&str>| -> Result<u64> {
            field
                .and_then(|s| s.trim().parse::<u64>().ok())
                .ok_or_else(|| Error::Structural(format!("row {}: bad integer field", row + 1)))
        };
        let sample_id = parse(record.get(0))?;
        let labels = (1..=levels)
            .map(|c| {
                parse(record.get(c)).and_then(|v| {
                    u32::try_from(v).map_err(|_| {
                        Error::Structural(format!("row {}: label overflows u32", row + 1))
                    })
                })
            })
            .collect::<Result<Vec<_>>>()?;
        paths.push(LabelPath::new(sample_id, labels));
    }
    Ok(paths)
}

/// Writes the labels CSV. All paths must share the same depth.
pub fn write_labels_csv<W: Write>(writer: W, paths: &[LabelPath], levels: usize) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend((0..levels).map(|l| format!("level_{l}")));
    wtr.write_record(&header)?;
    for p in paths {
        if p.depth() != levels {
            return Err(Error::Structural(format!(
                "sample {} has {} levels, expected {levels}",
                p.sample_id,
                p.depth()
            )));
        }
        let mut rec = vec![p.sample_id.to_string()];
        rec.extend(p.labels.iter().map(u32::to_string));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<labels>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths(rows: &[&[u32]]) -> Vec<LabelPath> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| LabelPath::new(i as u64, r.to_vec()))
            .collect()
    }

    fn no_instance(mode: PositivesMode) -> PairingOptions {
        PairingOptions {
            mode,
            instance_level: false,
        }
    }

    #[test]
    fn one_level_tree() {
        let t = HierarchyTree::build(&paths(&[&[0], &[1]])).unwrap();
        assert_eq!(t.nodes().len(), 3);
        assert_eq!(t.nodes_per_level(), vec![2]);
        assert_eq!(t.nodes()[0].level, -1);
    }

    #[test]
    fn two_level_tree_counts_prefixes() {
        let t = HierarchyTree::build(&paths(&[&[0, 0], &[0, 1], &[1, 0]])).unwrap();
        assert_eq!(t.nodes_per_level(), vec![2, 3]);
        for (id, n) in t.nodes().iter().enumerate().skip(1) {
            let parent = n.parent.unwrap();
            assert_eq!(t.nodes()[parent].level, n.level - 1);
            assert!(t.children(parent).contains(&id));
        }
    }

    #[test]
    fn tree_rejects_bad_input() {
        assert!(matches!(
            HierarchyTree::build(&[]),
            Err(Error::EmptyInput(_))
        ));
        let mixed = vec![LabelPath::new(0, vec![0, 1]), LabelPath::new(1, vec![0])];
        assert!(matches!(
            HierarchyTree::build(&mixed),
            Err(Error::Structural(_))
        ));
        let clash = vec![LabelPath::new(0, vec![0, 1]), LabelPath::new(0, vec![0, 2])];
        assert!(matches!(
            HierarchyTree::build(&clash),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn tree_is_order_independent() {
        let mut p = paths(&[&[2, 5, 7], &[2, 5, 9], &[3, 1, 1], &[2, 6, 0]]);
        let a = HierarchyTree::build(&p).unwrap();
        p.reverse();
        let b = HierarchyTree::build(&p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lca_examples() {
        let a = LabelPath::new(0, vec![2, 5, 7]);
        assert_eq!(lca_level(&a, &LabelPath::new(1, vec![2, 5, 9])).unwrap(), 1);
        assert_eq!(lca_level(&a, &a).unwrap(), 2);
        assert_eq!(
            lca_level(
                &LabelPath::new(0, vec![3, 1]),
                &LabelPath::new(1, vec![4, 1])
            )
            .unwrap(),
            -1
        );
        assert!(lca_level(&a, &LabelPath::new(1, vec![2])).is_err());
    }

    #[test]
    fn cumulative_small_batch() {
        let t = PairingTensor::build(
            &paths(&[&[0, 0], &[0, 1], &[1, 0]]),
            no_instance(PositivesMode::Cumulative),
        )
        .unwrap();
        assert_eq!(t.level_count(), 2);
        assert_eq!(t.positive_pairs(0), vec![(0, 1), (1, 0)]);
        assert!(t.positive_pairs(1).is_empty());
    }

    #[test]
    fn identical_paths_positive_everywhere() {
        let t = PairingTensor::build(
            &paths(&[&[0, 0], &[0, 0]]),
            no_instance(PositivesMode::Cumulative),
        )
        .unwrap();
        assert_eq!(t.positive_pairs(0), vec![(0, 1), (1, 0)]);
        assert_eq!(t.positive_pairs(1), vec![(0, 1), (1, 0)]);
        assert_eq!(t.lca()[[0, 0]], 1);
    }

    #[test]
    fn instance_level_separates_views() {
        let p = vec![
            LabelPath::new(7, vec![0, 0]),
            LabelPath::new(7, vec![0, 0]),
            LabelPath::new(8, vec![0, 0]),
        ];
        let t = PairingTensor::build(&p, PairingOptions::default()).unwrap();
        assert_eq!(t.level_count(), 3);
        assert_eq!(t.lca()[[0, 0]], 2);
        assert_eq!(t.lca()[[0, 1]], 2);
        assert_eq!(t.lca()[[0, 2]], 1);
        assert_eq!(t.positive_pairs(2), vec![(0, 1), (1, 0)]);
        assert_eq!(t.positive_pairs(1).len(), 6);
    }

    #[test]
    fn exact_lca_partitions_pairs() {
        let p = paths(&[&[0, 0], &[0, 1], &[0, 0], &[1, 0]]);
        let t = PairingTensor::build(&p, no_instance(PositivesMode::ExactLca)).unwrap();
        assert_eq!(t.positive_pairs(1), vec![(0, 2), (2, 0)]);
        assert_eq!(t.positive_pairs(0), vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
    }

    #[test]
    fn pairing_needs_two_rows() {
        let err = PairingTensor::build(&paths(&[&[0]]), PairingOptions::default()).unwrap_err();
        assert!(matches!(err, Error::BatchTooSmall { needed: 2, got: 1 }));
    }

    #[test]
    fn labels_csv_round_trip() {
        let p = paths(&[&[0, 3], &[1, 2], &[1, 4]]);
        let mut buf = Vec::new();
        write_labels_csv(&mut buf, &p, 2).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,level_0,level_1\n0,0,3\n"));
        assert_eq!(read_labels_csv(&buf[..]).unwrap(), p);
    }

    #[test]
    fn labels_csv_rejects_bad_header() {
        let text = "id,lvl\n0,1\n";
        assert!(read_labels_csv(text.as_bytes()).is_err());
        let text = "id,level_0\n0,x\n";
        assert!(read_labels_csv(text.as_bytes()).is_err());
    }
}
