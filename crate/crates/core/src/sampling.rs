//! Epoch planning.
//!
//! The hierarchical strategy builds batches out of anchor groups: a randomly
//! chosen anchor plus, for every level from the finest to the coarsest, one
//! unused sample whose lowest common ancestor with the anchor is exactly that
//! level. Each dataset index is used at most once per epoch; a level whose
//! sibling subtree has no unused sample left is skipped for that anchor.
//! Every batch opens with a complete group, so each batch carries positives
//! at the finest level the tree allows.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchyTree, LabelPath};
use crate::rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    #[default]
    Hierarchical,
    CategoryLevel,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Rows per batch, counting every augmented view.
    pub batch_size: usize,
    pub strategy: SamplingStrategy,
    pub seed: u64,
    pub views_per_sample: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            strategy: SamplingStrategy::Hierarchical,
            seed: 0,
            views_per_sample: 2,
        }
    }
}

impl SamplerConfig {
    /// Distinct dataset indices that fit in one batch.
    pub fn samples_per_batch(&self) -> usize {
        self.batch_size / self.views_per_sample.max(1)
    }

    /// Largest anchor group the strategy can produce for `levels` label levels.
    pub fn group_size(&self, levels: usize) -> usize {
        match self.strategy {
            SamplingStrategy::Hierarchical => levels + 1,
            SamplingStrategy::CategoryLevel => 2,
            SamplingStrategy::Random => 1,
        }
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        if self.views_per_sample == 0 {
            return Err(Error::Config("views_per_sample must be at least 1".into()));
        }
        let needed = self.views_per_sample * self.group_size(levels);
        if self.batch_size < needed.max(2) {
            return Err(Error::Config(format!(
                "batch_size {} too small for {:?} sampling with {} views over {levels} levels (need {})",
                self.batch_size,
                self.strategy,
                self.views_per_sample,
                needed.max(2)
            )));
        }
        Ok(())
    }
}

/// One anchor and the companions drawn for it, indexed by LCA level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorGroup {
    pub anchor: usize,
    /// `companions[l]` shares ancestry with the anchor exactly down to level
    /// `l`; `None` when no unused sample was available there.
    pub companions: Vec<Option<usize>>,
}

impl AnchorGroup {
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.anchor).chain(self.companions.iter().rev().flatten().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochPlan {
    pub batches: Vec<Vec<usize>>,
    /// Anchor groups per batch (empty for the random strategy).
    pub groups: Vec<Vec<AnchorGroup>>,
    /// Indices left out because no complete anchor group could be formed.
    pub unplanned: Vec<usize>,
    pub views_per_sample: usize,
}

impl EpochPlan {
    pub fn planned_indices(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

/// Dataset indices below each tree node.
fn node_members(paths: &[LabelPath], tree: &HierarchyTree) -> Result<Vec<Vec<usize>>> {
    let mut members = vec![Vec::new(); tree.nodes().len()];
    for (idx, p) in paths.iter().enumerate() {
        for level in 0..tree.level_count() {
            let node = tree.node_at(p, level).ok_or_else(|| {
                Error::Structural(format!("sample {} is not in the tree", p.sample_id))
            })?;
            members[node].push(idx);
        }
    }
    Ok(members)
}

struct Planner {
    /// Tree node of every sample at every level.
    chains: Vec<Vec<usize>>,
    members: Vec<Vec<usize>>,
    /// Samples below each node, in total and still unused this epoch.
    totals: Vec<usize>,
    unused: Vec<usize>,
    used: Vec<bool>,
    strategy: SamplingStrategy,
    rng: rng::StreamRng,
}

impl Planner {
    fn new(
        paths: &[LabelPath],
        tree: &HierarchyTree,
        strategy: SamplingStrategy,
        rng: rng::StreamRng,
    ) -> Result<Self> {
        let members = node_members(paths, tree)?;
        let chains = paths
            .iter()
            .map(|p| {
                (0..tree.level_count())
                    .map(|l| tree.node_at(p, l).expect("indexed above"))
                    .collect()
            })
            .collect();
        let totals: Vec<usize> = members.iter().map(Vec::len).collect();
        Ok(Self {
            chains,
            members,
            unused: totals.clone(),
            totals,
            used: vec![false; paths.len()],
            strategy,
            rng,
        })
    }

    fn mark_used(&mut self, idx: usize) {
        self.used[idx] = true;
        for &node in &self.chains[idx] {
            self.unused[node] -= 1;
        }
    }

    /// Candidates for each companion slot of `anchor`, counted in `counts`
    /// (either the full tree or the unused pool).
    fn slot_sizes(&self, anchor: usize, counts: &[usize], anchor_counted: bool) -> Vec<usize> {
        let chain = &self.chains[anchor];
        let own = usize::from(anchor_counted);
        match self.strategy {
            SamplingStrategy::Hierarchical => (0..chain.len())
                .map(|l| match chain.get(l + 1) {
                    Some(&child) => counts[chain[l]] - counts[child],
                    None => counts[chain[l]] - own,
                })
                .collect(),
            _ => vec![counts[chain[0]] - own],
        }
    }

    /// Whether `anchor` can still get a companion at every slot the full
    /// tree offers it.
    fn complete(&self, anchor: usize) -> bool {
        let feasible = self.slot_sizes(anchor, &self.totals, true);
        let available = self.slot_sizes(anchor, &self.unused, !self.used[anchor]);
        feasible
            .iter()
            .zip(&available)
            .all(|(&f, &a)| f == 0 || a > 0)
    }

    /// Random unused index below `node` but outside `exclude` (a child of
    /// `node` or the anchor's own leaf).
    fn draw(&mut self, node: usize, exclude: Option<usize>, anchor: usize) -> Option<usize> {
        let excluded = exclude.map(|e| &self.members[e]);
        let candidates: Vec<usize> = self.members[node]
            .iter()
            .copied()
            .filter(|&i| {
                i != anchor
                    && !self.used[i]
                    && excluded.is_none_or(|ex| ex.binary_search(&i).is_err())
            })
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let pick = candidates[self.rng.random_range(0..candidates.len())];
        self.mark_used(pick);
        Some(pick)
    }

    fn group(&mut self, anchor: usize) -> AnchorGroup {
        self.mark_used(anchor);
        let nodes = self.chains[anchor].clone();
        let mut companions = vec![None; nodes.len()];
        match self.strategy {
            SamplingStrategy::Hierarchical => {
                for level in (0..nodes.len()).rev() {
                    companions[level] =
                        self.draw(nodes[level], nodes.get(level + 1).copied(), anchor);
                }
            }
            _ => companions[0] = self.draw(nodes[0], None, anchor),
        }
        AnchorGroup { anchor, companions }
    }
}

/// Plans one epoch.
///
/// Group strategies open every batch with a complete anchor group, taking
/// the first anchor in the shuffled order that can still get a companion at
/// every level where the tree has one; the rest of the batch is filled with
/// groups in shuffled order, partial ones included. The epoch ends when no
/// unused sample can lead a complete group, leaving the remainder in
/// [`EpochPlan::unplanned`].
pub fn plan_epoch(
    paths: &[LabelPath],
    tree: &HierarchyTree,
    cfg: &SamplerConfig,
) -> Result<EpochPlan> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("dataset has no samples"));
    }
    let levels = tree.level_count();
    cfg.validate(levels)?;
    let capacity = cfg.samples_per_batch();
    let mut rng = rng::stream(cfg.seed, "sampler");

    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.shuffle(&mut rng);

    if cfg.strategy == SamplingStrategy::Random {
        return Ok(EpochPlan {
            batches: order.chunks(capacity).map(<[usize]>::to_vec).collect(),
            groups: Vec::new(),
            unplanned: Vec::new(),
            views_per_sample: cfg.views_per_sample,
        });
    }

    let mut planner = Planner::new(paths, tree, cfg.strategy, rng)?;
    let group_size = cfg.group_size(levels);
    let mut batches = Vec::new();
    let mut groups = Vec::new();
    let mut cursor = 0;
    while let Some(lead) = order[cursor..]
        .iter()
        .copied()
        .find(|&a| !planner.used[a] && planner.complete(a))
    {
        let first = planner.group(lead);
        let mut batch: Vec<usize> = first.members().collect();
        let mut batch_groups = vec![first];
        while capacity - batch.len() >= group_size {
            while cursor < order.len() && planner.used[order[cursor]] {
                cursor += 1;
            }
            let Some(&anchor) = order.get(cursor) else {
                break;
            };
            let group = planner.group(anchor);
            batch.extend(group.members());
            batch_groups.push(group);
        }
        batches.push(batch);
        groups.push(batch_groups);
    }
    let unplanned = order.into_iter().filter(|&i| !planner.used[i]).collect();
    Ok(EpochPlan {
        batches,
        groups,
        unplanned,
        views_per_sample: cfg.views_per_sample,
    })
}
