//! Contrastive objectives over a batch of unit-norm features.
//!
//! Everything is expressed in terms of the per-pair loss
//! `ℓ(i, p) = -log( exp(s_ip / τ) / Σ_{a≠i} exp(s_ia / τ) )` where `s` is the
//! inner product. Each objective is a weighted sum of such pair losses, so
//! the gradient with respect to the features can be assembled from one
//! coefficient matrix `C`:
//!
//! `∂total/∂F = (C + Cᵀ) F / τ`, with `C[i][a] = W_i q_ia - w_ia`,
//!
//! where `w_ia` is the weight carried by pair `(i, a)`, `W_i = Σ_a w_ia` and
//! `q_ia` is the softmax of anchor `i` over its candidates.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{LabelPath, PairingOptions, PairingTensor, PositivesMode};

const NORM_TOLERANCE: f64 = 1e-6;

/// Feature matrix whose rows are (expected to be) unit-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Features(Array2<f64>);

impl Features {
    /// Wraps `rows`, rejecting any row whose norm is off by more than 1e-6.
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        for (i, row) in rows.axis_iter(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Normalization { row: i, norm });
            }
        }
        Ok(Self(rows))
    }

    /// Wraps `rows` without the norm check. Used by finite-difference
    /// probes, which evaluate the losses slightly off the sphere.
    pub fn unchecked(rows: Array2<f64>) -> Self {
        Self(rows)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Level weight `λ_l = F(l)` for a hierarchy with `L` levels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    /// `exp(1 / (L - l))`
    #[default]
    ExpInvGap,
    /// `exp(l)`
    ExpLevel,
    /// `2^l`
    Pow2Level,
    /// `2^(1 / (L - l))`
    Pow2InvGap,
    /// `1 / (L - l)`
    InvGap,
    /// `1`
    Identity,
    /// `exp(1 / (l + 1))`, decreasing in `l`. Only meant as the inverse
    /// control in schedule comparisons.
    ExpInvLevel,
}

impl LambdaSchedule {
    pub fn is_increasing(self) -> bool {
        !matches!(self, Self::Identity | Self::ExpInvLevel)
    }
}

pub fn lambda_value(schedule: LambdaSchedule, level: usize, levels: usize) -> Result<f64> {
    if level >= levels {
        return Err(Error::Range { level, levels });
    }
    let l = level as f64;
    let gap = (levels - level) as f64;
    Ok(match schedule {
        LambdaSchedule::ExpInvGap => (1.0 / gap).exp(),
        LambdaSchedule::ExpLevel => l.exp(),
        LambdaSchedule::Pow2Level => 2f64.powf(l),
        LambdaSchedule::Pow2InvGap => 2f64.powf(1.0 / gap),
        LambdaSchedule::InvGap => 1.0 / gap,
        LambdaSchedule::Identity => 1.0,
        LambdaSchedule::ExpInvLevel => (1.0 / (l + 1.0)).exp(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    HiMulCon,
    HiConE,
    HiMulConE,
    SupCon,
    SimClr,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::HiMulCon,
        LossKind::HiConE,
        LossKind::HiMulConE,
        LossKind::SupCon,
        LossKind::SimClr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::HiMulCon => "himulcon",
            LossKind::HiConE => "hicone",
            LossKind::HiMulConE => "himulcone",
            LossKind::SupCon => "supcon",
            LossKind::SimClr => "simclr",
        }
    }

    pub fn clamps(self) -> bool {
        matches!(self, LossKind::HiConE | LossKind::HiMulConE)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown loss `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub lambda_schedule: LambdaSchedule,
    pub positives_mode: PositivesMode,
    pub instance_level: bool,
    pub clamp_floor_stop_gradient: bool,
    pub skip_empty_levels: bool,
    /// Label level whose ids act as classes for the SupCon baseline.
    pub supcon_level: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            lambda_schedule: LambdaSchedule::ExpInvGap,
            positives_mode: PositivesMode::Cumulative,
            instance_level: true,
            clamp_floor_stop_gradient: true,
            skip_empty_levels: true,
            supcon_level: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn pairing_options(&self) -> PairingOptions {
        PairingOptions {
            mode: self.positives_mode,
            instance_level: self.instance_level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub anchor: usize,
    pub positive: usize,
    /// `ℓ = -L^pair` before any clamping.
    pub loss: f64,
    /// Value actually aggregated; equals `loss` unless a floor won.
    pub clamped: f64,
    pub floor_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelLosses {
    pub level: usize,
    pub weight: f64,
    /// Floor applied to this level (max over all finer processed levels).
    pub floor: Option<f64>,
    pub pairs: Vec<PairLoss>,
}

/// Violations of "finer pairs never have a higher loss than coarser pairs".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCount {
    pub violations: u64,
    pub comparisons: u64,
}

impl ViolationCount {
    pub fn rate(&self) -> Option<f64> {
        (self.comparisons > 0).then(|| self.violations as f64 / self.comparisons as f64)
    }

    pub fn merge(self, other: ViolationCount) -> ViolationCount {
        ViolationCount {
            violations: self.violations + other.violations,
            comparisons: self.comparisons + other.comparisons,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub total: f64,
    pub levels: Vec<LevelLosses>,
    pub gradient: Array2<f64>,
    /// Pre-clamp violation statistics, `None` when fewer than two LCA levels
    /// carry positive pairs.
    pub violations: Option<ViolationCount>,
}

impl LossOutput {
    pub fn violation_rate(&self) -> Option<f64> {
        self.violations.and_then(|v| v.rate())
    }

    /// Number of (finer, coarser) level pairs where the smallest clamped loss
    /// of the coarser level is below the largest clamped loss of the finer
    /// one. Always zero for the clamping losses.
    pub fn clamp_order_violations(&self) -> usize {
        let extrema: Vec<(f64, f64)> = self
            .levels
            .iter()
            .filter(|l| !l.pairs.is_empty())
            .map(|l| {
                l.pairs
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                        (lo.min(p.clamped), hi.max(p.clamped))
                    })
            })
            .collect();
        extrema.windows(2).filter(|w| w[0].0 < w[1].1).count()
    }
}

/// Similarities, log-normalisers and softmax shared across all levels.
struct SoftmaxTable {
    tau: f64,
    logits: Array2<f64>,
    log_denominator: Vec<f64>,
}

impl SoftmaxTable {
    fn new(features: &Features, tau: f64) -> Result<Self> {
        let f = features.view();
        let n = f.nrows();
        if n < 2 {
            return Err(Error::BatchTooSmall { needed: 2, got: n });
        }
        let logits = f.dot(&f.t()) / tau;
        let log_denominator = (0..n)
            .map(|i| {
                let row = logits.row(i);
                let max = row
                    .iter()
                    .enumerate()
                    .filter(|&(a, _)| a != i)
                    .fold(f64::NEG_INFINITY, |m, (_, &v)| m.max(v));
                let sum: f64 = row
                    .iter()
                    .enumerate()
                    .filter(|&(a, _)| a != i)
                    .map(|(_, &v)| (v - max).exp())
                    .sum();
                max + sum.ln()
            })
            .collect();
        Ok(Self {
            tau,
            logits,
            log_denominator,
        })
    }

    fn pair_loss(&self, i: usize, p: usize) -> f64 {
        self.log_denominator[i] - self.logits[[i, p]]
    }

    /// Gradient of `Σ w · ℓ(i, p)` over the weighted pairs.
    fn gradient(&self, features: &Features, weighted: &[(usize, usize, f64)]) -> Array2<f64> {
        let f = features.view();
        let n = f.nrows();
        let mut anchor_weight = vec![0.0; n];
        let mut coeff = Array2::<f64>::zeros((n, n));
        for &(i, p, w) in weighted {
            anchor_weight[i] += w;
            coeff[[i, p]] -= w;
        }
        for (i, &wi) in anchor_weight.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            for a in 0..n {
                if a != i {
                    let q = (self.logits[[i, a]] - self.log_denominator[i]).exp();
                    coeff[[i, a]] += wi * q;
                }
            }
        }
        let sym = &coeff + &coeff.t();
        sym.dot(&f) / self.tau
    }
}

/// `L^pair(i, p)`: log-probability of `p` under anchor `i`'s softmax over all
/// other rows.
pub fn pair_log_prob(features: &Features, i: usize, p: usize, tau: f64) -> Result<f64> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::BatchTooSmall { needed: 2, got: n });
    }
    if i == p {
        return Err(Error::SelfPair(i));
    }
    if i >= n || p >= n {
        return Err(Error::Structural(format!(
            "pair ({i}, {p}) outside batch of {n}"
        )));
    }
    let f = features.view();
    let logits: Vec<f64> = (0..n).map(|a| f.row(i).dot(&f.row(a)) / tau).collect();
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != i)
        .fold(f64::NEG_INFINITY, |m, (_, &v)| m.max(v));
    let lse = max
        + logits
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != i)
            .map(|(_, &v)| (v - max).exp())
            .sum::<f64>()
            .ln();
    Ok(logits[p] - lse)
}

/// Counts cross-level comparisons where a pair at a finer level has a larger
/// loss than a pair at a coarser level. `losses_by_level[l]` holds the pair
/// losses of level `l`.
pub fn loss_violation_rate(losses_by_level: &[Vec<f64>]) -> Option<ViolationCount> {
    if losses_by_level.iter().filter(|v| !v.is_empty()).count() < 2 {
        return None;
    }
    let sorted: Vec<Vec<f64>> = losses_by_level
        .iter()
        .map(|v| {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            s
        })
        .collect();
    let mut count = ViolationCount::default();
    for fine in 1..sorted.len() {
        for coarse in 0..fine {
            let coarse_sorted = &sorted[coarse];
            for &x in &sorted[fine] {
                // coarser pairs with a strictly smaller loss
                let below = coarse_sorted.partition_point(|&c| c < x);
                count.violations += below as u64;
            }
            count.comparisons += (sorted[fine].len() * coarse_sorted.len()) as u64;
        }
    }
    Some(count)
}

/// Groups every ordered positive pair (LCA ≥ 0) by its exact LCA level and
/// counts hierarchy violations of the raw pair losses.
fn lca_grouped_violations(table: &SoftmaxTable, pairing: &PairingTensor) -> Option<ViolationCount> {
    let lca = pairing.lca();
    let n = lca.nrows();
    let levels = pairing.level_count();
    let mut groups = vec![Vec::new(); levels];
    for i in 0..n {
        for j in 0..n {
            let l = lca[[i, j]];
            if i != j && l >= 0 {
                groups[l as usize].push(table.pair_loss(i, j));
            }
        }
    }
    loss_violation_rate(&groups)
}

/// Training-time hierarchy violation statistics for any feature batch,
/// independent of the objective being optimised.
pub fn batch_violations(
    features: &Features,
    paths: &[LabelPath],
    cfg: &LossConfig,
) -> Result<Option<ViolationCount>> {
    let table = SoftmaxTable::new(features, cfg.temperature)?;
    let pairing = PairingTensor::build(paths, cfg.pairing_options())?;
    Ok(lca_grouped_violations(&table, &pairing))
}

/// Floors for a list of per-level values, processed from the finest level
/// (last) to the coarsest (first). Returns the clamped values.
pub fn clamp_levels(raw_by_level: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut floor: Option<f64> = None;
    let mut out = vec![Vec::new(); raw_by_level.len()];
    for (level, raw) in raw_by_level.iter().enumerate().rev() {
        out[level] = raw
            .iter()
            .map(|&x| match floor {
                Some(f) if f > x => f,
                _ => x,
            })
            .collect();
        if let Some(m) = raw.iter().copied().reduce(f64::max) {
            floor = Some(floor.map_or(m, |f| f.max(m)));
        }
    }
    out
}

fn check_batch(features: &Features, rows: usize) -> Result<()> {
    if features.rows() != rows {
        return Err(Error::Structural(format!(
            "{} feature rows but {rows} labels",
            features.rows()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Floor {
    value: f64,
    anchor: usize,
    positive: usize,
}

fn hierarchical(
    kind: LossKind,
    features: &Features,
    paths: &[LabelPath],
    cfg: &LossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    check_batch(features, paths.len())?;
    let pairing = PairingTensor::build(paths, cfg.pairing_options())?;
    let table = SoftmaxTable::new(features, cfg.temperature)?;
    let levels = pairing.level_count();
    let n = pairing.batch_size();

    let use_lambda = matches!(kind, LossKind::HiMulCon | LossKind::HiMulConE);
    let clamp = kind.clamps();

    let mut per_level: Vec<LevelLosses> = (0..levels)
        .map(|level| {
            let weight = if use_lambda {
                lambda_value(cfg.lambda_schedule, level, levels)
            } else {
                Ok(1.0)
            }?;
            let pairs = pairing
                .positive_pairs(level)
                .into_iter()
                .map(|(i, p)| {
                    let loss = table.pair_loss(i, p);
                    PairLoss {
                        anchor: i,
                        positive: p,
                        loss,
                        clamped: loss,
                        floor_active: false,
                    }
                })
                .collect();
            Ok(LevelLosses {
                level,
                weight,
                floor: None,
                pairs,
            })
        })
        .collect::<Result<_>>()?;

    let active_levels = per_level.iter().filter(|l| !l.pairs.is_empty()).count();
    if active_levels == 0 {
        return Err(Error::DegenerateBatch("no positive pair at any level"));
    }
    let level_norm = if cfg.skip_empty_levels {
        active_levels
    } else {
        levels
    } as f64;

    // (anchor, partner, weight) whose pair loss gradient enters the total
    let mut weighted: Vec<(usize, usize, f64)> = Vec::new();
    let mut total = 0.0;
    let mut floor: Option<Floor> = None;
    for level in per_level.iter_mut().rev() {
        if level.pairs.is_empty() {
            continue;
        }
        level.floor = if clamp { floor.map(|f| f.value) } else { None };
        let mut positives_per_anchor = vec![0usize; n];
        for p in &level.pairs {
            positives_per_anchor[p.anchor] += 1;
        }
        let mut level_max: Option<Floor> = None;
        for pair in level.pairs.iter_mut() {
            let w = level.weight / (level_norm * positives_per_anchor[pair.anchor] as f64);
            match floor {
                Some(f) if clamp && f.value > pair.loss => {
                    pair.clamped = f.value;
                    pair.floor_active = true;
                    if !cfg.clamp_floor_stop_gradient {
                        weighted.push((f.anchor, f.positive, w));
                    }
                }
                _ => weighted.push((pair.anchor, pair.positive, w)),
            }
            total += w * pair.clamped;
            if level_max.is_none_or(|m| pair.loss > m.value) {
                level_max = Some(Floor {
                    value: pair.loss,
                    anchor: pair.anchor,
                    positive: pair.positive,
                });
            }
        }
        if let Some(m) = level_max {
            if floor.is_none_or(|f| m.value > f.value) {
                floor = Some(m);
            }
        }
    }

    let gradient = table.gradient(features, &weighted);
    Ok(LossOutput {
        total,
        levels: per_level,
        gradient,
        violations: lca_grouped_violations(&table, &pairing),
    })
}

/// Hierarchical multi-label contrastive loss: level-weighted average of the
/// per-anchor mean pair losses.
pub fn himulcon(features: &Features, paths: &[LabelPath], cfg: &LossConfig) -> Result<LossOutput> {
    hierarchical(LossKind::HiMulCon, features, paths, cfg)
}

/// Hierarchy-constraint-enforcing loss: every pair loss is floored by the
/// largest pair loss of all finer levels; levels are weighted uniformly.
pub fn hicone(features: &Features, paths: &[LabelPath], cfg: &LossConfig) -> Result<LossOutput> {
    hierarchical(LossKind::HiConE, features, paths, cfg)
}

/// [`hicone`] with the level weights of [`himulcon`].
pub fn himulcone(features: &Features, paths: &[LabelPath], cfg: &LossConfig) -> Result<LossOutput> {
    hierarchical(LossKind::HiMulConE, features, paths, cfg)
}

fn single_level_output(
    table: &SoftmaxTable,
    features: &Features,
    positives: &[Vec<usize>],
) -> LossOutput {
    let mut total = 0.0;
    let mut weighted = Vec::new();
    let mut pairs = Vec::new();
    for (i, ps) in positives.iter().enumerate() {
        if ps.is_empty() {
            continue;
        }
        let w = 1.0 / ps.len() as f64;
        for &p in ps {
            let loss = table.pair_loss(i, p);
            total += w * loss;
            weighted.push((i, p, w));
            pairs.push(PairLoss {
                anchor: i,
                positive: p,
                loss,
                clamped: loss,
                floor_active: false,
            });
        }
    }
    let gradient = table.gradient(features, &weighted);
    LossOutput {
        total,
        levels: vec![LevelLosses {
            level: 0,
            weight: 1.0,
            floor: None,
            pairs,
        }],
        gradient,
        violations: None,
    }
}

/// Supervised contrastive loss over integer class labels.
pub fn supcon(features: &Features, classes: &[u64], tau: f64) -> Result<LossOutput> {
    check_batch(features, classes.len())?;
    let table = SoftmaxTable::new(features, tau)?;
    let positives: Vec<Vec<usize>> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            classes
                .iter()
                .enumerate()
                .filter(|&(j, d)| j != i && d == c)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    if positives.iter().all(Vec::is_empty) {
        return Err(Error::DegenerateBatch("no two rows share a class"));
    }
    Ok(single_level_output(&table, features, &positives))
}

/// InfoNCE over augmentation pairs; `partner[i]` is the other view of row `i`.
pub fn simclr(features: &Features, partner: &[usize], tau: f64) -> Result<LossOutput> {
    check_batch(features, partner.len())?;
    for (i, &j) in partner.iter().enumerate() {
        if j >= partner.len() || j == i || partner[j] != i {
            return Err(Error::Pairing(format!(
                "row {i} is not matched to a distinct partner"
            )));
        }
    }
    let table = SoftmaxTable::new(features, tau)?;
    let positives: Vec<Vec<usize>> = partner.iter().map(|&j| vec![j]).collect();
    Ok(single_level_output(&table, features, &positives))
}

/// Partner map for a batch where every sample id occurs exactly twice.
pub fn view_partners(paths: &[LabelPath]) -> Result<Vec<usize>> {
    let mut rows: std::collections::BTreeMap<u64, Vec<usize>> = Default::default();
    for (i, p) in paths.iter().enumerate() {
        rows.entry(p.sample_id).or_default().push(i);
    }
    let mut partner = vec![0; paths.len()];
    for (id, r) in rows {
        match r[..] {
            [a, b] => {
                partner[a] = b;
                partner[b] = a;
            }
            _ => {
                return Err(Error::Pairing(format!(
                    "sample {id} has {} views, expected 2",
                    r.len()
                )))
            }
        }
    }
    Ok(partner)
}

/// Evaluates any objective on a batch described by label paths. SupCon uses
/// the labels at `cfg.supcon_level` as classes; SimCLR pairs rows sharing a
/// sample id. Violation statistics are attached for every objective.
pub fn evaluate(
    kind: LossKind,
    features: &Features,
    paths: &[LabelPath],
    cfg: &LossConfig,
) -> Result<LossOutput> {
    match kind {
        LossKind::HiMulCon | LossKind::HiConE | LossKind::HiMulConE => {
            hierarchical(kind, features, paths, cfg)
        }
        LossKind::SupCon | LossKind::SimClr => {
            cfg.validate()?;
            let mut out = if kind == LossKind::SupCon {
                let level = cfg.supcon_level;
                let classes = paths
                    .iter()
                    .map(|p| {
                        p.labels.get(level).map(|&c| c as u64).ok_or(Error::Range {
                            level,
                            levels: p.depth(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                supcon(features, &classes, cfg.temperature)?
            } else {
                simclr(features, &view_partners(paths)?, cfg.temperature)?
            };
            out.violations = batch_violations(features, paths, cfg)?;
            Ok(out)
        }
    }
}
