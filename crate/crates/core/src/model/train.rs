use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    backward, forward, init_model, lr_at_epoch, sgd_step, EncoderModel, LrSchedule, ModelDims,
    OptimizerState,
};
use crate::data::{augment, Dataset};
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchyTree, LabelPath};
use crate::losses::{evaluate, Features, LossConfig, LossKind, ViolationCount};
use crate::rng;
use crate::sampling::{plan_epoch, SamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub loss_config: LossConfig,
    pub sampler: SamplerConfig,
    pub dims: ModelDims,
    pub epochs: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub seed: u64,
    /// Standard deviation of the additive Gaussian view augmentation.
    pub aug_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::HiMulConE,
            loss_config: LossConfig::default(),
            sampler: SamplerConfig::default(),
            dims: ModelDims::default(),
            epochs: 50,
            lr: LrSchedule::default(),
            momentum: 0.9,
            seed: 0,
            aug_sigma: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_config.validate()?;
        self.dims.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr.base_lr >= 0.0 && self.lr.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "base_lr must be non-negative, got {}",
                self.lr.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.aug_sigma.is_nan() || self.aug_sigma < 0.0 {
            return Err(Error::Config("aug_sigma must be non-negative".into()));
        }
        if self.loss == LossKind::SimClr && self.sampler.views_per_sample != 2 {
            return Err(Error::Config(
                "simclr needs exactly two views per sample".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch loss.
    pub loss: f64,
    /// Pre-clamp hierarchy violation rate aggregated over the epoch's batches.
    pub violation_rate: Option<f64>,
    pub lr: f64,
    pub batches: usize,
    pub skipped_batches: usize,
    /// Batches whose clamped losses broke coarse ≥ fine ordering (clamping
    /// losses only; always expected to be zero).
    pub clamp_order_violations: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    pub log: Vec<EpochLog>,
}

/// Builds the multi-view batch for `indices`: `views` augmented copies of
/// each sample, consecutive.
fn build_batch(
    data: &Dataset,
    indices: &[usize],
    views: usize,
    sigma: f64,
    rng: &mut rng::StreamRng,
) -> (Array2<f64>, Vec<LabelPath>) {
    let mut x = Array2::zeros((indices.len() * views, data.input_dim()));
    let mut paths = Vec::with_capacity(indices.len() * views);
    for (k, &i) in indices.iter().enumerate() {
        for v in 0..views {
            x.row_mut(k * views + v)
                .assign(&augment(data.features.row(i), sigma, rng));
            paths.push(data.paths[i].clone());
        }
    }
    (x, paths)
}

/// Trains the encoder on every row of `data` (pass the training subset).
///
/// Batches without any positive pair are skipped. The returned model is the
/// frozen encoder used for all downstream evaluation.
pub fn train(data: &Dataset, tree: &HierarchyTree, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training set is empty"));
    }
    if data.input_dim() != cfg.dims.encoder[0] {
        return Err(Error::Config(format!(
            "data has {} features, model expects {}",
            data.input_dim(),
            cfg.dims.encoder[0]
        )));
    }
    let mut model = init_model(&cfg.dims, cfg.seed)?;
    let mut state = OptimizerState::new(&model, cfg.momentum)?;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(&cfg.lr, epoch);
        let sampler = SamplerConfig {
            seed: cfg.seed ^ rng::fnv1a64(&format!("epoch/{epoch}")),
            ..cfg.sampler
        };
        let plan = plan_epoch(&data.paths, tree, &sampler)?;
        let mut aug_rng = rng::stream(cfg.seed, &format!("augment/{epoch}"));

        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut skipped = 0;
        let mut clamp_order_violations = 0;
        let mut violations = ViolationCount::default();
        for indices in &plan.batches {
            let (x, paths) = build_batch(
                data,
                indices,
                plan.views_per_sample,
                cfg.aug_sigma,
                &mut aug_rng,
            );
            if paths.len() < 2 {
                skipped += 1;
                continue;
            }
            let out = match forward(&model, x.view()) {
                Ok(out) => out,
                Err(Error::Numeric(_)) => {
                    return Err(Error::Diverged {
                        epoch,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            let features = Features::unchecked(out.projections);
            let loss = match evaluate(cfg.loss, &features, &paths, &cfg.loss_config) {
                Ok(l) => l,
                Err(Error::DegenerateBatch(_)) | Err(Error::Pairing(_)) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: loss.total,
                });
            }
            if cfg.loss.clamps() && loss.clamp_order_violations() > 0 {
                clamp_order_violations += 1;
            }
            if let Some(v) = loss.violations {
                violations = violations.merge(v);
            }
            loss_sum += loss.total;
            batches += 1;
            let grads = backward(&model, &out.cache, loss.gradient.view())?;
            sgd_step(&mut model.layers, &grads, &mut state, lr)?;
        }
        let entry = EpochLog {
            epoch,
            loss: if batches > 0 {
                loss_sum / batches as f64
            } else {
                f64::NAN
            },
            violation_rate: violations.rate(),
            lr,
            batches,
            skipped_batches: skipped,
            clamp_order_violations,
        };
        log::debug!("{entry:?}");
        log.push(entry);
    }
    Ok(TrainOutcome { model, log })
}

/// Encoder features and unit projections for every row of `x`.
pub fn embed(
    model: &EncoderModel,
    x: ndarray::ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let out = forward(model, x)?;
    Ok((out.encoder_features, out.projections))
}
