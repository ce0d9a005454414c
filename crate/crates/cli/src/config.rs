use std::path::{Path, PathBuf};

use hicle_core::data::{SplitSpec, SyntheticSpec};
use hicle_core::hierarchy::PositivesMode;
use hicle_core::losses::{LambdaSchedule, LossConfig, LossKind};
use hicle_core::model::{LrSchedule, ModelDims, ProbeConfig, TrainConfig};
use hicle_core::sampling::{SamplerConfig, SamplingStrategy};
use hicle_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Every tunable of a run under one flat set of JSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,

    pub level_counts: Vec<usize>,
    pub samples_per_instance: usize,
    pub input_dim: usize,
    pub level_sigmas: Vec<f64>,
    pub obs_sigma: f64,
    pub skew_ratio: Option<f64>,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Fraction of categories held out as unseen; `None` keeps all seen.
    pub unseen_fraction: Option<f64>,

    pub batch_size: usize,
    pub sampling: SamplingStrategy,
    pub views_per_sample: usize,

    pub loss: LossKind,
    pub temperature: f64,
    pub lambda_schedule: LambdaSchedule,
    pub positives_mode: PositivesMode,
    pub instance_level: bool,
    pub clamp_floor_stop_gradient: bool,
    pub skip_empty_levels: bool,
    pub supcon_level: usize,

    /// Hidden widths of the encoder; the input width comes from the data.
    pub encoder_dims: Vec<usize>,
    pub projection_dims: Vec<usize>,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub momentum: f64,
    pub aug_sigma: f64,

    pub topk: Vec<usize>,
    /// Label level used as the class for retrieval and the probe; defaults
    /// to the finest level.
    pub class_level: Option<usize>,
    pub num_comparisons: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        let split = SplitSpec::default();
        let sampler = SamplerConfig::default();
        let loss = LossConfig::default();
        let train = TrainConfig::default();
        let probe = ProbeConfig::default();
        Self {
            seed: 0,
            out: None,
            level_counts: synth.level_counts,
            samples_per_instance: synth.samples_per_instance,
            input_dim: synth.input_dim,
            level_sigmas: synth.level_sigmas,
            obs_sigma: synth.obs_sigma,
            skew_ratio: synth.skew_ratio,
            val_fraction: split.val_fraction,
            test_fraction: split.test_fraction,
            unseen_fraction: None,
            batch_size: sampler.batch_size,
            sampling: sampler.strategy,
            views_per_sample: sampler.views_per_sample,
            loss: train.loss,
            temperature: loss.temperature,
            lambda_schedule: loss.lambda_schedule,
            positives_mode: loss.positives_mode,
            instance_level: loss.instance_level,
            clamp_floor_stop_gradient: loss.clamp_floor_stop_gradient,
            skip_empty_levels: loss.skip_empty_levels,
            supcon_level: loss.supcon_level,
            encoder_dims: train.dims.encoder[1..].to_vec(),
            projection_dims: train.dims.projection,
            epochs: train.epochs,
            base_lr: train.lr.base_lr,
            lr_decay_factor: train.lr.decay_factor,
            lr_decay_every: train.lr.decay_every,
            momentum: train.momentum,
            aug_sigma: train.aug_sigma,
            topk: vec![1, 5, 10],
            class_level: None,
            num_comparisons: 10_000,
            probe_epochs: probe.epochs,
            probe_lr: probe.lr,
            probe_batch_size: probe.batch_size,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            level_counts: self.level_counts.clone(),
            samples_per_instance: self.samples_per_instance,
            input_dim: self.input_dim,
            level_sigmas: self.level_sigmas.clone(),
            obs_sigma: self.obs_sigma,
            skew_ratio: self.skew_ratio,
            seed: self.seed,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            temperature: self.temperature,
            lambda_schedule: self.lambda_schedule,
            positives_mode: self.positives_mode,
            instance_level: self.instance_level,
            clamp_floor_stop_gradient: self.clamp_floor_stop_gradient,
            skip_empty_levels: self.skip_empty_levels,
            supcon_level: self.supcon_level,
        }
    }

    pub fn train_config(&self, input_dim: usize) -> TrainConfig {
        let mut encoder = vec![input_dim];
        encoder.extend(&self.encoder_dims);
        TrainConfig {
            loss: self.loss,
            loss_config: self.loss_config(),
            sampler: SamplerConfig {
                batch_size: self.batch_size,
                strategy: self.sampling,
                seed: self.seed,
                views_per_sample: self.views_per_sample,
            },
            dims: ModelDims {
                encoder,
                projection: self.projection_dims.clone(),
            },
            epochs: self.epochs,
            lr: LrSchedule {
                base_lr: self.base_lr,
                decay_factor: self.lr_decay_factor,
                decay_every: self.lr_decay_every,
            },
            momentum: self.momentum,
            seed: self.seed,
            aug_sigma: self.aug_sigma,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            epochs: self.probe_epochs,
            lr: self.probe_lr,
            momentum: self.momentum,
            batch_size: self.probe_batch_size,
            seed: self.seed,
        }
    }

    /// Checks every sub-configuration that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.synthetic_spec().validate()?;
        self.train_config(self.input_dim).validate()?;
        if self.topk.is_empty() || self.topk.contains(&0) {
            return Err(Error::Config("topk must list positive ranks".into()));
        }
        if self.num_comparisons == 0 {
            return Err(Error::Config("num_comparisons must be at least 1".into()));
        }
        if self.probe_epochs == 0 || self.probe_batch_size == 0 {
            return Err(Error::Config(
                "probe_epochs and probe_batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}
