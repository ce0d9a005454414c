use serde::{Deserialize, Serialize};

use super::{EncoderModel, Gradients, Layer};
use crate::error::{Error, Result};

/// Step schedule: `base_lr × decay_factor^⌊epoch / decay_every⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 0.1,
            decay_factor: 0.1,
            decay_every: 40,
        }
    }
}

pub fn lr_at_epoch(schedule: &LrSchedule, epoch: usize) -> f64 {
    let decays = epoch.checked_div(schedule.decay_every).unwrap_or(0);
    schedule.base_lr * schedule.decay_factor.powi(decays as i32)
}

/// Classical momentum: `v ← μ v + g`, `w ← w − lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum: f64,
    pub buffers: Vec<Layer>,
}

impl OptimizerState {
    pub fn new(model: &EncoderModel, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            momentum,
            buffers: model.zero_gradients().layers,
        })
    }
}

pub fn sgd_step(
    params: &mut [Layer],
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.layers.len() || params.len() != state.buffers.len() {
        return Err(Error::Structural(
            "parameter, gradient and buffer counts differ".into(),
        ));
    }
    for ((w, g), v) in params
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.buffers.iter_mut())
    {
        if w.weight.dim() != g.weight.dim()
            || w.bias.dim() != g.bias.dim()
            || w.weight.dim() != v.weight.dim()
            || w.bias.dim() != v.bias.dim()
        {
            return Err(Error::Structural(
                "gradient shape does not match parameters".into(),
            ));
        }
        let mu = state.momentum;
        v.weight
            .zip_mut_with(&g.weight, |vb, &gb| *vb = mu * *vb + gb);
        v.bias.zip_mut_with(&g.bias, |vb, &gb| *vb = mu * *vb + gb);
        w.weight.scaled_add(-lr, &v.weight);
        w.bias.scaled_add(-lr, &v.bias);
    }
    Ok(())
}
