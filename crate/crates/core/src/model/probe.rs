//! Linear classifier on frozen features (softmax + cross-entropy, SGD with
//! momentum). Inputs are standardised with the training-set statistics.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{sgd_step, Gradients, Layer, OptimizerState};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            lr: 0.1,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub layer: Layer,
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    /// Class id of each output unit.
    pub classes: Vec<u32>,
}

impl LinearProbe {
    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let z = (&x - &self.mean) / &self.scale;
        self.layer.forward(z.view())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<u32> {
        self.logits(x)
            .axis_iter(Axis(0))
            .map(|row| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |b, (k, &v)| if v > b.1 { (k, v) } else { b },
                    );
                self.classes[best.0]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub majority_baseline: f64,
    pub train_loss: f64,
}

/// Softmax cross-entropy of one logit row against class index `target`.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

fn accuracy(pred: &[u32], truth: &[u32]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// Trains on `(train_x, train_y)` and reports top-1 accuracy on
/// `(test_x, test_y)`.
pub fn train_linear_probe(
    train_x: ArrayView2<f64>,
    train_y: &[u32],
    test_x: ArrayView2<f64>,
    test_y: &[u32],
    cfg: &ProbeConfig,
) -> Result<(LinearProbe, ProbeReport)> {
    if train_x.nrows() != train_y.len() || test_x.nrows() != test_y.len() {
        return Err(Error::Structural("probe rows and labels disagree".into()));
    }
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::Structural(
            "train and test feature widths differ".into(),
        ));
    }
    let mut classes: Vec<u32> = train_y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::DegenerateBatch(
            "linear probe needs at least two classes",
        ));
    }
    let target: Vec<usize> = train_y
        .iter()
        .map(|y| classes.binary_search(y).expect("collected above"))
        .collect();

    let mean = train_x.mean_axis(Axis(0)).expect("non-empty");
    let scale = train_x
        .std_axis(Axis(0), 0.0)
        .mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let z = (&train_x - &mean) / &scale;

    let mut probe = LinearProbe {
        layer: Layer::zeros(train_x.ncols(), classes.len()),
        mean,
        scale,
        classes,
    };
    let mut state = OptimizerState {
        momentum: cfg.momentum,
        buffers: vec![Layer::zeros(train_x.ncols(), probe.classes.len())],
    };
    let mut rng = rng::stream(cfg.seed, "probe");
    let mut order: Vec<usize> = (0..z.nrows()).collect();
    let mut last_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let xb = z.select(Axis(0), chunk);
            let logits = probe.layer.forward(xb.view());
            let mut upstream = Array2::zeros(logits.raw_dim());
            for (r, &i) in chunk.iter().enumerate() {
                let row = logits.row(r);
                let row = row.as_slice().expect("standard layout");
                epoch_loss += cross_entropy(row, target[i]);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for (k, e) in exps.iter().enumerate() {
                    upstream[[r, k]] =
                        (e / sum - f64::from(u8::from(k == target[i]))) / chunk.len() as f64;
                }
            }
            let (grad, _) = probe.layer.backward(xb.view(), upstream.view());
            sgd_step(
                std::slice::from_mut(&mut probe.layer),
                &Gradients { layers: vec![grad] },
                &mut state,
                cfg.lr,
            )?;
        }
        last_loss = epoch_loss / z.nrows() as f64;
        if !last_loss.is_finite() {
            return Err(Error::Numeric("linear probe loss diverged".into()));
        }
    }

    let mut counts = std::collections::BTreeMap::new();
    for y in train_y {
        *counts.entry(*y).or_insert(0usize) += 1;
    }
    let majority = counts
        .iter()
        .max_by_key(|(_, &c)| c)
        .map(|(&k, _)| k)
        .expect("non-empty");
    let majority_baseline = accuracy(&vec![majority; test_y.len()], test_y);
    let report = ProbeReport {
        accuracy: accuracy(&probe.predict(test_x), test_y),
        majority_baseline,
        train_loss: last_loss,
    };
    Ok((probe, report))
}
