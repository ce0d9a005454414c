//! MLP encoder with a projection head onto the unit sphere.
//!
//! Layers compute `y = x Wᵀ + b` with ReLU after every layer except the last
//! projection layer; the projection output is L2-normalised row-wise. The
//! backward pass is written out by hand and checked against finite
//! differences in [`crate::gradcheck`].

mod checkpoint;
mod optim;
mod probe;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{lr_at_epoch, sgd_step, LrSchedule, OptimizerState};
pub use probe::{cross_entropy, train_linear_probe, LinearProbe, ProbeConfig, ProbeReport};
pub use train::{embed, train, EpochLog, TrainConfig, TrainOutcome};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One affine layer; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Returns (parameter gradient, gradient w.r.t. the layer input).
    pub fn backward(
        &self,
        input: ArrayView2<f64>,
        upstream: ArrayView2<f64>,
    ) -> (Layer, Array2<f64>) {
        let grad = Layer {
            weight: upstream.t().dot(&input),
            bias: upstream.sum_axis(Axis(0)),
        };
        (grad, upstream.dot(&self.weight))
    }
}

/// Layer widths: `encoder = [input, h1, ..., e]`, `projection = [p1, ..., d]`
/// (the projection head starts from the encoder width `e`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub encoder: Vec<usize>,
    pub projection: Vec<usize>,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            encoder: vec![32, 64, 64],
            projection: vec![64, 16],
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.encoder.len() < 2 || self.projection.is_empty() {
            return Err(Error::Config(
                "need an input width, at least one encoder layer and one projection layer".into(),
            ));
        }
        if self.encoder.iter().chain(&self.projection).any(|&d| d == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn chain(&self) -> Vec<usize> {
        self.encoder
            .iter()
            .chain(&self.projection)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub layers: Vec<Layer>,
    /// The first `encoder_depth` layers form the encoder.
    pub encoder_depth: usize,
}

/// Per-layer gradients, same layout as [`EncoderModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer (`inputs[0]` is the batch itself).
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation output of every layer.
    pub pre_activations: Vec<Array2<f64>>,
    /// Row norms of the final pre-normalisation output.
    pub norms: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub encoder_features: Array2<f64>,
    pub projections: Array2<f64>,
    pub cache: ForwardCache,
}

/// He-style uniform init, `U(-√(6/fan_in), √(6/fan_in))`, zero biases.
pub fn init_model(dims: &ModelDims, seed: u64) -> Result<EncoderModel> {
    dims.validate()?;
    let mut rng = rng::stream(seed, "init");
    let chain = dims.chain();
    let layers = chain
        .windows(2)
        .map(|w| {
            let bound = (6.0 / w[0] as f64).sqrt();
            let mut layer = Layer::zeros(w[0], w[1]);
            layer
                .weight
                .mapv_inplace(|_| rng.random_range(-bound..bound));
            layer
        })
        .collect();
    Ok(EncoderModel {
        layers,
        encoder_depth: dims.encoder.len() - 1,
    })
}

impl EncoderModel {
    pub fn from_layers(layers: Vec<Layer>, encoder_depth: usize) -> Result<Self> {
        if encoder_depth == 0 || encoder_depth >= layers.len() {
            return Err(Error::Structural(format!(
                "encoder depth {encoder_depth} invalid for {} layers",
                layers.len()
            )));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::Structural(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    w[0].outputs(),
                    i + 1,
                    w[1].inputs()
                )));
            }
        }
        if let Some((i, _)) = layers
            .iter()
            .enumerate()
            .find(|(_, l)| l.bias.len() != l.outputs())
        {
            return Err(Error::Structural(format!("layer {i} bias length mismatch")));
        }
        Ok(Self {
            layers,
            encoder_depth,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn encoder_dim(&self) -> usize {
        self.layers[self.encoder_depth - 1].outputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn dims(&self) -> ModelDims {
        let mut encoder = vec![self.input_dim()];
        encoder.extend(self.layers[..self.encoder_depth].iter().map(Layer::outputs));
        ModelDims {
            encoder,
            projection: self.layers[self.encoder_depth..]
                .iter()
                .map(Layer::outputs)
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn forward(model: &EncoderModel, x: ArrayView2<f64>) -> Result<ForwardOutput> {
    if x.ncols() != model.input_dim() {
        return Err(Error::Structural(format!(
            "input has {} columns, model expects {}",
            x.ncols(),
            model.input_dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite model input".into()));
    }
    let last = model.layers.len() - 1;
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut pre_activations = Vec::with_capacity(model.layers.len());
    let mut h = x.to_owned();
    let mut encoder_features = None;
    for (i, layer) in model.layers.iter().enumerate() {
        let z = layer.forward(h.view());
        let out = if i == last { z.clone() } else { relu(&z) };
        inputs.push(std::mem::replace(&mut h, out));
        pre_activations.push(z);
        if i + 1 == model.encoder_depth {
            encoder_features = Some(h.clone());
        }
    }
    let norms = h.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some((row, &n)) = norms
        .iter()
        .enumerate()
        .find(|(_, n)| !n.is_finite() || **n <= 0.0)
    {
        return Err(Error::Numeric(format!(
            "projection row {row} has norm {n}; cannot normalise"
        )));
    }
    let projections = &h / &norms.view().insert_axis(Axis(1));
    Ok(ForwardOutput {
        encoder_features: encoder_features.expect("encoder depth >= 1"),
        projections,
        cache: ForwardCache {
            inputs,
            pre_activations,
            norms,
        },
    })
}

/// Vector-Jacobian product of row-wise L2 normalisation:
/// `(I - x̂ x̂ᵀ) g / ‖x‖` per row.
pub fn normalize_backward(
    pre_norm: ArrayView2<f64>,
    norms: &Array1<f64>,
    upstream: ArrayView2<f64>,
) -> Array2<f64> {
    let mut out = Array2::zeros(pre_norm.raw_dim());
    for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let n = norms[r];
        let unit = pre_norm.row(r).mapv(|v| v / n);
        let g = upstream.row(r);
        let radial = unit.dot(&g);
        row.assign(&((&g - &(unit * radial)) / n));
    }
    out
}

/// Parameter gradients given the gradient w.r.t. the unit-norm projections.
pub fn backward(
    model: &EncoderModel,
    cache: &ForwardCache,
    grad_projections: ArrayView2<f64>,
) -> Result<Gradients> {
    let last = model.layers.len() - 1;
    let expected = cache.pre_activations[last].dim();
    if grad_projections.dim() != expected || cache.inputs.len() != model.layers.len() {
        return Err(Error::Structural(format!(
            "upstream gradient {:?} does not match projection output {expected:?}",
            grad_projections.dim()
        )));
    }
    let mut upstream = normalize_backward(
        cache.pre_activations[last].view(),
        &cache.norms,
        grad_projections,
    );
    let mut grads = Vec::with_capacity(model.layers.len());
    for i in (0..model.layers.len()).rev() {
        if i != last {
            let z = &cache.pre_activations[i];
            upstream.zip_mut_with(z, |g, &zv| {
                if zv <= 0.0 {
                    *g = 0.0
                }
            });
        }
        let (grad, down) = model.layers[i].backward(cache.inputs[i].view(), upstream.view());
        grads.push(grad);
        upstream = down;
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}
