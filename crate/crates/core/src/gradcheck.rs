//! Central finite-difference checks of every analytic gradient.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::LabelPath;
use crate::losses::{evaluate, Features, LossConfig, LossKind, LossOutput};
use crate::model::{backward, forward, init_model, EncoderModel, ModelDims};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub cases: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Perturbs every analytic gradient before comparison; the check must
    /// then fail.
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 20,
            step: 1e-4,
            tolerance: 1e-5,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose ±step probes crossed a ReLU kink or changed a clamp.
    pub skipped: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, 1)`: relative for entries above unit size,
/// absolute below, matching the O(1) scale of the loss values.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Which pairs are clamped and which pair supplies each level's floor. Equal
/// fingerprints mean the loss is one smooth branch between two points.
fn clamp_fingerprint(out: &LossOutput) -> Vec<(usize, usize, bool)> {
    let mut fp = Vec::new();
    let mut running: Option<(f64, usize, usize)> = None;
    for level in out.levels.iter().rev() {
        if let Some((_, a, p)) = running {
            fp.push((a, p, level.floor.is_some()));
        }
        for pair in &level.pairs {
            fp.push((pair.anchor, pair.positive, pair.floor_active));
        }
        if let Some(m) = level
            .pairs
            .iter()
            .fold(None::<&crate::losses::PairLoss>, |m, p| match m {
                Some(m) if m.loss >= p.loss => Some(m),
                _ => Some(p),
            })
        {
            if running.is_none_or(|r| m.loss > r.0) {
                running = Some((m.loss, m.anchor, m.positive));
            }
        }
    }
    fp
}

fn loss_config() -> LossConfig {
    LossConfig {
        clamp_floor_stop_gradient: false,
        ..LossConfig::default()
    }
}

/// Two views of `samples` samples with three-level labels over a small
/// alphabet, so every level tends to hold some positives.
fn random_paths(samples: usize, rng: &mut rng::StreamRng) -> Vec<LabelPath> {
    let mut paths = Vec::with_capacity(samples * 2);
    for s in 0..samples {
        let a = rng.random_range(0..2u32);
        let b = a * 2 + rng.random_range(0..2u32);
        let c = b * 2 + rng.random_range(0..2u32);
        for _ in 0..2 {
            paths.push(LabelPath::new(s as u64, vec![a, b, c]));
        }
    }
    paths
}

fn random_matrix(rows: usize, cols: usize, rng: &mut rng::StreamRng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn unit_rows(x: &Array2<f64>) -> Array2<f64> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    x / &norms.insert_axis(Axis(1))
}

struct Tally {
    max: f64,
    checked: usize,
    skipped: usize,
}

impl Tally {
    fn new() -> Self {
        Self {
            max: 0.0,
            checked: 0,
            skipped: 0,
        }
    }

    fn entry(self, name: &str, tolerance: f64) -> GradcheckEntry {
        GradcheckEntry {
            name: name.to_string(),
            max_rel_error: self.max,
            checked: self.checked,
            skipped: self.skipped,
            passed: self.checked > 0 && self.max < tolerance,
        }
    }
}

fn corrupt(g: f64) -> f64 {
    g * 1.01 + 1e-3
}

fn check_loss(
    kind: LossKind,
    features: &Array2<f64>,
    paths: &[LabelPath],
    cfg: &GradcheckConfig,
    tally: &mut Tally,
) -> Result<()> {
    let lc = loss_config();
    let base = evaluate(kind, &Features::unchecked(features.clone()), paths, &lc)?;
    let fp = clamp_fingerprint(&base);
    let mut probe = features.clone();
    for idx in 0..features.len() {
        let (r, c) = (idx / features.ncols(), idx % features.ncols());
        let x0 = features[[r, c]];
        probe[[r, c]] = x0 + cfg.step;
        let plus = evaluate(kind, &Features::unchecked(probe.clone()), paths, &lc)?;
        probe[[r, c]] = x0 - cfg.step;
        let minus = evaluate(kind, &Features::unchecked(probe.clone()), paths, &lc)?;
        probe[[r, c]] = x0;
        if clamp_fingerprint(&plus) != fp || clamp_fingerprint(&minus) != fp {
            tally.skipped += 1;
            continue;
        }
        let numeric = (plus.total - minus.total) / (2.0 * cfg.step);
        let mut analytic = base.gradient[[r, c]];
        if cfg.corrupt {
            analytic = corrupt(analytic);
        }
        tally.max = tally.max.max(relative_error(analytic, numeric));
        tally.checked += 1;
    }
    Ok(())
}

fn relu_masks(model: &EncoderModel, x: &Array2<f64>) -> Result<Vec<Vec<bool>>> {
    let out = forward(model, x.view())?;
    Ok(out.cache.pre_activations[..model.layers.len() - 1]
        .iter()
        .map(|z| z.iter().map(|&v| v > 0.0).collect())
        .collect())
}

fn model_loss(
    model: &EncoderModel,
    x: &Array2<f64>,
    kind: LossKind,
    paths: &[LabelPath],
) -> Result<(LossOutput, Vec<Vec<bool>>)> {
    let out = forward(model, x.view())?;
    let loss = evaluate(
        kind,
        &Features::unchecked(out.projections),
        paths,
        &loss_config(),
    )?;
    Ok((loss, relu_masks(model, x)?))
}

fn check_model(
    kind: LossKind,
    x: &Array2<f64>,
    paths: &[LabelPath],
    seed: u64,
    cfg: &GradcheckConfig,
    tally: &mut Tally,
) -> Result<()> {
    let dims = ModelDims {
        encoder: vec![x.ncols(), 16, 16],
        projection: vec![16, 16],
    };
    let mut model = init_model(&dims, seed)?;
    // non-zero biases so their gradients are exercised
    let mut brng = rng::stream(seed, "gradcheck/bias");
    for layer in &mut model.layers {
        layer.bias.mapv_inplace(|_| brng.random_range(-0.1..0.1));
    }
    let out = forward(&model, x.view())?;
    let base = evaluate(
        kind,
        &Features::unchecked(out.projections.clone()),
        paths,
        &loss_config(),
    )?;
    let grads = backward(&model, &out.cache, base.gradient.view())?;
    let fp = (clamp_fingerprint(&base), relu_masks(&model, x)?);

    for li in 0..model.layers.len() {
        let (rows, cols) = model.layers[li].weight.dim();
        let entries = (0..rows * cols)
            .map(|k| (Some((k / cols, k % cols)), k))
            .chain((0..rows).map(|k| (None, k)));
        for (w_idx, k) in entries {
            let read = |m: &EncoderModel| match w_idx {
                Some(rc) => m.layers[li].weight[rc],
                None => m.layers[li].bias[k],
            };
            let x0 = read(&model);
            let set = |m: &mut EncoderModel, v: f64| match w_idx {
                Some(rc) => m.layers[li].weight[rc] = v,
                None => m.layers[li].bias[k] = v,
            };
            set(&mut model, x0 + cfg.step);
            let plus = model_loss(&model, x, kind, paths)?;
            set(&mut model, x0 - cfg.step);
            let minus = model_loss(&model, x, kind, paths)?;
            set(&mut model, x0);
            if clamp_fingerprint(&plus.0) != fp.0
                || clamp_fingerprint(&minus.0) != fp.0
                || plus.1 != fp.1
                || minus.1 != fp.1
            {
                tally.skipped += 1;
                continue;
            }
            let numeric = (plus.0.total - minus.0.total) / (2.0 * cfg.step);
            let mut analytic = match w_idx {
                Some(rc) => grads.layers[li].weight[rc],
                None => grads.layers[li].bias[k],
            };
            if cfg.corrupt {
                analytic = corrupt(analytic);
            }
            tally.max = tally.max.max(relative_error(analytic, numeric));
            tally.checked += 1;
        }
    }
    Ok(())
}

/// Runs every loss on `cfg.cases` random batches, checking the feature
/// gradient entry by entry, then checks the parameter gradients of a small
/// encoder trained through each loss in turn.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.step.is_nan() || cfg.step <= 0.0 || cfg.cases == 0 {
        return Err(Error::Config(
            "gradcheck needs a positive step and at least one case".into(),
        ));
    }
    let mut tallies: Vec<Tally> = LossKind::ALL.iter().map(|_| Tally::new()).collect();
    let mut chain = Tally::new();
    for case in 0..cfg.cases {
        let mut rng = rng::stream(cfg.seed, &format!("gradcheck/{case}"));
        let samples = rng.random_range(3..=4);
        let paths = random_paths(samples, &mut rng);
        let dim = rng.random_range(3..=5);
        let features = unit_rows(&random_matrix(paths.len(), dim, &mut rng));
        for (kind, tally) in LossKind::ALL.iter().zip(&mut tallies) {
            check_loss(*kind, &features, &paths, cfg, tally)?;
        }
        let x = random_matrix(paths.len(), 5, &mut rng);
        let kind = LossKind::ALL[case % LossKind::ALL.len()];
        check_model(kind, &x, &paths, cfg.seed ^ case as u64, cfg, &mut chain)?;
    }
    let mut entries: Vec<GradcheckEntry> = LossKind::ALL
        .iter()
        .zip(tallies)
        .map(|(k, t)| t.entry(k.name(), cfg.tolerance))
        .collect();
    entries.push(chain.entry("encoder", cfg.tolerance));
    let passed = entries.iter().all(|e| e.passed);
    Ok(GradcheckReport {
        entries,
        tolerance: cfg.tolerance,
        passed,
    })
}
