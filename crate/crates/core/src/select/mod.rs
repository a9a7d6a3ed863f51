//! Frame-pair suitability: automatic labelling by motion-compensated NCC,
//! an MLP that regresses that NCC from the coarse mode weights, and
//! selection of the best partner frame within a window.

pub mod mlp;

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coarse::{coarse_estimate, coarse_axial};
use crate::dp::DpConfig;
use crate::error::{Error, Result};
use crate::modes::ModeBasis;
use crate::raster::{read_raster_f64, write_raster_f64};
use crate::refine::{ncc, refine, warp, RefineConfig};
use crate::types::{FramePairLabel, RfFrame, WeightVector, NCC_THRESHOLD};
use mlp::{Adam, AdamConfig, Mlp};

pub use mlp::Dense;

pub const HIDDEN_LAYERS: [usize; 3] = [256, 128, 64];
pub const DEFAULT_WINDOW: usize = 16;
pub const MIN_TRAINING_INSTANCES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub w: WeightVector,
    pub ncc_true: f64,
    pub suitable: bool,
}

impl LabeledInstance {
    pub fn new(w: WeightVector, ncc_true: f64) -> Self {
        let label = FramePairLabel::from_ncc(ncc_true);
        Self {
            w,
            ncc_true,
            suitable: label.suitable,
        }
    }
}

/// Runs the coarse and refined estimation, warps `post` by the refined
/// field and thresholds the NCC against `pre`. The features are the coarse
/// mode weights.
pub fn label_pair(
    pre: &RfFrame,
    post: &RfFrame,
    basis: &ModeBasis,
    dp_cfg: &DpConfig,
    refine_cfg: &RefineConfig,
) -> Result<LabeledInstance> {
    let coarse = coarse_estimate(basis, pre, post, dp_cfg)?;
    let refined = refine(pre, post, &coarse.field, refine_cfg)?;
    let warped = warp(post.samples(), &refined.field);
    let value = ncc(pre.samples(), &warped.image, Some(&warped.mask))?;
    Ok(LabeledInstance::new(coarse.weights, value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Append the weight-fit residual norm to the features.
    pub include_residual: bool,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            validation_fraction: 0.2,
            include_residual: false,
            threshold: NCC_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub config: TrainConfig,
    pub n_train: usize,
    pub n_validation: usize,
    /// Full training-set MSE after each epoch.
    pub train_loss: Vec<f64>,
    /// Validation MSE after each epoch.
    pub validation_loss: Vec<f64>,
    pub seconds: f64,
}

impl TrainingMetadata {
    pub fn final_validation_loss(&self) -> Option<f64> {
        self.validation_loss.last().copied()
    }
}

/// NCC regressor over standardized mode weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub net: Mlp,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub metadata: TrainingMetadata,
}

fn features(w: &WeightVector, include_residual: bool) -> Vec<f64> {
    let mut f = w.w.clone();
    if include_residual {
        f.push(w.residual_norm);
    }
    f
}

impl MlpModel {
    pub fn input_len(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn threshold(&self) -> f64 {
        self.metadata.config.threshold
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Predicted NCC for one weight vector.
    pub fn predict(&self, w: &WeightVector) -> Result<f64> {
        let f = features(w, self.metadata.config.include_residual);
        if f.len() != self.input_len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} features, got {}",
                self.input_len(),
                f.len()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature".into()));
        }
        Ok(self.net.forward_one(&self.standardize(&f))[0])
    }

    pub fn classify(&self, w: &WeightVector) -> Result<bool> {
        Ok(self.predict(w)? > self.threshold())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = ModelManifest {
            layer_sizes: self.net.sizes(),
            feature_mean: self.feature_mean.clone(),
            feature_scale: self.feature_scale.clone(),
            metadata: self.metadata.clone(),
        };
        let path = dir.join("model.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        for (k, layer) in self.net.layers.iter().enumerate() {
            write_raster_f64(dir.join(format!("layer_{k}_weights.elas")), &layer.weights)?;
            let bias = layer.bias.clone().insert_axis(ndarray::Axis(0));
            write_raster_f64(dir.join(format!("layer_{k}_bias.elas")), &bias)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("model.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ModelManifest = serde_json::from_str(&text)?;
        let sizes = &manifest.layer_sizes;
        let mut layers = Vec::new();
        for k in 0..sizes.len().saturating_sub(1) {
            let weights = read_raster_f64(dir.join(format!("layer_{k}_weights.elas")))?;
            let bias = read_raster_f64(dir.join(format!("layer_{k}_bias.elas")))?;
            if weights.dim() != (sizes[k], sizes[k + 1]) || bias.dim() != (1, sizes[k + 1]) {
                return Err(Error::DimensionMismatch {
                    expected: (sizes[k], sizes[k + 1]),
                    got: weights.dim(),
                });
            }
            layers.push(Dense {
                weights,
                bias: bias.row(0).to_owned(),
            });
        }
        let model = Self {
            net: Mlp { layers },
            feature_mean: manifest.feature_mean,
            feature_scale: manifest.feature_scale,
            metadata: manifest.metadata,
        };
        model.check_architecture()?;
        Ok(model)
    }

    /// Layer sizes must be `inputs -> 256 -> 128 -> 64 -> 1`.
    pub fn check_architecture(&self) -> Result<()> {
        let mut expected = vec![self.input_len()];
        expected.extend(HIDDEN_LAYERS);
        expected.push(1);
        if self.net.sizes() != expected {
            return Err(Error::InvalidArgument(format!(
                "layer sizes {:?}, expected {expected:?}",
                self.net.sizes()
            )));
        }
        if !self.net.is_finite() {
            return Err(Error::InvalidArgument("non-finite network parameter".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    layer_sizes: Vec<usize>,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    metadata: TrainingMetadata,
}

/// Total order on instances by their bit patterns, so training does not
/// depend on the order instances arrive in.
fn canonical_order(instances: &[LabeledInstance]) -> Vec<usize> {
    let key = |inst: &LabeledInstance| -> Vec<u64> {
        let mut k: Vec<u64> = inst.w.w.iter().map(|v| v.to_bits()).collect();
        k.push(inst.w.residual_norm.to_bits());
        k.push(inst.ncc_true.to_bits());
        k
    };
    let mut idx: Vec<usize> = (0..instances.len()).collect();
    idx.sort_by_cached_key(|&i| key(&instances[i]));
    idx
}

/// Trains the NCC regressor with a seeded 80:20 train/validation split.
pub fn train(instances: &[LabeledInstance], cfg: &TrainConfig) -> Result<MlpModel> {
    if instances.len() < MIN_TRAINING_INSTANCES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_TRAINING_INSTANCES} instances, got {}",
            instances.len()
        )));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs and batch size must be >= 1".into()));
    }
    let dim = features(&instances[0].w, cfg.include_residual).len();
    if let Some(bad) = instances
        .iter()
        .find(|i| features(&i.w, cfg.include_residual).len() != dim)
    {
        return Err(Error::InvalidArgument(format!(
            "mixed feature lengths: {dim} and {}",
            features(&bad.w, cfg.include_residual).len()
        )));
    }
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = canonical_order(instances);
    order.shuffle(&mut rng);
    let n_val = ((instances.len() as f64) * cfg.validation_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);

    let raw = |idx: &[usize]| {
        let mut x = Array2::zeros((idx.len(), dim));
        for (r, &i) in idx.iter().enumerate() {
            for (c, v) in features(&instances[i].w, cfg.include_residual).into_iter().enumerate() {
                x[[r, c]] = v;
            }
        }
        let y = Array1::from_iter(idx.iter().map(|&i| instances[i].ncc_true));
        (x, y)
    };
    let (mut x_train, y_train) = raw(train_idx);
    let (mut x_val, y_val) = raw(val_idx);
    if x_train.iter().chain(y_train.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite training data".into()));
    }
    let mean = x_train.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let scale = x_train
        .std_axis(ndarray::Axis(0), 0.0)
        .mapv(|s| if s > 1e-12 { s } else { 1.0 });
    x_train = (x_train - &mean) / &scale;
    x_val = (x_val - &mean) / &scale;

    let mut sizes = vec![dim];
    sizes.extend(HIDDEN_LAYERS);
    sizes.push(1);
    let mut net = Mlp::new(&sizes, cfg.seed.wrapping_add(1));
    // Start from the constant predictor at the target mean.
    let output = net.layers.last_mut().expect("output layer");
    output.weights.fill(0.0);
    output.bias.fill(shifted_mean(&y_train));
    let mut adam = Adam::new(&net, cfg.adam);
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut validation_loss = Vec::with_capacity(cfg.epochs);
    let mut batch_order: Vec<usize> = (0..x_train.nrows()).collect();

    for epoch in 0..cfg.epochs {
        batch_order.shuffle(&mut rng);
        for chunk in batch_order.chunks(cfg.batch_size) {
            let xb = x_train.select(ndarray::Axis(0), chunk);
            let yb = y_train.select(ndarray::Axis(0), chunk);
            let (_, grads) = net.loss_and_gradients(&xb, &yb);
            adam.update(&mut net, &grads);
        }
        let tl = net.mse(&x_train, &y_train);
        let vl = if n_val > 0 { net.mse(&x_val, &y_val) } else { tl };
        if !tl.is_finite() || !vl.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("train loss {tl}, validation loss {vl}"),
            });
        }
        train_loss.push(tl);
        validation_loss.push(vl);
    }

    Ok(MlpModel {
        net,
        feature_mean: mean.to_vec(),
        feature_scale: scale.to_vec(),
        metadata: TrainingMetadata {
            config: cfg.clone(),
            n_train: train_idx.len(),
            n_validation: n_val,
            train_loss,
            validation_loss,
            seconds: started.elapsed().as_secs_f64(),
        },
    })
}

/// Mean computed relative to the first element, exact for constant data.
fn shifted_mean(y: &Array1<f64>) -> f64 {
    let shift = y[0];
    shift + y.iter().map(|v| v - shift).sum::<f64>() / y.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

/// Accuracy, precision, recall and `F1 = 2PR / (P + R)`.
pub fn scores(predicted: &[bool], actual: &[bool]) -> Result<ClassifierScores> {
    if predicted.is_empty() || predicted.len() != actual.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal, non-empty label sets ({} vs {})",
            predicted.len(),
            actual.len()
        )));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    if tp + fneg == 0 {
        return Err(Error::UndefinedMetric("no positive ground truth: F1 undefined".into()));
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = tp as f64 / (tp + fneg) as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ClassifierScores {
        accuracy: (tp + tn) as f64 / predicted.len() as f64,
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        true_negatives: tn,
    })
}

pub fn eval_classifier(model: &MlpModel, instances: &[LabeledInstance]) -> Result<ClassifierScores> {
    let predicted = instances
        .iter()
        .map(|i| model.classify(&i.w))
        .collect::<Result<Vec<_>>>()?;
    let actual: Vec<bool> = instances.iter().map(|i| i.suitable).collect();
    scores(&predicted, &actual)
}

/// Candidate partners for `anchor`: up to `window / 2` frames on each side.
pub fn candidate_indices(len: usize, anchor: usize, window: usize) -> Vec<usize> {
    let half = window / 2;
    let lo = anchor.saturating_sub(half);
    let hi = (anchor + half).min(len.saturating_sub(1));
    (lo..=hi).filter(|&i| i != anchor && i < len).collect()
}

/// Index with the highest score; ties go to the nearer frame, then the earlier one.
pub fn best_candidate(anchor: usize, candidates: &[(usize, f64)]) -> Option<usize> {
    candidates
        .iter()
        .copied()
        .reduce(|best, c| {
            let dist = |i: usize| i.abs_diff(anchor);
            let better = c.1 > best.1
                || (c.1 == best.1 && (dist(c.0), c.0) < (dist(best.0), best.0));
            if better {
                c
            } else {
                best
            }
        })
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub anchor: usize,
    pub partner: usize,
    /// `(index, predicted NCC)` for every candidate considered.
    pub predictions: Vec<(usize, f64)>,
}

/// Picks the partner with the highest predicted NCC (no thresholding).
pub fn select_best(
    model: &MlpModel,
    frames: &[RfFrame],
    anchor: usize,
    basis: &ModeBasis,
    dp_cfg: &DpConfig,
    window: usize,
) -> Result<Selection> {
    if anchor >= frames.len() {
        return Err(Error::InvalidArgument(format!(
            "anchor {anchor} outside sequence of {}",
            frames.len()
        )));
    }
    let candidates = candidate_indices(frames.len(), anchor, window);
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate frames in window".into()));
    }
    let predictions = crate::par::map_slice(&candidates, |&i| -> Result<(usize, f64)> {
        let coarse = coarse_axial(basis, &frames[anchor], &frames[i], dp_cfg)?;
        Ok((i, model.predict(&coarse.weights)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let partner = best_candidate(anchor, &predictions).expect("non-empty candidates");
    Ok(Selection {
        anchor,
        partner,
        predictions,
    })
}
