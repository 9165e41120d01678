//! Supervised training on frames: input preparation (cached backbone
//! embeddings when the backbone is frozen), the SGD epoch loop, early
//! stopping, and pretext pretraining of backbones.

use std::borrow::Cow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{augment, AugmentPolicy, FeatureFrame};
use crate::models::{build_model, ArchSpec, Model, TransferMode};
use crate::nn::{sgd_step, softmax, Network, OptState, ParamSet, Part, SgdConfig};
use crate::par::{self, Exec};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub augment: AugmentPolicy,
    /// Augmented copies prepared per frame when inputs are cached embeddings.
    pub augment_views: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig::default(),
            batch_size: 8,
            max_epochs: 25,
            patience: 5,
            min_delta: 1e-4,
            augment: AugmentPolicy::default(),
            augment_views: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.batch_size == 0 || self.patience == 0 || !(self.min_delta >= 0.0) {
            return Err(Error::Config(format!("invalid training settings {self:?}")));
        }
        Ok(())
    }
}

/// Outcome of the early-stopping rule after the latest epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub stop: bool,
    pub best_epoch: usize,
}

/// An epoch improves on the best so far only if it beats it by more than
/// `min_delta`. Training stops once `patience` epochs pass without one.
pub fn early_stop(val_losses: &[f64], patience: usize, min_delta: f64) -> Result<StopDecision> {
    let (&first, rest) = val_losses.split_first().ok_or_else(|| Error::Contract("early stopping needs at least one epoch".into()))?;
    let (mut best, mut best_epoch) = (first, 0);
    for (i, &l) in rest.iter().enumerate() {
        if l < best - min_delta {
            best = l;
            best_epoch = i + 1;
        }
    }
    Ok(StopDecision { stop: val_losses.len() - 1 - best_epoch >= patience, best_epoch })
}

enum Source<'a> {
    Pixels { frames: Cow<'a, [FeatureFrame]>, policy: AugmentPolicy },
    Embedded { clean: Vec<Vec<f32>>, views: Vec<Vec<Vec<f32>>> },
}

/// What the trainable part of a network sees for every frame of a dataset:
/// raw pixels for full fine-tuning, or cached backbone outputs when only the
/// head trains. Training draws either the clean input or an augmented one;
/// evaluation always gets the clean input.
pub struct FrameInputs<'a> {
    pub part: Part,
    source: Source<'a>,
}

impl<'a> FrameInputs<'a> {
    pub fn pixels(frames: &'a [FeatureFrame], policy: AugmentPolicy) -> Self {
        FrameInputs { part: Part::Full, source: Source::Pixels { frames: Cow::Borrowed(frames), policy } }
    }

    pub fn owned_pixels(frames: Vec<FeatureFrame>, policy: AugmentPolicy) -> FrameInputs<'static> {
        FrameInputs { part: Part::Full, source: Source::Pixels { frames: Cow::Owned(frames), policy } }
    }

    /// Runs the (frozen) backbone once per frame and per augmented view.
    pub fn embed(model: &Model, frames: &[FeatureFrame], cfg: &TrainConfig, seed: u64, exec: Exec) -> Result<FrameInputs<'static>> {
        if model.transfer_mode() != TransferMode::FreezeBackbone {
            return Err(Error::Contract("cached embeddings need a frozen backbone".into()));
        }
        let views = cfg.augment_views;
        let out = par::map_range(exec, frames.len() * (views + 1), |j| {
            let (i, v) = (j / (views + 1), j % (views + 1));
            let input = if v == 0 {
                Cow::Borrowed(&frames[i].pixels)
            } else {
                let mut rng = seed::rng(seed::derive(seed, "augment-view", j as u64));
                Cow::Owned(augment(&frames[i], &mut rng, &cfg.augment)?.pixels)
            };
            model.net.forward_sample(&model.params, Part::Backbone, &input)
        });
        let mut it = out.into_iter();
        let mut clean = Vec::with_capacity(frames.len());
        let mut aug = Vec::with_capacity(frames.len());
        for _ in 0..frames.len() {
            clean.push(it.next().expect("sized")?);
            aug.push((0..views).map(|_| it.next().expect("sized")).collect::<Result<Vec<_>>>()?);
        }
        Ok(FrameInputs { part: Part::Head, source: Source::Embedded { clean, views: aug } })
    }

    pub fn len(&self) -> usize {
        match &self.source {
            Source::Pixels { frames, .. } => frames.len(),
            Source::Embedded { clean, .. } => clean.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clean(&self, i: usize) -> &[f32] {
        match &self.source {
            Source::Pixels { frames, .. } => &frames[i].pixels,
            Source::Embedded { clean, .. } => &clean[i],
        }
    }

    /// Training input of frame `i` in `epoch`; a deterministic function of the arguments.
    pub fn train(&self, i: usize, epoch: usize, seed: u64) -> Result<Cow<'_, [f32]>> {
        let pick = seed::derive(seed, "augment-pick", (epoch as u64) << 32 | i as u64);
        match &self.source {
            Source::Pixels { frames, policy } => {
                if *policy == AugmentPolicy::identity() {
                    return Ok(Cow::Borrowed(&frames[i].pixels));
                }
                Ok(Cow::Owned(augment(&frames[i], &mut seed::rng(pick), policy)?.pixels))
            }
            Source::Embedded { clean, views } => {
                let v = (pick % (views[i].len() as u64 + 1)) as usize;
                Ok(Cow::Borrowed(if v == 0 { &clean[i] } else { &views[i][v - 1] }))
            }
        }
    }
}

/// One pass over `train_idx` in seeded random order. Returns the mean batch loss.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    net: &Network,
    params: &mut ParamSet<f32>,
    opt: &mut OptState<f32>,
    inputs: &FrameInputs,
    train_idx: &[usize],
    labels: &[usize],
    batch_size: usize,
    epoch: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    if train_idx.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let mut order = train_idx.to_vec();
    order.shuffle(&mut seed::rng(seed::derive(seed, "epoch-order", epoch as u64)));
    opt.epoch = epoch;
    let mut total = 0.0;
    let mut batches = 0;
    for batch in order.chunks(batch_size) {
        let xs: Vec<Cow<[f32]>> = batch.iter().map(|&i| inputs.train(i, epoch, seed)).collect::<Result<_>>()?;
        let refs: Vec<&[f32]> = xs.iter().map(|x| x.as_ref()).collect();
        let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        let (loss, grads) = net.loss_and_grads(params, inputs.part, &refs, &ys, exec)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss {loss} in epoch {epoch}")));
        }
        sgd_step(params, &grads, opt)?;
        total += loss;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Mean cross-entropy and argmax labels on clean inputs.
pub fn evaluate(net: &Network, params: &ParamSet<f32>, inputs: &FrameInputs, idx: &[usize], labels: &[usize], exec: Exec) -> Result<(f64, Vec<usize>)> {
    if idx.is_empty() {
        return Err(Error::Contract("evaluation split is empty".into()));
    }
    let outs = par::map(exec, idx, |&i| -> Result<(f64, usize)> {
        let logits = net.forward_sample(params, inputs.part, inputs.clean(i))?;
        let p = softmax(&logits);
        let pred = crate::models::argmax_logits(&logits);
        Ok((-(p[labels[i]] as f64).max(1e-300).ln(), pred))
    });
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(idx.len());
    for o in outs {
        let (l, p) = o?;
        loss += l;
        preds.push(p);
    }
    Ok((loss / idx.len() as f64, preds))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters from the best validation epoch.
    pub params: ParamSet<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub early_stopped: bool,
    pub train_time_s: f64,
}

/// Centralized training with early stopping on validation loss; restores the
/// best epoch's parameters.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    net: &Network,
    init: &ParamSet<f32>,
    inputs: &FrameInputs,
    train_idx: &[usize],
    val_idx: &[usize],
    labels: &[usize],
    cfg: &TrainConfig,
    seed: u64,
    exec: Exec,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut params = init.clone();
    let mut opt = OptState::new(cfg.sgd, &params);
    let mut best = params.clone();
    let mut history = Vec::new();
    let mut losses = Vec::new();
    let mut early_stopped = false;
    let mut best_epoch = 0;
    for epoch in 0..cfg.max_epochs {
        let train_loss = train_epoch(net, &mut params, &mut opt, inputs, train_idx, labels, cfg.batch_size, epoch, seed, exec)?;
        let (val_loss, _) = evaluate(net, &params, inputs, val_idx, labels, exec)?;
        history.push(EpochRecord { epoch, lr: opt.lr(), train_loss, val_loss });
        losses.push(val_loss);
        let d = early_stop(&losses, cfg.patience, cfg.min_delta)?;
        if d.best_epoch == epoch {
            best = params.clone();
        }
        best_epoch = d.best_epoch;
        if d.stop {
            early_stopped = true;
            break;
        }
    }
    Ok(FitOutcome {
        params: best,
        epochs_run: history.len(),
        history,
        best_epoch,
        early_stopped,
        train_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Settings for training backbones on the synthetic pretext task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretextConfig {
    pub enabled: bool,
    pub samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient-norm cap, a guard against the occasional exploding
    /// step early in pretext training.
    pub max_grad_norm: f64,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self { enabled: true, samples: 192, epochs: 3, batch_size: 8, lr: 0.003, max_grad_norm: 50.0 }
    }
}

/// Number of classes in the pretext task.
pub const PRETEXT_CLASSES: usize = 4;

/// One pretext image: a standardized `size × size` field of noise with a
/// brighter horizontal band whose vertical position (quartile) is the class,
/// plus random horizontal striping and a random vertical gradient.
pub fn pretext_sample(size: usize, class: usize, rng: &mut impl Rng) -> Vec<f32> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let band_h = size / PRETEXT_CLASSES;
    let centre = class * band_h + rng.random_range(band_h / 4..band_h - band_h / 4) as usize;
    let width = rng.random_range(band_h as f64 / 6.0..band_h as f64 / 3.0);
    let stripe = rng.random_range(3.0..12.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let slope = rng.random_range(-0.5..0.5);
    let mut img = Vec::with_capacity(size * size);
    for r in 0..size {
        let d = (r as f64 - centre as f64) / width;
        let row = 1.5 * (-0.5 * d * d).exp() + 0.3 * (std::f64::consts::TAU * r as f64 / stripe + phase).sin() + slope * r as f64 / size as f64;
        for _ in 0..size {
            img.push((row + 0.5 * unit.sample(rng)) as f32);
        }
    }
    let n = img.len() as f64;
    let mean = img.iter().map(|&v| v as f64).sum::<f64>() / n;
    let sd = (img.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-6);
    img.iter().map(|&v| ((v as f64 - mean) / sd) as f32).collect()
}

/// Trains a fresh `spec` network end to end on the pretext task and returns
/// its parameters. Only the backbone is meant to be reused.
pub fn pretrain_backbone(spec: &ArchSpec, cfg: &PretextConfig, seed: u64, exec: Exec) -> Result<ParamSet<f32>> {
    let pre_spec = ArchSpec { num_classes: PRETEXT_CLASSES, param_budget: 0, ..spec.clone() };
    let mut model = build_model(&pre_spec, seed::derive(seed, "pretext-init", 0))?;
    model.set_transfer_mode(TransferMode::FullFinetune);
    let mut rng = seed::rng(seed::derive(seed, "pretext-data", 0));
    let size = spec.input_size;
    let labels: Vec<usize> = (0..cfg.samples).map(|i| i % PRETEXT_CLASSES).collect();
    let images: Vec<Vec<f32>> = labels.iter().map(|&c| pretext_sample(size, c, &mut rng)).collect();
    let sgd = SgdConfig { base_lr: cfg.lr, step_size: cfg.epochs.max(1), ..SgdConfig::default() };
    let mut opt = OptState::new(sgd, &model.params);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut clipped = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        opt.epoch = epoch;
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let xs: Vec<&[f32]> = batch.iter().map(|&i| images[i].as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, mut grads) = model.net.loss_and_grads(&model.params, Part::Full, &xs, &ys, exec)?;
            let norm = grads.l2_norm();
            if grads.clip_norm(cfg.max_grad_norm) {
                clipped += 1;
                log::debug!("pretext {} epoch {epoch}: clipped gradient norm {norm:.3}", spec.name);
            }
            sgd_step(&mut model.params, &grads, &mut opt)?;
            total += loss;
        }
        log::info!("pretext {} epoch {epoch}: loss {:.4}, {clipped} clipped steps so far", spec.name, total / order.len().div_ceil(cfg.batch_size.max(1)) as f64);
    }
    Ok(model.params)
}

/// A task-ready model: built from `spec`, backbone taken from pretext
/// pretraining when enabled, head freshly initialized, backbone frozen.
pub fn prepare_model(spec: &ArchSpec, pretext: &PretextConfig, seed: u64, exec: Exec) -> Result<Model> {
    let mut model = build_model(spec, seed::derive(seed, "model-init", 0))?;
    if pretext.enabled {
        let backbone = pretrain_backbone(spec, pretext, seed, exec)?;
        let copied = model.load_backbone(&backbone);
        debug_assert_eq!(copied, model.head_params_start);
    }
    model.reset_head(seed::derive(seed, "task-head", 0));
    let mut rng = seed::rng(seed::derive(seed, "calibration", 0));
    let images: Vec<Vec<f32>> = (0..pretext.samples.max(2)).map(|i| pretext_sample(spec.input_size, i % PRETEXT_CLASSES, &mut rng)).collect();
    let feats = par::map(exec, &images, |x| model.net.forward_sample(&model.params, Part::Backbone, x))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    calibrate_embedding(&mut model.params, &feats.iter().map(Vec::as_slice).collect::<Vec<_>>())?;
    model.set_transfer_mode(TransferMode::FreezeBackbone);
    Ok(model)
}

/// Sets the frozen embedding normalization in `params` so that the pooled
/// backbone `features` get zero mean and unit variance per channel.
pub fn calibrate_embedding(params: &mut ParamSet<f32>, features: &[&[f32]]) -> Result<()> {
    let missing = || Error::Contract("model has no embedding normalization".into());
    let scale = params.index_of("embed.norm.scale").ok_or_else(missing)?;
    let shift = params.index_of("embed.norm.shift").ok_or_else(missing)?;
    let d = params.layer(scale).tensor.len();
    if features.is_empty() || features.iter().any(|f| f.len() != d) {
        return Err(Error::Shape(format!("calibration needs feature vectors of length {d}")));
    }
    let n = features.len() as f64;
    let stats: Vec<(f64, f64)> = (0..d)
        .map(|c| {
            let mean = features.iter().map(|f| f[c] as f64).sum::<f64>() / n;
            (mean, features.iter().map(|f| (f[c] as f64 - mean).powi(2)).sum::<f64>() / n)
        })
        .collect();
    // Channels that are nearly dead on the calibration set must not be blown up.
    let floor = 0.01 * stats.iter().map(|s| s.1).sum::<f64>() / d as f64 + 1e-12;
    let inv: Vec<f64> = stats.iter().map(|&(_, var)| 1.0 / (var + floor).sqrt()).collect();
    let sc: Vec<f32> = inv.iter().map(|&v| v as f32).collect();
    let sh: Vec<f32> = stats.iter().zip(&inv).map(|(&(mean, _), &v)| (-mean * v) as f32).collect();
    params.layer_mut(scale).tensor.data_mut().copy_from_slice(&sc);
    params.layer_mut(shift).tensor.data_mut().copy_from_slice(&sh);
    Ok(())
}

/// Initial parameters for training on `train_idx`: when inputs are cached
/// embeddings, the embedding normalization is re-estimated on the clean
/// training embeddings (never on validation frames).
pub fn fold_init(model: &Model, inputs: &FrameInputs, train_idx: &[usize]) -> Result<ParamSet<f32>> {
    let mut params = model.params.clone();
    if inputs.part == Part::Head && !train_idx.is_empty() {
        let feats: Vec<&[f32]> = train_idx.iter().map(|&i| inputs.clean(i)).collect();
        calibrate_embedding(&mut params, &feats)?;
    }
    Ok(params)
}
