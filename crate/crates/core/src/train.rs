//! Adam with decoupled weight decay, cosine learning-rate decay, and the epoch loop.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::data::{self, AnnotatedImage, DatasetSplit};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, DEFAULT_EVAL_IOU};
use crate::head::{self, Detection, LossBreakdown, LossConfig};
use crate::model::Detector;
use crate::postprocess::NmsConfig;
use crate::tensor::{Param, Tensor};

pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const CURVE_FILE: &str = "curve.txt";
pub const DEFAULT_CONF_THRESHOLD: f32 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub augment_flip: bool,
    pub augment_crop: bool,
    pub loss: LossConfig,
    pub conf_threshold: f32,
    pub nms: NmsConfig,
    pub eval_iou: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            lr_min: 0.0,
            batch_size: 16,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0005,
            seed: 0,
            eval_every: 1,
            augment_flip: true,
            augment_crop: true,
            loss: LossConfig::default(),
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            nms: NmsConfig::default(),
            eval_iou: DEFAULT_EVAL_IOU,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if !(0.0..=self.lr0).contains(&self.lr_min) {
            return bad("lr_min must lie in [0, lr0]");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return bad("batch_size, epochs and eval_every must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        self.nms.validate()
    }
}

/// `lr_min + (lr0 - lr_min) (1 + cos(pi e / (E - 1))) / 2`; a single-epoch run stays at `lr0`.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside 0..{}",
            cfg.epochs
        )));
    }
    cosine_lr_at(epoch as f64, cfg)
}

/// The same curve at a fractional epoch in `[0, E - 1]`.
pub fn cosine_lr_at(epoch: f64, cfg: &TrainConfig) -> Result<f64> {
    let last = cfg.epochs.saturating_sub(1) as f64;
    if !(0.0..=last).contains(&epoch) {
        return Err(Error::InvalidArgument(format!("epoch {epoch} outside [0, {last}]")));
    }
    if cfg.epochs == 1 {
        return Ok(cfg.lr0);
    }
    let t = epoch / last;
    Ok(cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// First and second moments, one tensor per parameter in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn for_params<'a>(params: impl IntoIterator<Item = &'a Param>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn for_model(model: &Detector) -> Self {
        Self::for_params(model.params().into_iter().map(|(_, p)| p))
    }
}

/// One bias-corrected Adam update. Returns `false` (and leaves everything untouched)
/// when any gradient is non-finite.
pub fn adam_step(params: &mut [&mut Param], state: &mut AdamState, lr: f64, cfg: &TrainConfig) -> Result<bool> {
    if state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer holds {} moments for {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    for (p, m) in params.iter().zip(&state.m) {
        if p.value.shape() != m.shape() {
            return Err(Error::shape(
                "adam_step",
                crate::tensor::shape_str(m.shape()),
                crate::tensor::shape_str(p.value.shape()),
            ));
        }
    }
    if params.iter().any(|p| !p.grad.is_finite()) {
        return Ok(false);
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let step_size = (lr / c1) as f32;
    let c2_sqrt = c2.sqrt() as f32;
    let decay = (lr * cfg.weight_decay) as f32;
    let eps = cfg.eps as f32;
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let Param { value, grad } = &mut **p;
        for (((w, &g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *w -= decay * *w + step_size * *m / (v.sqrt() / c2_sqrt + eps);
        }
    }
    Ok(true)
}

/// Detections for every image of a split, in split order.
pub fn predict_split(model: &Detector, split: &DatasetSplit, conf: f32, nms: &NmsConfig, batch: usize) -> Result<Vec<Vec<Detection>>> {
    let res = model.config().input_resolution();
    let mut out = Vec::with_capacity(split.len());
    for chunk in split.items.chunks(batch.max(1)) {
        let inputs = chunk
            .iter()
            .map(|i| data::preprocess(&i.pixels, res))
            .collect::<Result<Vec<_>>>()?;
        out.extend(model.detect(&Tensor::stack(&inputs)?, conf, nms)?);
    }
    Ok(out)
}

pub fn evaluate_split(model: &Detector, split: &DatasetSplit, cfg: &TrainConfig) -> Result<EvalReport> {
    let preds = predict_split(model, split, cfg.conf_threshold, &cfg.nms, cfg.batch_size)?;
    let gts: Vec<Vec<Detection>> = split.items.iter().map(|i| i.boxes.clone()).collect();
    eval::evaluate(&preds, &gts, model.config().num_classes, cfg.eval_iou)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub report: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Loss of every optimizer step, measured before its update.
    pub step_losses: Vec<LossBreakdown>,
    pub skipped_steps: usize,
    pub epochs: Vec<EpochLog>,
    pub best_map: Option<f64>,
    pub final_report: Option<EvalReport>,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.step_losses.len()
    }
}

fn augment(item: &AnnotatedImage, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<AnnotatedImage> {
    let mut out = if cfg.augment_flip {
        let coin = rng.gen_bool(0.5);
        data::augment_flip(item, coin)?
    } else {
        item.clone()
    };
    if cfg.augment_crop {
        out = data::augment_random_crop(&out, rng)?;
    }
    Ok(out)
}

/// Paths written by [`train`] under an output directory.
pub fn output_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join(LATEST_CHECKPOINT), dir.join(BEST_CHECKPOINT), dir.join(CURVE_FILE))
}

/// Train `model` in place. Evaluation runs on `val` when given, else on `train`.
/// With `out_dir`, the latest and best-by-mAP checkpoints and the epoch curve are
/// written there at every evaluation.
pub fn train(
    model: &mut Detector,
    train_split: &DatasetSplit,
    val: Option<&DatasetSplit>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_split.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let eval_split = val.unwrap_or(train_split);
    let res = model.config().input_resolution();
    let grid = model.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::for_model(model);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train_split.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let mut inputs = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let item = augment(&train_split.items[i], cfg, &mut rng)?;
                inputs.push(data::preprocess(&item.pixels, res)?);
                targets.push(head::assign_targets(&item.boxes, &model.heads, grid)?);
            }
            let images = Tensor::stack(&inputs)?;
            model.zero_grad();
            let raw = model.forward_train(&images)?;
            let (loss, grads) = head::detection_loss(&raw, &targets, &cfg.loss)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    step: report.steps() + 1,
                });
            }
            model.backward(&grads)?;
            let mut params: Vec<&mut Param> = model.params_mut().into_iter().map(|(_, p)| p).collect();
            if !adam_step(&mut params, &mut state, lr, cfg)? {
                report.skipped_steps += 1;
            }
            loss_sum += loss.total;
            batches += 1;
            report.step_losses.push(loss);
        }

        let epoch_no = epoch + 1;
        let evaluate_now = epoch_no % cfg.eval_every == 0 || epoch_no == cfg.epochs;
        let eval_report = if evaluate_now {
            Some(evaluate_split(model, eval_split, cfg)?)
        } else {
            None
        };
        if let Some(r) = &eval_report {
            let improved = report.best_map.is_none_or(|b| r.map_value > b);
            if improved {
                report.best_map = Some(r.map_value);
            }
            if let Some(dir) = out_dir {
                let (latest, best, curve) = output_paths(dir);
                checkpoint::save_checkpoint(&latest, model, Some(&state))?;
                if improved {
                    checkpoint::save_checkpoint(&best, model, Some(&state))?;
                }
                eval::epoch_curve_append(&curve, epoch_no, r.map_value)?;
            }
            report.final_report = Some(r.clone());
        }
        let log = EpochLog {
            epoch: epoch_no,
            lr,
            mean_loss: loss_sum / batches as f64,
            report: eval_report,
        };
        on_epoch(&log);
        report.epochs.push(log);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(cosine_lr(0, &cfg).unwrap(), 0.001);
        assert!(cosine_lr(199, &cfg).unwrap().abs() < 1e-12);
        assert!(cosine_lr(200, &cfg).is_err());
        let odd = TrainConfig { epochs: 201, ..cfg.clone() };
        assert!((cosine_lr(100, &odd).unwrap() - 0.0005).abs() < 1e-12);
        assert!((cosine_lr_at(99.5, &cfg).unwrap() - 0.0005).abs() < 1e-12);
        let one = TrainConfig { epochs: 1, ..cfg };
        assert_eq!(cosine_lr(0, &one).unwrap(), 0.001);
    }

    fn scalar_param(v: f32, g: f32) -> Param {
        let mut p = Param::new(Tensor::scalar(v));
        p.grad = Tensor::scalar(g);
        p
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        let mut p = scalar_param(0.7, 0.0);
        let mut st = AdamState::for_params([&p]);
        assert!(adam_step(&mut [&mut p], &mut st, 0.01, &cfg).unwrap());
        assert_eq!(p.value.data(), &[0.7]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        let mut p = scalar_param(1.0, 1.0);
        let mut st = AdamState::for_params([&p]);
        adam_step(&mut [&mut p], &mut st, 0.001, &cfg).unwrap();
        // bias-corrected m = v = 1, so the update is lr / (1 + eps)
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((p.value.data()[0] as f64 - expected).abs() < 1e-7);
    }

    #[test]
    fn decoupled_decay() {
        let cfg = TrainConfig { weight_decay: 0.5, ..TrainConfig::default() };
        let mut p = scalar_param(2.0, 0.0);
        let mut st = AdamState::for_params([&p]);
        adam_step(&mut [&mut p], &mut st, 0.1, &cfg).unwrap();
        assert!((p.value.data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-6);
    }

    #[test]
    fn non_finite_grad_skips() {
        let cfg = TrainConfig::default();
        let mut p = scalar_param(1.0, f32::NAN);
        let mut st = AdamState::for_params([&p]);
        assert!(!adam_step(&mut [&mut p], &mut st, 0.1, &cfg).unwrap());
        assert_eq!(st.step, 0);
        assert_eq!(p.value.data(), &[1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr0: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
