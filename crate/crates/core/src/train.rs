//! Training loop with periodic label correction, and test-set evaluation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correction::{binarize, lambda_schedule, match_and_merge, predicted_boxes, CorrectionConfig, CorrectionEvent, ImageCorrection};
use crate::data::{LabeledSample, SyntheticSample};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::losses::{total_loss, LossBreakdown, LossMode, LossOptions};
use crate::metrics::{label_accuracy, EvalRecord, HdVariant};
use crate::model::{backward, forward, forward_cached, FeatureStack, ModelParams, OptimizerState, PARAM_COUNT};
use crate::noise::NoiseParams;
use crate::rng::{keyed_stream, SHUFFLE_DOMAIN};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Learning rate for the synthetic benchmark. The default of 1e-4 leaves the
/// per-pixel model essentially untrained within 50 epochs of 200 images.
pub const BENCHMARK_LEARNING_RATE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: LossMode,
    pub lc_enabled: bool,
    pub correction: CorrectionConfig,
    /// Used only when the training manifest carries no noisy boxes.
    pub noise: NoiseParams,
    pub seed: u64,
    pub mc_normalized: bool,
    pub mc_weight: f64,
    pub min_band_px: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Score threshold for predicted masks, both for correction and evaluation.
    pub threshold: f64,
    pub hd_variant: HdVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossOptions::default();
        TrainConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            epochs: 50,
            batch_size: 16,
            mode: LossMode::Mc,
            lc_enabled: true,
            correction: CorrectionConfig::default(),
            noise: NoiseParams::default(),
            seed: 0,
            mc_normalized: loss.mc_normalized,
            mc_weight: loss.mc_weight,
            min_band_px: loss.min_band_px,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            threshold: 0.5,
            hd_variant: HdVariant::Max,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return fail(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        self.correction.validate()?;
        self.noise.validate()?;
        if !(self.mc_weight >= 0.0 && self.mc_weight.is_finite()) {
            return fail(format!("mc_weight must be finite and >= 0, got {}", self.mc_weight));
        }
        if !(self.min_band_px >= 0.0 && self.min_band_px.is_finite()) {
            return fail(format!("min_band_px must be finite and >= 0, got {}", self.min_band_px));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.learning_rate * self.weight_decay < 1.0) {
            return fail(format!("weight_decay must be >= 0 and below 1/learning_rate, got {}", self.weight_decay));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            mc_normalized: self.mc_normalized,
            mc_weight: self.mc_weight,
            min_band_px: self.min_band_px,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// λ in force at the end of the epoch, after any correction.
    pub lambda: f64,
    pub label_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: LossMode,
    pub lc_enabled: bool,
    /// Label accuracy of the boxes as given, before any training.
    pub initial_label_accuracy: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    pub events: Vec<CorrectionEvent>,
    pub eval: Vec<EvalRecord>,
}

impl RunReport {
    /// λ at the start followed by its value after every correction event.
    pub fn lambda_sequence(&self, lambda0: f64) -> Vec<f64> {
        std::iter::once(lambda0).chain(self.events.iter().map(|e| e.lambda_after)).collect()
    }

    /// Label accuracy before training, then after each correction event.
    pub fn accuracy_at_events(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.initial_label_accuracy.into_iter().collect();
        for ev in &self.events {
            if let Some(acc) = self.epochs.get(ev.epoch - 1).and_then(|r| r.label_accuracy) {
                out.push(acc);
            }
        }
        out
    }

    pub fn mean_dice(&self) -> f64 {
        mean(self.eval.iter().map(|r| r.dice))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: RunReport,
    pub params: ModelParams,
    /// Boxes after the final correction, index-aligned with the training set.
    pub boxes: Vec<Vec<BBox>>,
}

struct Item<'a> {
    id: &'a str,
    features: FeatureStack,
    clean: &'a [BBox],
}

fn mean_accuracy(items: &[Item], boxes: &[Vec<BBox>]) -> Result<f64> {
    let accs = items
        .iter()
        .zip(boxes)
        .map(|(it, b)| label_accuracy(b, it.clean))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(accs.into_iter()))
}

/// Trains from scratch on `train_set` and, when given, evaluates on `test_set`.
pub fn train(config: &TrainConfig, train_set: &[LabeledSample], test_set: Option<&[SyntheticSample]>) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    for s in train_set {
        if s.boxes.len() != s.sample.clean_boxes.len() {
            return Err(Error::Config(format!("{}: noisy and clean box lists differ in length", s.sample.image_id)));
        }
        if s.boxes.is_empty() {
            return Err(Error::EmptyAnnotation);
        }
    }
    let opts = config.loss_options();
    let items: Vec<Item> = train_set
        .par_iter()
        .map(|s| Item {
            id: &s.sample.image_id,
            features: FeatureStack::from_image(&s.sample.image),
            clean: &s.sample.clean_boxes,
        })
        .collect();
    let mut boxes: Vec<Vec<BBox>> = train_set.iter().map(|s| s.boxes.clone()).collect();
    let mut params = ModelParams::init(config.seed);
    let mut optimizer = OptimizerState::new(PARAM_COUNT, config.learning_rate, config.weight_decay);
    let mut lambda = config.correction.lambda0;

    let mut report = RunReport {
        mode: config.mode,
        lc_enabled: config.lc_enabled,
        initial_label_accuracy: Some(mean_accuracy(&items, &boxes)?),
        epochs: Vec::with_capacity(config.epochs),
        events: Vec::new(),
        eval: Vec::new(),
    };

    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut keyed_stream(SHUFFLE_DOMAIN, config.seed, "", epoch as u64, 0));
        let mut losses = Vec::with_capacity(items.len());
        for batch in order.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&k| {
                    let (m, cache) = forward_cached(&items[k].features, &params);
                    let (loss, grad_m) = total_loss(&m, &boxes[k], lambda, config.mode, &opts)?;
                    let grad = backward(&items[k].features, &params, &cache, &grad_m)?;
                    Ok((loss, grad))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; PARAM_COUNT];
            for (loss, g) in results {
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
                losses.push(loss);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            optimizer.step(&mut params.0, &grad);
        }

        if config.lc_enabled && epoch % config.correction.interval_epochs == 0 {
            let event = correct_labels(config, &items, &params, &mut boxes, epoch, lambda)?;
            lambda = event.lambda_after;
            report.events.push(event);
        }

        report.epochs.push(EpochRecord {
            epoch,
            loss: LossBreakdown::mean(&losses),
            lambda,
            label_accuracy: Some(mean_accuracy(&items, &boxes)?),
        });
    }

    if let Some(test) = test_set {
        report.eval = evaluate(&params, test, config.threshold, config.hd_variant)?;
    }
    Ok(TrainOutcome { report, params, boxes })
}

fn correct_labels(
    config: &TrainConfig,
    items: &[Item],
    params: &ModelParams,
    boxes: &mut [Vec<BBox>],
    epoch: usize,
    lambda: f64,
) -> Result<CorrectionEvent> {
    let cc = &config.correction;
    let updates: Vec<(Vec<BBox>, Vec<_>)> = items
        .par_iter()
        .zip(boxes.par_iter())
        .map(|(it, labels)| {
            let preds = predicted_boxes(&forward(&it.features, params), config.threshold);
            match_and_merge(labels, &preds, cc.tau, cc.merge_rule)
        })
        .collect();
    let mut images = Vec::with_capacity(items.len());
    for ((it, labels), (after, pairs)) in items.iter().zip(boxes.iter_mut()).zip(updates) {
        let before = std::mem::replace(labels, after);
        images.push(ImageCorrection {
            image_id: it.id.to_string(),
            pairs,
            boxes_before: before,
            boxes_after: labels.clone(),
        });
    }
    Ok(CorrectionEvent {
        epoch,
        lambda_before: lambda,
        lambda_after: lambda_schedule(lambda),
        images,
    })
}

/// Thresholded predictions scored against the ground-truth masks.
pub fn evaluate(params: &ModelParams, test_set: &[SyntheticSample], threshold: f64, variant: HdVariant) -> Result<Vec<EvalRecord>> {
    test_set
        .par_iter()
        .map(|s| {
            let score = forward(&FeatureStack::from_image(&s.image), params);
            EvalRecord::evaluate(&s.image_id, &binarize(&score, threshold), &s.gt_mask, variant)
        })
        .collect()
}
