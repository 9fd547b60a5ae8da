//! Label correction: predicted masks to boxes, IoU matching, merging and the
//! unconfident-scale schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, connected_components, tightest_box, BBox, BinaryMask};
use crate::proxy::ScoreMap;

/// Components smaller than this are treated as speckle.
pub const MIN_COMPONENT_PX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergeRule {
    /// Coordinate-wise mean of label and prediction.
    #[serde(rename = "AVERAGE")]
    Average,
    /// Adopt the predicted box.
    #[serde(rename = "REPLACE")]
    Replace,
}

impl MergeRule {
    pub fn merge(self, label: &BBox, pred: &BBox) -> BBox {
        match self {
            MergeRule::Replace => *pred,
            MergeRule::Average => BBox {
                x_lt: 0.5 * (label.x_lt + pred.x_lt),
                y_lt: 0.5 * (label.y_lt + pred.y_lt),
                x_rb: 0.5 * (label.x_rb + pred.x_rb),
                y_rb: 0.5 * (label.y_rb + pred.y_rb),
            },
        }
    }
}

impl std::str::FromStr for MergeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AVERAGE" => Ok(MergeRule::Average),
            "REPLACE" => Ok(MergeRule::Replace),
            other => Err(Error::Config(format!("unknown merge rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionConfig {
    /// IoU a label/prediction pair must exceed to be merged.
    pub tau: f64,
    /// Correct every this many epochs.
    pub interval_epochs: usize,
    pub lambda0: f64,
    pub merge_rule: MergeRule,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig {
            tau: 0.7,
            interval_epochs: 10,
            lambda0: 0.2,
            merge_rule: MergeRule::Average,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.interval_epochs == 0 {
            return Err(Error::Config("interval_epochs must be >= 1".into()));
        }
        if !(self.lambda0 >= 0.0 && self.lambda0 < 0.5) {
            return Err(Error::Config(format!("lambda0 must lie in [0, 0.5), got {}", self.lambda0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub label_index: usize,
    pub pred_index: usize,
    pub iou: f64,
}

/// What one correction event did to one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCorrection {
    pub image_id: String,
    pub pairs: Vec<MatchPair>,
    pub boxes_before: Vec<BBox>,
    pub boxes_after: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    pub epoch: usize,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub images: Vec<ImageCorrection>,
}

impl CorrectionEvent {
    /// One JSON line per image, for the audit log.
    pub fn to_jsonl(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Line<'a> {
            epoch: usize,
            image_id: &'a str,
            pairs: &'a [MatchPair],
            boxes_before: &'a [BBox],
            boxes_after: &'a [BBox],
            lambda_before: f64,
            lambda_after: f64,
        }
        let mut out = String::new();
        for img in &self.images {
            let line = Line {
                epoch: self.epoch,
                image_id: &img.image_id,
                pairs: &img.pairs,
                boxes_before: &img.boxes_before,
                boxes_after: &img.boxes_after,
                lambda_before: self.lambda_before,
                lambda_after: self.lambda_after,
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn matched_count(&self) -> usize {
        self.images.iter().map(|i| i.pairs.len()).sum()
    }
}

pub fn binarize(score: &ScoreMap, threshold: f64) -> BinaryMask {
    let (h, w) = score.shape();
    BinaryMask::from_fn(h, w, |i, j| score.get(i, j) >= threshold)
}

/// Tightest box of every sufficiently large 8-connected component of `score >= threshold`.
pub fn predicted_boxes(score: &ScoreMap, threshold: f64) -> Vec<BBox> {
    connected_components(&binarize(score, threshold))
        .iter()
        .filter(|c| c.count() >= MIN_COMPONENT_PX)
        .filter_map(tightest_box)
        .collect()
}

/// Matches each label to its best prediction and merges accepted pairs.
///
/// A label's candidate is the prediction with the highest IoU (lowest index on
/// ties). Labels are then served in order of descending candidate IoU (lowest
/// label index on ties); a pair is accepted when its IoU exceeds `tau` and the
/// prediction is still unclaimed. Unmatched labels are returned unchanged.
pub fn match_and_merge(labels: &[BBox], preds: &[BBox], tau: f64, rule: MergeRule) -> (Vec<BBox>, Vec<MatchPair>) {
    let mut candidates: Vec<MatchPair> = labels
        .iter()
        .enumerate()
        .filter_map(|(li, label)| {
            let mut best: Option<MatchPair> = None;
            for (pi, pred) in preds.iter().enumerate() {
                let iou = box_iou(label, pred);
                if best.is_none_or(|b| iou > b.iou) {
                    best = Some(MatchPair {
                        label_index: li,
                        pred_index: pi,
                        iou,
                    });
                }
            }
            best
        })
        .collect();
    candidates.sort_by(|a, b| b.iou.total_cmp(&a.iou).then(a.label_index.cmp(&b.label_index)));

    let mut claimed = vec![false; preds.len()];
    let mut corrected = labels.to_vec();
    let mut pairs = Vec::new();
    for c in candidates {
        if c.iou > tau && !claimed[c.pred_index] {
            claimed[c.pred_index] = true;
            corrected[c.label_index] = rule.merge(&labels[c.label_index], &preds[c.pred_index]);
            pairs.push(c);
        }
    }
    pairs.sort_by_key(|p| p.label_index);
    (corrected, pairs)
}

/// Halves the unconfident scale after a correction event.
pub fn lambda_schedule(lambda: f64) -> f64 {
    lambda / 2.0
}
