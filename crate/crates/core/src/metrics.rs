//! Mask overlap, boundary Hausdorff distance and label accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, BBox, BinaryMask};

/// Dice coefficient; two empty masks score 1.
pub fn mask_dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Intersection over union; two empty masks score 1.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let union = a.count() + b.count() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum HdVariant {
    /// Maximum of the two directed distances.
    #[default]
    #[serde(rename = "max")]
    Max,
    /// 95th percentile of each directed distance set, then the larger one.
    #[serde(rename = "hd95")]
    P95,
}

/// Foreground pixels with a background 4-neighbor or touching the image edge.
pub fn boundary_pixels(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = mask.shape();
    mask.pixels()
        .filter(|&(i, j)| {
            i == 0
                || j == 0
                || i + 1 == h
                || j + 1 == w
                || !mask.get(i - 1, j)
                || !mask.get(i + 1, j)
                || !mask.get(i, j - 1)
                || !mask.get(i, j + 1)
        })
        .collect()
}

fn directed(from: &[(usize, usize)], to: &[(usize, usize)]) -> Vec<f64> {
    from.iter()
        .map(|&(i, j)| {
            to.iter()
                .map(|&(k, l)| {
                    let di = i as f64 - k as f64;
                    let dj = j as f64 - l as f64;
                    di * di + dj * dj
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

fn percentile_95(mut d: Vec<f64>) -> f64 {
    d.sort_by(f64::total_cmp);
    let rank = ((0.95 * d.len() as f64).ceil() as usize).clamp(1, d.len());
    d[rank - 1]
}

/// Symmetric Hausdorff distance between the boundary pixel centers of two masks.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask, variant: HdVariant) -> Result<f64> {
    a.raster().ensure_shape(b.shape())?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedHausdorff);
    }
    let ba = boundary_pixels(a);
    let bb = boundary_pixels(b);
    let ab = directed(&ba, &bb);
    let ba_dist = directed(&bb, &ba);
    Ok(match variant {
        HdVariant::Max => {
            let m1 = ab.into_iter().fold(0.0, f64::max);
            let m2 = ba_dist.into_iter().fold(0.0, f64::max);
            m1.max(m2)
        }
        HdVariant::P95 => percentile_95(ab).max(percentile_95(ba_dist)),
    })
}

/// Mean IoU between index-aligned training and clean boxes.
pub fn label_accuracy(current: &[BBox], clean: &[BBox]) -> Result<f64> {
    if current.len() != clean.len() {
        return Err(Error::Config(format!(
            "box lists are not index-aligned: {} vs {}",
            current.len(),
            clean.len()
        )));
    }
    if clean.is_empty() {
        return Ok(1.0);
    }
    Ok(current.iter().zip(clean).map(|(a, b)| box_iou(a, b)).sum::<f64>() / clean.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub dice: f64,
    pub iou: f64,
    /// `None` when the prediction (or the reference) is empty.
    pub hd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_accuracy: Option<f64>,
}

impl EvalRecord {
    pub const CSV_HEADER: &'static str = "image_id,dice,iou,hd";

    pub fn evaluate(image_id: &str, pred: &BinaryMask, gt: &BinaryMask, variant: HdVariant) -> Result<Self> {
        let hd = match hausdorff(pred, gt, variant) {
            Ok(v) => Some(v),
            Err(Error::UndefinedHausdorff) => None,
            Err(e) => return Err(e),
        };
        Ok(EvalRecord {
            image_id: image_id.to_string(),
            dice: mask_dice(pred, gt)?,
            iou: mask_iou(pred, gt)?,
            hd,
            label_accuracy: None,
        })
    }

    pub fn csv_row(&self) -> String {
        let hd = self.hd.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.image_id, self.dice, self.iou, hd)
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 4 {
            return Err(Error::parse(0, format!("expected 4 fields, got {}: {line:?}", fields.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::parse(0, format!("bad number {s:?}: {e}")))
        };
        Ok(EvalRecord {
            image_id: fields[0].to_string(),
            dice: num(fields[1])?,
            iou: num(fields[2])?,
            hd: if fields[3].is_empty() { None } else { Some(num(fields[3])?) },
            label_accuracy: None,
        })
    }
}
