//! Consistency constraint on the confident region and monotonicity constraint
//! on the edge bands.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_filled_mask, region_partition, validate_lambda, BBox, BinaryMask, RegionPartition};
use crate::proxy::{proxy_backward, proxy_forward, GradientMap, ProxyMap, ScoreMap};
use crate::raster::Raster;

pub const CC_EPS: f64 = 1e-6;

/// Which pixels receive which constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossMode {
    /// Dice over the whole image against the box-filled mask.
    #[serde(rename = "LB")]
    Lb,
    /// Dice over the confident region only; bands ignored.
    #[serde(rename = "EXCLUSION")]
    Exclusion,
    /// Dice over the confident region plus the band hinge penalty.
    #[serde(rename = "MC")]
    Mc,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::Lb, LossMode::Exclusion, LossMode::Mc];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::Lb => "LB",
            LossMode::Exclusion => "EXCLUSION",
            LossMode::Mc => "MC",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LB" => Ok(LossMode::Lb),
            "EXCLUSION" => Ok(LossMode::Exclusion),
            "MC" => Ok(LossMode::Mc),
            other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cc: f64,
    pub mc_left: f64,
    pub mc_right: f64,
    pub mc_top: f64,
    pub mc_bottom: f64,
    pub mc_total: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,mode,cc,mc_l,mc_r,mc_t,mc_b,mc_total,total";

    pub fn csv_row(&self, step: usize, mode: LossMode) -> String {
        format!(
            "{step},{mode},{},{},{},{},{},{},{}",
            self.cc, self.mc_left, self.mc_right, self.mc_top, self.mc_bottom, self.mc_total, self.total
        )
    }

    /// Elementwise mean of several breakdowns.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a LossBreakdown>) -> LossBreakdown {
        let mut acc = LossBreakdown::default();
        let mut n = 0usize;
        for b in items {
            acc.cc += b.cc;
            acc.mc_left += b.mc_left;
            acc.mc_right += b.mc_right;
            acc.mc_top += b.mc_top;
            acc.mc_bottom += b.mc_bottom;
            acc.mc_total += b.mc_total;
            acc.total += b.total;
            n += 1;
        }
        if n == 0 {
            return acc;
        }
        let k = n as f64;
        LossBreakdown {
            cc: acc.cc / k,
            mc_left: acc.mc_left / k,
            mc_right: acc.mc_right / k,
            mc_top: acc.mc_top / k,
            mc_bottom: acc.mc_bottom / k,
            mc_total: acc.mc_total / k,
            total: acc.total / k,
        }
    }
}

/// Knobs for composing the full objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossOptions {
    /// Divide each band's hinge sum by the band's pixel count.
    pub mc_normalized: bool,
    pub mc_weight: f64,
    /// Bands whose full width `2·λ·size` is below this many pixels are dropped.
    pub min_band_px: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            mc_normalized: true,
            mc_weight: 1.0,
            min_band_px: 1.0,
        }
    }
}

/// Negative soft Dice between `p` and `b`, restricted to `support`.
pub fn cc_loss(p: &ProxyMap, b: &BinaryMask, support: &BinaryMask) -> Result<(f64, GradientMap)> {
    let shape = p.shape();
    b.raster().ensure_shape(shape)?;
    support.raster().ensure_shape(shape)?;
    if support.is_empty() {
        return Err(Error::NoSupervisedPixels);
    }
    let mut inter = 0.0;
    let mut sum_b = 0.0;
    let mut sum_p = 0.0;
    for ((&v, &bv), &s) in p.values.as_slice().iter().zip(b.as_slice()).zip(support.as_slice()) {
        if s {
            let bv = if bv { 1.0 } else { 0.0 };
            inter += bv * v;
            sum_b += bv;
            sum_p += v;
        }
    }
    let num = 2.0 * inter + CC_EPS;
    let den = sum_b + sum_p + CC_EPS;
    let loss = -num / den;
    let (h, w) = shape;
    let grad = Raster::from_fn(h, w, |i, j| {
        if !support.get(i, j) {
            return 0.0;
        }
        let bv = if b.get(i, j) { 1.0 } else { 0.0 };
        -(2.0 * bv * den - num) / (den * den)
    });
    Ok((loss, grad))
}

/// Outward first-order differences of the proxy map.
///
/// Each map holds `p[pixel] - p[inner neighbor]` for one band orientation, so a
/// positive entry means the response grows when moving away from the box.
#[derive(Debug, Clone, PartialEq)]
pub struct McGradientMaps {
    /// `p[i,j] - p[i,j+1]`, used on the left band.
    pub x_minus: Raster<f64>,
    /// `p[i,j] - p[i,j-1]`, used on the right band.
    pub x_plus: Raster<f64>,
    /// `p[i,j] - p[i+1,j]`, used on the top band.
    pub y_minus: Raster<f64>,
    /// `p[i,j] - p[i-1,j]`, used on the bottom band.
    pub y_plus: Raster<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

impl Side {
    const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Top, Side::Bottom];

    /// Inner neighbor of `(i, j)` for this band, if inside the image.
    fn inner(self, i: usize, j: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        match self {
            Side::Left => (j + 1 < w).then(|| (i, j + 1)),
            Side::Right => (j > 0).then(|| (i, j - 1)),
            Side::Top => (i + 1 < h).then(|| (i + 1, j)),
            Side::Bottom => (i > 0).then(|| (i - 1, j)),
        }
    }
}

pub fn mc_gradient_maps(p: &ProxyMap) -> Result<McGradientMaps> {
    let (h, w) = p.shape();
    if h < 2 || w < 2 {
        return Err(Error::DegenerateDimension(h, w));
    }
    let diff = |side: Side| {
        Raster::from_fn(h, w, |i, j| match side.inner(i, j, h, w) {
            Some((a, b)) => p.get(i, j) - p.get(a, b),
            None => 0.0,
        })
    };
    Ok(McGradientMaps {
        x_minus: diff(Side::Left),
        x_plus: diff(Side::Right),
        y_minus: diff(Side::Top),
        y_plus: diff(Side::Bottom),
    })
}

/// Per-band hinge losses of one partition and their gradient with respect to `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct McLoss {
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
    pub total: f64,
    pub grad: GradientMap,
}

pub fn mc_loss(p: &ProxyMap, partition: &RegionPartition, normalized: bool) -> Result<McLoss> {
    let (h, w) = p.shape();
    partition.confident.raster().ensure_shape((h, w))?;
    if h < 2 || w < 2 {
        return Err(Error::DegenerateDimension(h, w));
    }
    let mut grad = Raster::filled(h, w, 0.0);
    let mut per_band = [0.0; 4];
    for (slot, (side, band)) in per_band.iter_mut().zip(Side::ALL.into_iter().zip(partition.bands())) {
        let count = band.count();
        if count == 0 {
            continue;
        }
        let scale = if normalized { 1.0 / count as f64 } else { 1.0 };
        let mut sum = 0.0;
        for (i, j) in band.pixels() {
            let Some((a, b)) = side.inner(i, j, h, w) else {
                continue;
            };
            let d = p.get(i, j) - p.get(a, b);
            if d > 0.0 {
                sum += d;
                grad.set(i, j, grad.get(i, j) + scale);
                grad.set(a, b, grad.get(a, b) - scale);
            }
        }
        *slot = sum * scale;
    }
    let [left, right, top, bottom] = per_band;
    Ok(McLoss {
        left,
        right,
        top,
        bottom,
        total: left + right + top + bottom,
        grad,
    })
}

/// Partition with sub-pixel bands removed; their pixels fall back to the confident region.
pub fn effective_partition(
    bbox: &BBox,
    lambda: f64,
    height: usize,
    width: usize,
    min_band_px: f64,
) -> Result<RegionPartition> {
    let mut part = region_partition(bbox, lambda, height, width)?;
    let drop_x = 2.0 * lambda * bbox.width() < min_band_px;
    let drop_y = 2.0 * lambda * bbox.height() < min_band_px;
    if drop_x {
        part.confident = part.confident.or(&part.left)?.or(&part.right)?;
        part.left = BinaryMask::zeros(height, width);
        part.right = BinaryMask::zeros(height, width);
    }
    if drop_y {
        part.confident = part.confident.or(&part.top)?.or(&part.bottom)?;
        part.top = BinaryMask::zeros(height, width);
        part.bottom = BinaryMask::zeros(height, width);
    }
    Ok(part)
}

/// Full objective for one image and its gradient with respect to the score map.
///
/// `b` is the union of the box-filled masks. The Dice support is the whole
/// image for [`LossMode::Lb`] and the intersection of the per-box confident
/// regions otherwise. Each box contributes the hinge terms of its own bands.
pub fn total_loss(
    m: &ScoreMap,
    boxes: &[BBox],
    lambda: f64,
    mode: LossMode,
    opts: &LossOptions,
) -> Result<(LossBreakdown, GradientMap)> {
    if boxes.is_empty() {
        return Err(Error::Config("at least one box is required".into()));
    }
    validate_lambda(lambda)?;
    let (h, w) = m.shape();
    let proxy = proxy_forward(m);

    let mut b = BinaryMask::zeros(h, w);
    for bbox in boxes {
        b = b.or(&box_filled_mask(bbox, h, w)?)?;
    }

    let partitions = match mode {
        LossMode::Lb => Vec::new(),
        LossMode::Exclusion | LossMode::Mc => boxes
            .iter()
            .map(|bbox| effective_partition(bbox, lambda, h, w, opts.min_band_px))
            .collect::<Result<Vec<_>>>()?,
    };
    let mut support = BinaryMask::ones(h, w);
    for part in &partitions {
        support = support.and(&part.confident)?;
    }

    let (cc, mut grad_p) = cc_loss(&proxy, &b, &support)?;
    let mut out = LossBreakdown {
        cc,
        ..LossBreakdown::default()
    };
    if mode == LossMode::Mc {
        let weight = opts.mc_weight;
        for part in &partitions {
            let mc = mc_loss(&proxy, part, opts.mc_normalized)?;
            out.mc_left += mc.left;
            out.mc_right += mc.right;
            out.mc_top += mc.top;
            out.mc_bottom += mc.bottom;
            for (g, d) in grad_p.as_mut_slice().iter_mut().zip(mc.grad.as_slice()) {
                *g += weight * d;
            }
        }
        out.mc_total = out.mc_left + out.mc_right + out.mc_top + out.mc_bottom;
    }
    out.total = out.cc + opts.mc_weight * out.mc_total;
    let grad_m = proxy_backward(m, &proxy, &grad_p)?;
    Ok((out, grad_m))
}
