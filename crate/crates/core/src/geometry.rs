//! Boxes, binary masks and the confident/unconfident region partition.
//!
//! Continuous coordinates put pixel `(i, j)` (row, column) over the unit square
//! `[j, j+1] × [i, i+1]`. A pixel belongs to a continuous region iff its center
//! `(j + 0.5, i + 0.5)` does.

use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Axis-aligned box given by its top-left and bottom-right corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BBox {
    pub x_lt: f64,
    pub y_lt: f64,
    pub x_rb: f64,
    pub y_rb: f64,
}

#[derive(Deserialize)]
struct RawBox {
    x_lt: f64,
    y_lt: f64,
    x_rb: f64,
    y_rb: f64,
}

impl TryFrom<RawBox> for BBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        BBox::new(raw.x_lt, raw.y_lt, raw.x_rb, raw.y_rb)
    }
}

impl BBox {
    pub fn new(x_lt: f64, y_lt: f64, x_rb: f64, y_rb: f64) -> Result<Self> {
        let coords = [x_lt, y_lt, x_rb, y_rb];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite coordinates {coords:?}")));
        }
        if !(x_lt < x_rb && y_lt < y_rb) {
            return Err(Error::InvalidBox(format!("non-positive area {coords:?}")));
        }
        Ok(BBox {
            x_lt,
            y_lt,
            x_rb,
            y_rb,
        })
    }

    /// Builds a box from center and size.
    pub fn from_center(x_c: f64, y_c: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(x_c - w / 2.0, y_c - h / 2.0, x_c + w / 2.0, y_c + h / 2.0)
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x_rb - self.x_lt
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y_rb - self.y_lt
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        ((self.x_lt + self.x_rb) / 2.0, (self.y_lt + self.y_rb) / 2.0)
    }

    /// Intersection with the image frame `[0, width] × [0, height]`, if it has positive area.
    pub fn clip(&self, height: usize, width: usize) -> Option<BBox> {
        let x_lt = self.x_lt.max(0.0);
        let y_lt = self.y_lt.max(0.0);
        let x_rb = self.x_rb.min(width as f64);
        let y_rb = self.y_rb.min(height as f64);
        BBox::new(x_lt, y_lt, x_rb, y_rb).ok()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_lt: self.x_lt + dx,
            y_lt: self.y_lt + dy,
            x_rb: self.x_rb + dx,
            y_rb: self.y_rb + dy,
        }
    }
}

/// Indices `k` in `0..n` whose pixel center `k + 0.5` lies in the closed interval `[lo, hi]`.
fn center_range(lo: f64, hi: f64, n: usize) -> Range<usize> {
    if !(lo <= hi) {
        return 0..0;
    }
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    if last < first {
        return 0..0;
    }
    first as usize..last as usize + 1
}

/// H×W raster of {0, 1} values.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(Raster<bool>);

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask(Raster::filled(height, width, false))
    }

    /// The all-ones map.
    pub fn ones(height: usize, width: usize) -> Self {
        BinaryMask(Raster::filled(height, width, true))
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut(usize, usize) -> bool) -> Self {
        BinaryMask(Raster::from_fn(height, width, f))
    }

    pub fn from_raster(raster: Raster<bool>) -> Self {
        BinaryMask(raster)
    }

    /// Parses rows of `0`/`1` characters; whitespace between rows is ignored.
    pub fn from_rows(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        BinaryMask::from_fn(height, width, |i, j| rows[i].as_bytes()[j] == b'1')
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width()
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.0.get(i, j)
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.0.set(i, j, value)
    }

    #[inline]
    pub fn as_slice(&self) -> &[bool] {
        self.0.as_slice()
    }

    pub fn raster(&self) -> &Raster<bool> {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.as_slice().iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.0.as_slice().iter().any(|&v| v)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        other.0.ensure_shape(self.shape())?;
        let data = self
            .as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(BinaryMask(Raster::from_vec(self.height(), self.width(), data)?))
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask(self.0.map(|v| !v))
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        other.0.ensure_shape(self.shape())?;
        Ok(self
            .as_slice()
            .iter()
            .zip(other.as_slice())
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape() == other.shape()
            && self
                .as_slice()
                .iter()
                .zip(other.as_slice())
                .all(|(&a, &b)| !a || b)
    }

    /// Iterator over `(row, col)` of foreground pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width();
        self.as_slice()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(k, _)| (k / w, k % w))
    }

    /// Shifts the mask content by an integer offset; pixels leaving the frame are dropped.
    pub fn shifted(&self, di: isize, dj: isize) -> BinaryMask {
        let (h, w) = self.shape();
        BinaryMask::from_fn(h, w, |i, j| {
            let si = i as isize - di;
            let sj = j as isize - dj;
            si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w && self.get(si as usize, sj as usize)
        })
    }
}

/// Rasterizes a box: 1 where the pixel center lies in the (clipped) box, 0 elsewhere.
pub fn box_filled_mask(bbox: &BBox, height: usize, width: usize) -> Result<BinaryMask> {
    let clipped = bbox.clip(height, width).ok_or(Error::EmptyAnnotation)?;
    let rows = center_range(clipped.y_lt, clipped.y_rb, height);
    let cols = center_range(clipped.x_lt, clipped.x_rb, width);
    let mut mask = BinaryMask::zeros(height, width);
    for i in rows {
        for j in cols.clone() {
            mask.set(i, j, true);
        }
    }
    Ok(mask)
}

/// Smallest box containing every foreground pixel, or `None` for an empty mask.
pub fn tightest_box(mask: &BinaryMask) -> Option<BBox> {
    let mut extent: Option<(usize, usize, usize, usize)> = None;
    for (i, j) in mask.pixels() {
        extent = Some(match extent {
            None => (i, j, i, j),
            Some((i0, j0, i1, j1)) => (i0.min(i), j0.min(j), i1.max(i), j1.max(j)),
        });
    }
    extent.map(|(i0, j0, i1, j1)| BBox {
        x_lt: j0 as f64,
        y_lt: i0 as f64,
        x_rb: (j1 + 1) as f64,
        y_rb: (i1 + 1) as f64,
    })
}

/// 8-connected components, ordered by their first pixel in row-major order.
pub fn connected_components(mask: &BinaryMask) -> Vec<BinaryMask> {
    let (h, w) = mask.shape();
    let mut seen = vec![false; h * w];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if seen[start] || !mask.as_slice()[start] {
            continue;
        }
        let mut component = BinaryMask::zeros(h, w);
        seen[start] = true;
        queue.push_back((start / w, start % w));
        while let Some((i, j)) = queue.pop_front() {
            component.set(i, j, true);
            for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    let ni = i as isize + di;
                    let nj = j as isize + dj;
                    if ni < 0 || nj < 0 || ni >= h as isize || nj >= w as isize {
                        continue;
                    }
                    let k = ni as usize * w + nj as usize;
                    if !seen[k] && mask.as_slice()[k] {
                        seen[k] = true;
                        queue.push_back((ni as usize, nj as usize));
                    }
                }
            }
        }
        components.push(component);
    }
    components
}

pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_rb.min(b.x_rb) - a.x_lt.max(b.x_lt)).max(0.0);
    let h = (a.y_rb.min(b.y_rb) - a.y_lt.max(b.y_lt)).max(0.0);
    w * h
}

/// Intersection over union in continuous coordinates.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Confident region and the four edge bands of one box.
///
/// The five masks partition the all-ones map: corner pixels claimed by two bands
/// go to the first of left, right, top, bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    pub confident: BinaryMask,
    pub left: BinaryMask,
    pub right: BinaryMask,
    pub top: BinaryMask,
    pub bottom: BinaryMask,
    pub lambda: f64,
}

impl RegionPartition {
    pub fn bands(&self) -> [&BinaryMask; 4] {
        [&self.left, &self.right, &self.top, &self.bottom]
    }

    /// Union of the four bands.
    pub fn unconfident(&self) -> BinaryMask {
        self.confident.not()
    }
}

pub(crate) fn validate_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("unconfident scale must be >= 0, got {lambda}")));
    }
    if lambda >= 0.5 {
        return Err(Error::BandsCrossCenter(lambda));
    }
    Ok(())
}

fn fill(mask: &mut BinaryMask, rows: Range<usize>, cols: Range<usize>, taken: &mut BinaryMask) {
    for i in rows {
        for j in cols.clone() {
            if !taken.get(i, j) {
                taken.set(i, j, true);
                mask.set(i, j, true);
            }
        }
    }
}

/// Splits the image into the confident region and the four bands of width
/// `2·λ·size` centered on each edge of `bbox`.
pub fn region_partition(bbox: &BBox, lambda: f64, height: usize, width: usize) -> Result<RegionPartition> {
    validate_lambda(lambda)?;
    let dx = lambda * bbox.width();
    let dy = lambda * bbox.height();
    let outer_cols = center_range(bbox.x_lt - dx, bbox.x_rb + dx, width);
    let outer_rows = center_range(bbox.y_lt - dy, bbox.y_rb + dy, height);

    let mut taken = BinaryMask::zeros(height, width);
    let mut left = BinaryMask::zeros(height, width);
    let mut right = BinaryMask::zeros(height, width);
    let mut top = BinaryMask::zeros(height, width);
    let mut bottom = BinaryMask::zeros(height, width);
    fill(
        &mut left,
        outer_rows.clone(),
        center_range(bbox.x_lt - dx, bbox.x_lt + dx, width),
        &mut taken,
    );
    fill(
        &mut right,
        outer_rows.clone(),
        center_range(bbox.x_rb - dx, bbox.x_rb + dx, width),
        &mut taken,
    );
    fill(
        &mut top,
        center_range(bbox.y_lt - dy, bbox.y_lt + dy, height),
        outer_cols.clone(),
        &mut taken,
    );
    fill(
        &mut bottom,
        center_range(bbox.y_rb - dy, bbox.y_rb + dy, height),
        outer_cols,
        &mut taken,
    );
    Ok(RegionPartition {
        confident: taken.not(),
        left,
        right,
        top,
        bottom,
        lambda,
    })
}
