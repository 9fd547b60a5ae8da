//! Synthetic tightness-free annotations.
//!
//! A clean box with center `(x_c, y_c)` and size `(w, h)` becomes
//! `x_c + Δx·w, y_c + Δy·h, (1 + Δw)·w, (1 + Δh)·h` with all four deltas drawn
//! i.i.d. from `N(0, σ²)`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng::{keyed_stream, NOISE_DOMAIN};

/// Attempts per box before giving up on a perturbation that leaves the frame.
pub const MAX_ATTEMPTS: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub sigma: f64,
    pub seed: u64,
    /// Lower bound on perturbed width and height, in pixels.
    pub min_size: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            sigma: 0.2,
            seed: 0,
            min_size: 1.0,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.min_size >= 1.0) || !self.min_size.is_finite() {
            return Err(Error::Config(format!("min_size must be >= 1, got {}", self.min_size)));
        }
        Ok(())
    }
}

/// Relative shift/scale draws `(Δx, Δy, Δw, Δh)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draws {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl Draws {
    pub const ZERO: Draws = Draws {
        dx: 0.0,
        dy: 0.0,
        dw: 0.0,
        dh: 0.0,
    };

    pub fn as_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }
}

/// Draws for box `box_index` of `image_id`; `attempt` selects a fresh stream on resampling.
pub fn sample_draws(sigma: f64, seed: u64, image_id: &str, box_index: u64, attempt: u64) -> Draws {
    let mut rng = keyed_stream(NOISE_DOMAIN, seed, image_id, box_index, attempt);
    let mut next = || {
        let z: f64 = StandardNormal.sample(&mut rng);
        sigma * z
    };
    Draws {
        dx: next(),
        dy: next(),
        dw: next(),
        dh: next(),
    }
}

/// Image frame `(height, width)` used to clip perturbed boxes.
pub type Frame = (usize, usize);

/// Applies one set of draws to a clean box.
///
/// Sizes are clamped to `min_size`. With a frame, the result is clipped to the
/// image and must keep at least one pixel of overlap in each direction.
pub fn perturb_box(bbox: &BBox, params: &NoiseParams, draws: Draws, frame: Option<Frame>) -> Result<BBox> {
    let (x_c, y_c) = bbox.center();
    let (w, h) = (bbox.width(), bbox.height());
    let new_xc = x_c + draws.dx * w;
    let new_yc = y_c + draws.dy * h;
    let new_w = ((1.0 + draws.dw) * w).max(params.min_size);
    let new_h = ((1.0 + draws.dh) * h).max(params.min_size);
    let out = BBox::from_center(new_xc, new_yc, new_w, new_h)?;
    let Some((height, width)) = frame else {
        return Ok(out);
    };
    match out.clip(height, width) {
        Some(c) if c.width() >= 1.0 && c.height() >= 1.0 => Ok(c),
        _ => Err(Error::NoiseDestroyedAnnotation),
    }
}

/// Perturbs box `box_index` of `image_id`, resampling destroyed annotations.
pub fn perturb_keyed(
    bbox: &BBox,
    params: &NoiseParams,
    image_id: &str,
    box_index: usize,
    frame: Option<Frame>,
) -> Result<BBox> {
    for attempt in 0..MAX_ATTEMPTS {
        let draws = sample_draws(params.sigma, params.seed, image_id, box_index as u64, attempt);
        match perturb_box(bbox, params, draws, frame) {
            Err(Error::NoiseDestroyedAnnotation) => continue,
            other => return other,
        }
    }
    Err(Error::NoiseDestroyedAnnotation)
}

/// One image's annotation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub image_id: String,
    pub boxes: Vec<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

impl BoxRecord {
    pub fn frame(&self) -> Option<Frame> {
        self.height.zip(self.width)
    }
}

pub fn perturb_dataset(clean: &[BoxRecord], params: &NoiseParams) -> Result<Vec<BoxRecord>> {
    params.validate()?;
    clean
        .iter()
        .map(|rec| {
            let boxes = rec
                .boxes
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    if params.sigma == 0.0 {
                        Ok(*b)
                    } else {
                        perturb_keyed(b, params, &rec.image_id, k, rec.frame())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BoxRecord {
                boxes,
                ..rec.clone()
            })
        })
        .collect()
}
