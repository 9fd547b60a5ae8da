//! Per-pixel two-layer perceptron over blurred intensity features.
//!
//! Each pixel sees six features: its intensity, the box-blurred intensity at
//! radii 2 and 5, its normalized column and row coordinates, and a constant 1.
//! The score is `sigmoid(W2 · relu(W1 · f + b1) + b2)`, clamped into the open
//! unit interval.
//!
//! Parameters are stored flat in the order `W1` (row-major, `HIDDEN × FEATURES`),
//! `b1`, `W2`, `b2`. Checkpoints hold a 16-byte header (`b"MBOXMLP\0"`, version
//! and parameter count as little-endian `u32`) followed by the parameters as
//! little-endian `f64`.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proxy::{GradientMap, ScoreMap, SCORE_EPS};
use crate::raster::Raster;
use crate::rng::{keyed_stream, INIT_DOMAIN};

pub const FEATURES: usize = 6;
pub const HIDDEN: usize = 16;
pub const BLUR_RADII: [usize; 2] = [2, 5];
pub const PARAM_COUNT: usize = HIDDEN * FEATURES + HIDDEN + HIDDEN + 1;

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * FEATURES;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"MBOXMLP\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Mean over the `(2r+1)²` window, restricted to pixels inside the image.
pub fn box_blur(image: &Raster<f64>, radius: usize) -> Raster<f64> {
    let (h, w) = image.shape();
    // summed-area table with a zero border
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for i in 0..h {
        let mut row = 0.0;
        for j in 0..w {
            row += image.get(i, j);
            sat[(i + 1) * (w + 1) + j + 1] = sat[i * (w + 1) + j + 1] + row;
        }
    }
    Raster::from_fn(h, w, |i, j| {
        let i0 = i.saturating_sub(radius);
        let j0 = j.saturating_sub(radius);
        let i1 = (i + radius + 1).min(h);
        let j1 = (j + radius + 1).min(w);
        let s = sat[i1 * (w + 1) + j1] - sat[i0 * (w + 1) + j1] - sat[i1 * (w + 1) + j0] + sat[i0 * (w + 1) + j0];
        s / ((i1 - i0) * (j1 - j0)) as f64
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    height: usize,
    width: usize,
    data: Vec<[f64; FEATURES]>,
}

impl FeatureStack {
    pub fn from_image(image: &Raster<f64>) -> Self {
        let (h, w) = image.shape();
        let near = box_blur(image, BLUR_RADII[0]);
        let far = box_blur(image, BLUR_RADII[1]);
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                data.push([
                    image.get(i, j),
                    near.get(i, j),
                    far.get(i, j),
                    (j as f64 + 0.5) / w as f64,
                    (i as f64 + 0.5) / h as f64,
                    1.0,
                ]);
            }
        }
        FeatureStack {
            height: h,
            width: w,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f64; FEATURES] {
        &self.data[i * self.width + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn zeros() -> Self {
        ModelParams(vec![0.0; PARAM_COUNT])
    }

    /// Uniform in `±1/sqrt(fan_in)` for every weight and bias of a layer.
    pub fn init(seed: u64) -> Self {
        let mut rng = keyed_stream(INIT_DOMAIN, seed, "mlp", 0, 0);
        let mut p = vec![0.0; PARAM_COUNT];
        let a1 = 1.0 / (FEATURES as f64).sqrt();
        let a2 = 1.0 / (HIDDEN as f64).sqrt();
        for v in &mut p[W1..W2] {
            *v = rng.gen_range(-a1..a1);
        }
        for v in &mut p[W2..] {
            *v = rng.gen_range(-a2..a2);
        }
        ModelParams(p)
    }

    #[inline]
    pub fn w1(&self, k: usize, f: usize) -> f64 {
        self.0[W1 + k * FEATURES + f]
    }

    #[inline]
    pub fn b1(&self, k: usize) -> f64 {
        self.0[B1 + k]
    }

    #[inline]
    pub fn w2(&self, k: usize) -> f64 {
        self.0[W2 + k]
    }

    #[inline]
    pub fn b2(&self) -> f64 {
        self.0[B2]
    }

    pub fn b2_mut(&mut self) -> &mut f64 {
        &mut self.0[B2]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(&CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(self.0.len() as u32).to_le_bytes())?;
        for v in &self.0 {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::parse(0, "truncated checkpoint header"))?;
        if header[..8] != CHECKPOINT_MAGIC {
            return Err(Error::parse(0, "bad checkpoint magic"));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::parse(8, format!("unsupported checkpoint version {version}")));
        }
        let count = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        if count != PARAM_COUNT {
            return Err(Error::parse(12, format!("expected {PARAM_COUNT} parameters, found {count}")));
        }
        let mut params = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for k in 0..count {
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::parse(16 + 8 * k, "truncated checkpoint body"))?;
            let v = f64::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(Error::parse(16 + 8 * k, "non-finite parameter"));
            }
            params.push(v);
        }
        Ok(ModelParams(params))
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pre: Vec<[f64; HIDDEN]>,
    /// Derivative of the clamped sigmoid output with respect to its logit.
    dscore: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn forward_cached(features: &FeatureStack, params: &ModelParams) -> (ScoreMap, ForwardCache) {
    let (h, w) = features.shape();
    let n = h * w;
    let mut scores = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut dscore = Vec::with_capacity(n);
    for f in &features.data {
        let mut z1 = [0.0; HIDDEN];
        let mut logit = params.b2();
        for (k, z) in z1.iter_mut().enumerate() {
            let row = &params.0[W1 + k * FEATURES..W1 + (k + 1) * FEATURES];
            *z = params.b1(k) + row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
            if *z > 0.0 {
                logit += params.w2(k) * *z;
            }
        }
        let s = sigmoid(logit);
        let clamped = s.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
        dscore.push(if clamped == s { s * (1.0 - s) } else { 0.0 });
        scores.push(clamped);
        pre.push(z1);
    }
    let m = ScoreMap::new(Raster::from_vec(h, w, scores).expect("shape")).expect("finite scores");
    (m, ForwardCache { pre, dscore })
}

pub fn forward(features: &FeatureStack, params: &ModelParams) -> ScoreMap {
    forward_cached(features, params).0
}

/// Parameter gradient of `Σ upstream · m`.
pub fn backward(
    features: &FeatureStack,
    params: &ModelParams,
    cache: &ForwardCache,
    upstream: &GradientMap,
) -> Result<Vec<f64>> {
    upstream.ensure_shape(features.shape())?;
    let mut grad = vec![0.0; PARAM_COUNT];
    for ((f, z1), (&ds, &g)) in features
        .data
        .iter()
        .zip(&cache.pre)
        .zip(cache.dscore.iter().zip(upstream.as_slice()))
    {
        let dlogit = g * ds;
        if dlogit == 0.0 {
            continue;
        }
        grad[B2] += dlogit;
        for k in 0..HIDDEN {
            if z1[k] <= 0.0 {
                continue;
            }
            grad[W2 + k] += dlogit * z1[k];
            let dz = dlogit * params.w2(k);
            grad[B1 + k] += dz;
            let row = &mut grad[W1 + k * FEATURES..W1 + (k + 1) * FEATURES];
            for (r, x) in row.iter_mut().zip(f) {
                *r += dz * x;
            }
        }
    }
    Ok(grad)
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(n: usize, learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerState {
            first: vec![0.0; n],
            second: vec![0.0; n],
            step: 0,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.first.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.learning_rate * self.weight_decay;
        for k in 0..params.len() {
            let g = grads[k];
            self.first[k] = self.beta1 * self.first[k] + (1.0 - self.beta1) * g;
            self.second[k] = self.beta2 * self.second[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[k] / c1;
            let v_hat = self.second[k] / c2;
            params[k] = params[k] * decay - self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
