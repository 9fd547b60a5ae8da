//! Row/column-max proxy map and its adjoint.
//!
//! `p[i,j] = max(m[i,:]) · max(m[:,j])`. The backward pass routes each row's and
//! each column's sensitivity to the first index attaining the maximum.

use crate::error::{Error, Result};
use crate::raster::Raster;

pub const SCORE_EPS: f64 = 1e-6;

/// Backpropagated sensitivities, one per pixel.
pub type GradientMap = Raster<f64>;

/// Per-pixel foreground probabilities, kept inside `[SCORE_EPS, 1 - SCORE_EPS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap(Raster<f64>);

impl ScoreMap {
    /// Wraps raw scores, clamping them into the open unit interval.
    pub fn new(raster: Raster<f64>) -> Result<Self> {
        if raster.as_slice().iter().any(|v| v.is_nan()) {
            return Err(Error::Config("score map contains NaN".into()));
        }
        Ok(ScoreMap(raster.map(clamp_score)))
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ScoreMap::new(Raster::from_vec(height, width, data)?)
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        ScoreMap::new(Raster::from_fn(height, width, f))
    }

    pub fn raster(&self) -> &Raster<f64> {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width()
    }
}

#[inline]
pub fn clamp_score(v: f64) -> f64 {
    v.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

/// Proxy map together with the row/column maxima that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyMap {
    pub values: Raster<f64>,
    pub row_max: Vec<f64>,
    pub col_max: Vec<f64>,
    pub row_argmax: Vec<usize>,
    pub col_argmax: Vec<usize>,
}

impl ProxyMap {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// A proxy map built directly from values, without argmax caches.
    /// Only the loss terms that consume `values` may be applied to it.
    pub fn from_values(values: Raster<f64>) -> Self {
        ProxyMap {
            values,
            row_max: Vec::new(),
            col_max: Vec::new(),
            row_argmax: Vec::new(),
            col_argmax: Vec::new(),
        }
    }
}

pub fn proxy_forward(m: &ScoreMap) -> ProxyMap {
    let (h, w) = m.shape();
    let mut row_max = vec![f64::NEG_INFINITY; h];
    let mut row_argmax = vec![0; h];
    let mut col_max = vec![f64::NEG_INFINITY; w];
    let mut col_argmax = vec![0; w];
    for i in 0..h {
        for j in 0..w {
            let v = m.get(i, j);
            // strict comparison keeps the first index on ties
            if v > row_max[i] {
                row_max[i] = v;
                row_argmax[i] = j;
            }
            if v > col_max[j] {
                col_max[j] = v;
                col_argmax[j] = i;
            }
        }
    }
    let values = Raster::from_fn(h, w, |i, j| row_max[i] * col_max[j]);
    ProxyMap {
        values,
        row_max,
        col_max,
        row_argmax,
        col_argmax,
    }
}

/// Gradient of `Σ upstream · p` with respect to the score map.
pub fn proxy_backward(m: &ScoreMap, proxy: &ProxyMap, upstream: &GradientMap) -> Result<GradientMap> {
    let shape = m.shape();
    upstream.ensure_shape(shape)?;
    proxy.values.ensure_shape(shape)?;
    let (h, w) = shape;
    let mut grad = Raster::filled(h, w, 0.0);
    // dL/d rowmax(i) = Σ_j g[i,j] colmax(j); dL/d colmax(j) = Σ_i g[i,j] rowmax(i)
    let mut d_col = vec![0.0; w];
    for i in 0..h {
        let mut d_row = 0.0;
        for j in 0..w {
            let g = upstream.get(i, j);
            d_row += g * proxy.col_max[j];
            d_col[j] += g * proxy.row_max[i];
        }
        let a = proxy.row_argmax[i];
        grad.set(i, a, grad.get(i, a) + d_row);
    }
    for (j, d) in d_col.into_iter().enumerate() {
        let a = proxy.col_argmax[j];
        grad.set(a, j, grad.get(a, j) + d);
    }
    Ok(grad)
}
