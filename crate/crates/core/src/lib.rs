//! Tightness-free box-supervised segmentation.
//!
//! The crate turns a per-pixel score map into a row/column proxy map, supervises
//! it with box-filled masks on the confident interior of each annotation, and
//! applies a hinge-based monotonicity constraint inside the bands that straddle
//! every box edge. Label correction periodically tightens the annotations from
//! the model's own predictions while the band width is halved.
//!
//! Around that objective sits a desk-scale benchmark: a synthetic blob
//! generator, a box-noise model, a small hand-differentiated per-pixel model,
//! an AdamW trainer and the usual Dice/IoU/Hausdorff metrics.

pub mod correction;
pub mod data;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod proxy;
pub mod raster;
pub mod report;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{BBox, BinaryMask, RegionPartition};
pub use losses::{LossBreakdown, LossMode};
pub use proxy::{GradientMap, ProxyMap, ScoreMap};
