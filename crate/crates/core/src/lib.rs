//! Roof-material classification from aerial imagery, at desk scale.
//!
//! The crate covers the whole flow from building footprints to stacked
//! second-level predictions:
//!
//! * [`geodata`] parses footprint polygons and computes exact polygon geometry.
//! * [`raster`] rasterizes roof masks and cuts per-building chips (RGB + mask).
//! * [`tensorops`] adapts pretrained convolution weights to extra input channels
//!   and provides a reference convolution to check the adaptation.
//! * [`augment`] is a seedable, mask-aware augmentation engine.
//! * [`spatial`] builds neighbourhood meta-features for second-level models.
//! * [`stacking`] holds fold assignment, out-of-fold prediction, gradient
//!   boosting, logistic regression, ensembles, test-time augmentation and metrics.
//! * [`synth`] generates synthetic maps and a noisy oracle base model.
//!
//! Geometry and tensor math are generic over the scalar type (see [`Scalar`]);
//! the aliases below fix the precisions used by the rest of the pipeline.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod geodata;
pub mod raster;
pub mod scalar;
pub mod seed;
pub mod spatial;
pub mod stacking;
pub mod synth;
pub mod tensorops;

pub use scalar::Scalar;

/// Map-frame point in pixel coordinates.
pub type Point = geodata::Point<f64>;
/// Roof footprint polygon in pixel coordinates.
pub type Polygon = geodata::Polygon<f64>;
/// Convolution weights as stored on disk.
pub type Tensor4f = tensorops::Tensor4<f32>;
/// Convolution weights in double precision, used for oracle checks.
pub type Tensor4d = tensorops::Tensor4<f64>;
/// Single-precision NHWC feature map.
pub type FeatureMapF = tensorops::FeatureMap<f32>;
/// Double-precision NHWC feature map.
pub type FeatureMapD = tensorops::FeatureMap<f64>;

/// Number of roof classes.
pub const NUM_CLASSES: usize = 5;

/// Number of source maps a building can belong to.
pub const NUM_MAPS: usize = 7;

/// Class names in column order of every probability matrix.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "concrete_cement",
    "healthy_metal",
    "incomplete",
    "irregular_metal",
    "other",
];

/// Probability vector over the roof classes.
pub type ClassProbs = [f64; NUM_CLASSES];
