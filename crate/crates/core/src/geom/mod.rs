//! Point-set and box geometry shared by every network stage.
//!
//! Everything here is a pure function of its inputs (plus an explicit random
//! stream where sampling is involved) and runs in brute force: the desk-scale
//! scenes are small enough that no spatial index is needed.

mod aabb;
mod cloud;
mod ops;
mod point;

pub use aabb::{aabb_iou, aabb_of, Aabb};
pub use cloud::{Instance, PointCloud};
pub use ops::{
    ball_query, chamfer_distance, farthest_point_sample, multi_scale_context, nearest_index,
    nms_3d, project_mask_to_scene, random_seeds, three_nn_interpolate, three_nn_weights, ContextScale,
    ContextSet, InterpWeights, INTERP_DELTA,
};
pub use point::Point3;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("box min exceeds max")]
    InvertedBox,
    #[error("colors must lie in [0, 1]")]
    ColorRange,
    #[error("attribute {name} has length {found}, expected {expected}")]
    AttributeLength { name: &'static str, expected: usize, found: usize },
    #[error("requested {k} samples from {n} points")]
    TooManySamples { k: usize, n: usize },
    #[error("start index {start} out of range for {n} points")]
    StartOutOfRange { start: usize, n: usize },
    #[error("need at least 3 known points for interpolation, got {0}")]
    TooFewKnownPoints(usize),
    #[error("feature matrix has {rows} rows for {points} points")]
    FeatureRows { rows: usize, points: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("radii must be positive and strictly increasing")]
    BadRadii,
}
