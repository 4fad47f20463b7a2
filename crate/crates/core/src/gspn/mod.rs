//! Generative shape proposal network.
//!
//! For every seed point the network crops multi-scale context, predicts the
//! center of the object the seed belongs to, re-centers the context there and
//! encodes it into an instance-sensitive feature `f_ĉ`. A conditional VAE then
//! generates the object's points with per-point confidence, and a separate
//! head scores objectness.

mod gaussian;
mod loss;
mod network;
mod propose;
mod targets;

pub use gaussian::{
    kl_diag_gaussians, kl_diag_graph, sample_latent, sample_latent_graph, GaussianParams,
};
pub use loss::{
    bce_with_logits, generated_values, gspn_loss, prior_generate, scene_training_loss,
    training_forward, GspnLossBreakdown, GtObject, LossWeights, SceneSupervision, SeedTarget,
    StepOptions, TrainForward,
};
pub use network::{resample_object, ContextOutputs, Generated, Gspn, GspnConfig};
pub use propose::{propose, Proposal, ProposeMode, PROPOSE_CHUNK};
pub use targets::{
    assign_proposal_label, binary_cross_entropy, center_target, confidence_epsilon,
    confidence_targets, kl_anneal_weight, smooth_l1, ProposalLabel,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::geom::{Aabb, GeomError, Point3};
use crate::nets::NetError;

/// Guard added under the square root when normalizing predicted directions.
pub const DIRECTION_EPS: f64 = 1e-8;
/// Below this seed-to-center distance the direction target is undefined and masked.
pub const CENTER_DEGENERATE_DISTANCE: f64 = 1e-6;
/// Proposals with fewer confident points than this yield no box.
pub const MIN_CONFIDENT_POINTS: usize = 4;

/// Box of the points with confidence above 0.5, grown by `margin` times the
/// extent on each side. `None` with fewer than [`MIN_CONFIDENT_POINTS`] such
/// points or a zero-volume box.
pub fn proposal_box(points: &[Point3], confidence: &[f64], margin: f64) -> Option<Aabb> {
    let kept: Vec<Point3> = points
        .iter()
        .zip(confidence)
        .filter(|(_, &c)| c > 0.5)
        .map(|(p, _)| *p)
        .collect();
    if kept.len() < MIN_CONFIDENT_POINTS {
        return None;
    }
    let b = Aabb::of_points(&kept).ok()?.expand_by_fraction(margin);
    (b.volume() > 0.0).then_some(b)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GspnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("positive proposal without ground-truth object")]
    MissingGroundTruth,
    #[error("context does not match the configured scales and points per scale")]
    ContextShape,
    #[error("empty seed batch")]
    EmptyBatch,
    #[error("seed index {index} out of range for {len} points")]
    SeedOutOfRange { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[cfg(test)]
pub(crate) mod tests;
