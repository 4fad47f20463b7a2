//! PointNet and PointNet++ building blocks.

mod mlp;
mod pointnet2;

pub use mlp::{pointnet_encode, Linear, SharedMlp};
pub use pointnet2::{
    argmax_rows, backbone_input, interpolate_features, semantic_pretrain_loss, BackboneConfig, BackboneOutput,
    FeaturePropagation, LevelRef, SaOutput, SaSpec, SemanticBackbone, SetAbstraction,
    BACKBONE_INPUT_WIDTH,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::geom::GeomError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("invalid layer widths: {0}")]
    Widths(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
}
