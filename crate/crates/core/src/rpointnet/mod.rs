//! Region-based PointNet: proposals become RoIs, each RoI is resampled into a
//! unit cube with interpolated seed features, and three heads classify it,
//! refine its box and segment its points.

mod align;
mod heads;
mod infer;

pub use align::{point_roi_align, RoiSample, SeedFeatures};
pub use heads::{
    head_input, rpointnet_loss, DetectionHeads, HeadConfig, HeadOutput, RoiTarget,
    RpnLossBreakdown,
};
pub use infer::{
    detect, run_inference, scene_proposals, scene_rpointnet_loss, DetectionParams, FrozenStages,
    ProposalParams, SceneProposals,
};
pub use crate::scenegen::InstancePrediction;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::geom::{aabb_iou, Aabb, GeomError, Point3};
use crate::gspn::{proposal_box, GspnError, Proposal};
use crate::nets::NetError;

/// Fraction of each extent added on every side of a proposal's confident box.
pub const ROI_MARGIN: f64 = 0.05;
/// Size deltas are clamped to this magnitude before being applied to a box.
pub const BOX_DELTA_CLAMP: f64 = 4.135_166_556_742_356; // ln(1000 / 16)
/// RoIs above this IoU with a ground-truth box are positives, below it negatives.
pub const POSITIVE_IOU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RpnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Gspn(#[from] GspnError),
    #[error("empty RoI: no scene points inside {0:?}")]
    EmptyRoi([f64; 6]),
    #[error("box has a non-positive extent: {0:?}")]
    DegenerateBox([f64; 6]),
    #[error("need at least 3 seed points for feature interpolation, got {0}")]
    TooFewSeeds(usize),
    #[error("no labeled RoIs")]
    NoRois,
    #[error("invalid head configuration: {0}")]
    Config(String),
    #[error("target category {category} outside 1..={categories}")]
    Category { category: u32, categories: usize },
}

/// Candidate region derived from one proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub bbox: Aabb,
    /// Objectness of the source proposal.
    pub score: f64,
    /// Index of the source proposal in the list the RoI was built from.
    pub proposal: usize,
}

/// Box over the proposal's confident points grown by `margin`; `None` for
/// degenerate proposals.
pub fn proposal_to_roi(p: &Proposal, index: usize, margin: f64) -> Option<Roi> {
    proposal_box(&p.points, &p.confidence, margin).map(|bbox| Roi { bbox, score: p.objectness, proposal: index })
}

fn positive_extent(b: &Aabb) -> Result<Point3, RpnError> {
    let e = b.extent();
    if e.x > 0.0 && e.y > 0.0 && e.z > 0.0 {
        Ok(e)
    } else {
        Err(RpnError::DegenerateBox(b.to_array()))
    }
}

/// Center and log-size offsets taking `roi` to `target`:
/// `δc = (c_t − c_r) / e_r`, `δs = ln(e_t / e_r)`.
pub fn compute_box_delta(roi: &Aabb, target: &Aabb) -> Result<[f64; 6], RpnError> {
    let er = positive_extent(roi)?;
    let et = positive_extent(target)?;
    let dc = (target.center() - roi.center()).component_div(er);
    Ok([dc.x, dc.y, dc.z, (et.x / er.x).ln(), (et.y / er.y).ln(), (et.z / er.z).ln()])
}

/// Inverse of [`compute_box_delta`].
pub fn apply_box_delta(roi: &Aabb, delta: &[f64; 6]) -> Result<Aabb, RpnError> {
    let e = positive_extent(roi)?;
    let c = roi.center() + Point3::new(delta[0], delta[1], delta[2]).component_mul(e);
    let size = e.component_mul(Point3::new(delta[3].exp(), delta[4].exp(), delta[5].exp()));
    Ok(Aabb::from_center_extent(c, size)?)
}

/// `delta` with its size part clamped to ±[`BOX_DELTA_CLAMP`].
pub fn clamp_box_delta(delta: &[f64; 6]) -> [f64; 6] {
    let mut d = *delta;
    for v in &mut d[3..] {
        *v = v.clamp(-BOX_DELTA_CLAMP, BOX_DELTA_CLAMP);
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoiLabel {
    Positive { gt: usize, category: u32, delta: [f64; 6] },
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledRoi {
    pub roi: usize,
    pub label: RoiLabel,
}

/// Labels every RoI: positive above [`POSITIVE_IOU`] with its best box
/// (lowest index on ties), negative when every IoU is below it, otherwise
/// `None` (exactly at the threshold, or a degenerate match).
pub fn label_rois(rois: &[Roi], gt_boxes: &[Aabb], gt_categories: &[u32]) -> Vec<Option<RoiLabel>> {
    rois.iter()
        .map(|r| {
            let mut best: Option<(usize, f64)> = None;
            for (j, b) in gt_boxes.iter().enumerate() {
                let iou = aabb_iou(&r.bbox, b);
                if best.map_or(true, |(_, v)| iou > v) {
                    best = Some((j, iou));
                }
            }
            match best {
                None => Some(RoiLabel::Negative),
                Some((_, iou)) if iou < POSITIVE_IOU => Some(RoiLabel::Negative),
                Some((j, iou)) if iou > POSITIVE_IOU => compute_box_delta(&r.bbox, &gt_boxes[j])
                    .ok()
                    .map(|delta| RoiLabel::Positive { gt: j, category: gt_categories[j], delta }),
                _ => None,
            }
        })
        .collect()
}

/// Samples up to `max_rois` labeled RoIs at roughly one positive per three
/// negatives. With `P` positives and `N` negatives available:
/// `n_neg = min(N, max_rois − min(P, max_rois/4))` and
/// `n_pos = min(P, max_rois/4, ⌊n_neg/3⌋ + 1)`. The result is in RoI order.
pub fn select_training_rois<R: Rng + ?Sized>(
    rois: &[Roi],
    gt_boxes: &[Aabb],
    gt_categories: &[u32],
    max_rois: usize,
    rng: &mut R,
) -> Vec<LabeledRoi> {
    let labels = label_rois(rois, gt_boxes, gt_categories);
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(RoiLabel::Positive { .. }) => pos.push(i),
            Some(RoiLabel::Negative) => neg.push(i),
            None => {}
        }
    }
    let pos_cap = max_rois / 4;
    let n_neg = neg.len().min(max_rois - pos.len().min(pos_cap));
    let n_pos = pos.len().min(pos_cap).min(n_neg / 3 + 1);
    pos.shuffle(rng);
    neg.shuffle(rng);
    let mut chosen: Vec<usize> = pos[..n_pos].iter().chain(&neg[..n_neg]).copied().collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| LabeledRoi { roi: i, label: labels[i].expect("labeled") }).collect()
}

#[cfg(test)]
mod tests;
