//! Instance-segmentation metrics: mask IoU, average precision with greedy
//! matching, proposal box mIoU, and the metrics report.

mod report;

pub use report::{evaluate_corpus, CategoryAp, EvalReport, ProposalStats};

use thiserror::Error;

use crate::geom::{aabb_iou, chamfer_distance, Aabb, GeomError, Point3, PointCloud};
use crate::gspn::{proposal_box, Proposal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("mask lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no foreground seeds to evaluate")]
    NoForeground,
    #[error("prediction file covers {found} scenes, corpus has {expected}")]
    SceneCount { expected: usize, found: usize },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("metrics line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// `|a ∧ b| / |a ∨ b|`, 0 for an empty union.
pub fn mask_iou(a: &[bool], b: &[bool]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// A predicted instance mask within scene `scene`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredMask<'a> {
    pub scene: usize,
    pub category: u32,
    pub confidence: f64,
    pub mask: &'a [bool],
}

/// A ground-truth instance mask within scene `scene`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtMask<'a> {
    pub scene: usize,
    pub id: u32,
    pub category: u32,
    pub mask: &'a [bool],
}

/// Outcome of greedy matching for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Per prediction of the category, in processing (descending confidence)
    /// order: index into the prediction slice, matched gt index, best IoU.
    pub predictions: Vec<(usize, Option<usize>, f64)>,
    /// Per gt index of the slice: whether a prediction claimed it.
    pub covered: Vec<bool>,
    /// Ground truths of the category.
    pub num_gt: usize,
}

/// Greedy matching in descending confidence (input order on ties): each
/// prediction takes the unmatched same-scene, same-category gt of highest IoU
/// (lower gt id on ties) if that IoU reaches `iou_threshold`.
pub fn match_predictions(
    preds: &[PredMask<'_>],
    gts: &[GtMask<'_>],
    iou_threshold: f64,
    category: u32,
) -> Result<MatchResult, EvalError> {
    let mut order: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].category == category).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let mut covered = vec![false; gts.len()];
    let mut out = Vec::with_capacity(order.len());
    for i in order {
        let p = &preds[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if g.scene != p.scene || g.category != category || covered[j] {
                continue;
            }
            let iou = mask_iou(p.mask, g.mask)?;
            let better = match best {
                None => true,
                Some((k, v)) => iou > v || (iou == v && g.id < gts[k].id),
            };
            if better {
                best = Some((j, iou));
            }
        }
        match best {
            Some((j, iou)) if iou >= iou_threshold => {
                covered[j] = true;
                out.push((i, Some(j), iou));
            }
            Some((_, iou)) => out.push((i, None, iou)),
            None => out.push((i, None, 0.0)),
        }
    }
    let num_gt = gts.iter().filter(|g| g.category == category).count();
    Ok(MatchResult { predictions: out, covered, num_gt })
}

/// `(precision, recall)` after each processed prediction.
pub fn precision_recall(m: &MatchResult) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    m.predictions
        .iter()
        .enumerate()
        .map(|(k, (_, hit, _))| {
            tp += usize::from(hit.is_some());
            let recall = if m.num_gt == 0 { 0.0 } else { tp as f64 / m.num_gt as f64 };
            (tp as f64 / (k + 1) as f64, recall)
        })
        .collect()
}

/// Area under the all-point interpolated precision-recall curve.
pub fn ap_from_curve(curve: &[(f64, f64)]) -> f64 {
    let mut envelope: Vec<f64> = curve.iter().map(|c| c.0).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(_, r)) in curve.iter().enumerate() {
        ap += (r - prev_recall) * envelope[i];
        prev_recall = r;
    }
    ap
}

/// AP of `category` at `iou_threshold`; 0 when the category has no gt.
pub fn average_precision(
    preds: &[PredMask<'_>],
    gts: &[GtMask<'_>],
    iou_threshold: f64,
    category: u32,
) -> Result<f64, EvalError> {
    let m = match_predictions(preds, gts, iou_threshold, category)?;
    if m.num_gt == 0 {
        return Ok(0.0);
    }
    Ok(ap_from_curve(&precision_recall(&m)))
}

/// Mean box IoU over foreground seeds; a seed without a proposal box scores 0.
/// `gt_boxes[i]` is `None` for background seeds.
pub fn proposal_miou(proposal_boxes: &[Option<Aabb>], gt_boxes: &[Option<Aabb>]) -> Result<f64, EvalError> {
    if proposal_boxes.len() != gt_boxes.len() {
        return Err(EvalError::LengthMismatch(proposal_boxes.len(), gt_boxes.len()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, g) in proposal_boxes.iter().zip(gt_boxes) {
        if let Some(g) = g {
            sum += p.as_ref().map_or(0.0, |p| aabb_iou(p, g));
            n += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::NoForeground);
    }
    Ok(sum / n as f64)
}

/// Box IoU and chamfer distance of one proposal against the instance its seed
/// lies on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedScore {
    pub seed_index: usize,
    pub iou: f64,
    pub chamfer: f64,
}

/// Scores every proposal whose seed is a foreground point. The proposal box
/// is the unexpanded box of its confident points (IoU 0 when degenerate);
/// chamfer compares all generated points with the instance's points.
pub fn score_proposals(scene: &PointCloud, proposals: &[Proposal]) -> Result<Vec<SeedScore>, EvalError> {
    let instances = scene.instances();
    let mut out = Vec::new();
    for p in proposals {
        let id = scene.instance_id(p.seed_index);
        let Some(inst) = instances.iter().find(|i| i.id == id) else { continue };
        let iou = proposal_box(&p.points, &p.confidence, 0.0).map_or(0.0, |b| aabb_iou(&b, &inst.bbox));
        let gt: Vec<Point3> = inst.indices.iter().map(|&i| scene.points[i]).collect();
        let chamfer = chamfer_distance(&p.points, &gt)?;
        out.push(SeedScore { seed_index: p.seed_index, iou, chamfer });
    }
    Ok(out)
}

impl ProposalStats {
    /// Means over all scores; error when there are none.
    pub fn from_scores(scores: &[SeedScore]) -> Result<Self, EvalError> {
        if scores.is_empty() {
            return Err(EvalError::NoForeground);
        }
        let n = scores.len() as f64;
        Ok(Self {
            miou: scores.iter().map(|s| s.iou).sum::<f64>() / n,
            mean_chamfer: scores.iter().map(|s| s.chamfer).sum::<f64>() / n,
            seeds: scores.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(bits: &str) -> Vec<bool> {
        bits.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn mask_iou_cases() {
        let a = m("1100");
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &m("0011")).unwrap(), 0.0);
        assert_eq!(mask_iou(&m("1000"), &a).unwrap(), 0.5);
        assert_eq!(mask_iou(&m("0000"), &m("0000")).unwrap(), 0.0);
        assert!(mask_iou(&a, &m("1")).is_err());
    }

    #[test]
    fn three_prediction_two_gt_curve() {
        let (g1, g2) = (m("110000"), m("000011"));
        let (p1, p2, p3) = (m("110000"), m("001100"), m("000011"));
        let gts = [
            GtMask { scene: 0, id: 1, category: 1, mask: &g1 },
            GtMask { scene: 0, id: 2, category: 1, mask: &g2 },
        ];
        let preds = [
            PredMask { scene: 0, category: 1, confidence: 0.8, mask: &p2 },
            PredMask { scene: 0, category: 1, confidence: 0.9, mask: &p1 },
            PredMask { scene: 0, category: 1, confidence: 0.7, mask: &p3 },
        ];
        let mr = match_predictions(&preds, &gts, 0.5, 1).unwrap();
        let curve = precision_recall(&mr);
        let want = [(1.0, 0.5), (0.5, 0.5), (2.0 / 3.0, 1.0)];
        for (c, w) in curve.iter().zip(want) {
            assert!((c.0 - w.0).abs() < 1e-12 && (c.1 - w.1).abs() < 1e-12);
        }
        // all-point oracle: recall steps of 0.5 at max precision to the right
        let ap = average_precision(&preds, &gts, 0.5, 1).unwrap();
        assert!((ap - (0.5 * 1.0 + 0.5 * (2.0 / 3.0))).abs() < 1e-12);
    }

    #[test]
    fn trivial_ap_cases() {
        let g = m("0110");
        let gts = [GtMask { scene: 3, id: 4, category: 2, mask: &g }];
        let preds = [PredMask { scene: 3, category: 2, confidence: 0.2, mask: &g }];
        assert_eq!(average_precision(&preds, &gts, 0.5, 2).unwrap(), 1.0);
        assert_eq!(average_precision(&[], &gts, 0.5, 2).unwrap(), 0.0);
        // other scene or other category never matches
        let other = [PredMask { scene: 1, category: 2, confidence: 0.9, mask: &g }];
        assert_eq!(average_precision(&other, &gts, 0.5, 2).unwrap(), 0.0);
    }

    #[test]
    fn ties_go_to_highest_iou_then_lower_id() {
        let (ga, gb) = (m("1110"), m("0111"));
        let p = m("0110");
        let gts = [
            GtMask { scene: 0, id: 9, category: 1, mask: &ga },
            GtMask { scene: 0, id: 2, category: 1, mask: &gb },
        ];
        let preds = [PredMask { scene: 0, category: 1, confidence: 1.0, mask: &p }];
        let r = match_predictions(&preds, &gts, 0.5, 1).unwrap();
        assert_eq!(r.predictions[0].1, Some(1));
    }

    #[test]
    fn proposal_miou_cases() {
        let b = Aabb::from_array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let c = Aabb::from_array([0.5, 0.0, 0.0, 1.5, 1.0, 1.0]).unwrap();
        assert_eq!(proposal_miou(&[Some(b), Some(b)], &[Some(b), Some(b)]).unwrap(), 1.0);
        assert_eq!(proposal_miou(&[None, None], &[Some(b), Some(b)]).unwrap(), 0.0);
        let v = proposal_miou(&[Some(c), Some(b), None], &[Some(b), None, Some(c)]).unwrap();
        assert!((v - aabb_iou(&b, &c) / 2.0).abs() < 1e-15);
        assert_eq!(proposal_miou(&[Some(b)], &[None]), Err(EvalError::NoForeground));
    }

    #[test]
    fn proposal_scores_skip_background_seeds() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 0.0, 1.0),
            Point3::new(5.0, 5.0, 5.0),
        ];
        let scene = PointCloud::new(pts.clone(), None, Some(vec![1, 1, 1, 1, 0]), Some(vec![3, 3, 3, 3, 0])).unwrap();
        let proposal = |seed_index| Proposal {
            seed_index,
            points: pts[..4].to_vec(),
            confidence: vec![0.9; 4],
            objectness: 1.0,
            center: Point3::new(0.5, 0.5, 0.5),
            context_feature: vec![0.0; 3],
        };
        let scores = score_proposals(&scene, &[proposal(1), proposal(4)]).unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!((scores[0].iou, scores[0].chamfer), (1.0, 0.0));
        let stats = ProposalStats::from_scores(&scores).unwrap();
        assert_eq!(stats.seeds, 1);
        assert!(ProposalStats::from_scores(&[]).is_err());
    }
}
