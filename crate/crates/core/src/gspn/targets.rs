use crate::geom::{aabb_iou, Aabb, Point3};

/// Objectness supervision class of one proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalLabel {
    Positive,
    Negative,
    /// Excluded from the objectness loss.
    Ignore,
}

/// Positive when the seed is on an object and the best IoU exceeds 0.5,
/// negative when every IoU is below 0.5, ignored otherwise (IoU exactly 0.5,
/// or a foreground-box overlap from a background seed).
pub fn assign_proposal_label(
    proposal_box: Option<&Aabb>,
    gt_boxes: &[Aabb],
    seed_is_foreground: bool,
) -> ProposalLabel {
    let best = proposal_box.map_or(0.0, |b| {
        gt_boxes.iter().map(|g| aabb_iou(b, g)).fold(0.0, f64::max)
    });
    if best > 0.5 {
        if seed_is_foreground {
            ProposalLabel::Positive
        } else {
            ProposalLabel::Ignore
        }
    } else if best < 0.5 {
        ProposalLabel::Negative
    } else {
        ProposalLabel::Ignore
    }
}

/// 1 where the generated point lies closer than `eps` to the object.
pub fn confidence_targets(generated: &[Point3], gt_object: &[Point3], eps: f64) -> Vec<bool> {
    let eps2 = eps * eps;
    generated
        .iter()
        .map(|p| gt_object.iter().any(|q| p.distance_squared(*q) < eps2))
        .collect()
}

/// Unit direction and distance from `seed` to `center`. A center on the seed
/// yields direction (1, 0, 0) and distance 0.
pub fn center_target(seed: Point3, center: Point3) -> (Point3, f64) {
    let d = center - seed;
    let n = d.norm();
    if n < super::CENTER_DEGENERATE_DISTANCE {
        (Point3::new(1.0, 0.0, 0.0), n)
    } else {
        (d * (1.0 / n), n)
    }
}

/// Linear KL ramp `min(1, step / warmup)`.
pub fn kl_anneal_weight(step: u64, warmup_steps: u64) -> f64 {
    (step as f64 / warmup_steps.max(1) as f64).min(1.0)
}

/// `0.5 x²` below 1 in magnitude, `|x| − 0.5` above.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Binary cross entropy of a probability against a 0/1 target.
pub fn binary_cross_entropy(p: f64, target: bool) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    if target {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Confidence threshold: `fraction` of the mean object box diagonal.
pub fn confidence_epsilon(gt_boxes: &[Aabb], fraction: f64) -> f64 {
    if gt_boxes.is_empty() {
        return 0.0;
    }
    fraction * gt_boxes.iter().map(Aabb::diagonal).sum::<f64>() / gt_boxes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(x: f64) -> Aabb {
        Aabb::new(Point3::new(x, 0.0, 0.0), Point3::new(x + 1.0, 1.0, 1.0)).unwrap()
    }

    #[test]
    fn label_rules() {
        let gt = [cube(0.0)];
        let good = Aabb::new(Point3::ZERO, Point3::new(1.0, 1.0, 0.8)).unwrap();
        assert_eq!(assign_proposal_label(Some(&good), &gt, true), ProposalLabel::Positive);
        assert_eq!(assign_proposal_label(Some(&good), &gt, false), ProposalLabel::Ignore);
        assert_eq!(assign_proposal_label(Some(&cube(5.0)), &gt, true), ProposalLabel::Negative);
        assert_eq!(assign_proposal_label(None, &gt, true), ProposalLabel::Negative);
        let half = Aabb::new(Point3::ZERO, Point3::new(1.0, 1.0, 0.5)).unwrap();
        assert_eq!(aabb_iou(&half, &gt[0]), 0.5);
        assert_eq!(assign_proposal_label(Some(&half), &gt, true), ProposalLabel::Ignore);
    }

    #[test]
    fn confidence_threshold() {
        let gt = [Point3::ZERO, Point3::new(1.0, 0.0, 0.0)];
        let gen = [Point3::ZERO, Point3::new(0.0, 1.0, 0.0)];
        assert_eq!(confidence_targets(&gen, &gt, 0.1), vec![true, false]);
    }

    #[test]
    fn center_targets() {
        let (d, n) = center_target(Point3::ZERO, Point3::new(0.0, 0.0, 2.0));
        assert_eq!((d, n), (Point3::new(0.0, 0.0, 1.0), 2.0));
        let (d, n) = center_target(Point3::new(1.0, 1.0, 1.0), Point3::new(1.0, 1.0, 1.0));
        assert_eq!((d, n), (Point3::new(1.0, 0.0, 0.0), 0.0));
    }

    #[test]
    fn schedule_and_scalars() {
        assert_eq!(kl_anneal_weight(0, 100), 0.0);
        assert_eq!(kl_anneal_weight(50, 100), 0.5);
        assert_eq!(kl_anneal_weight(100, 100), 1.0);
        assert_eq!(kl_anneal_weight(500, 100), 1.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert!((binary_cross_entropy(0.5, true) - 2f64.ln()).abs() < 1e-15);
        assert!((binary_cross_entropy(0.5, false) - 2f64.ln()).abs() < 1e-15);
    }
}
