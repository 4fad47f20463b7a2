use rand::Rng;

use crate::autodiff::{sigmoid, Graph, ParamStore, Real, Tensor, Var};
use crate::geom::{nms_3d, random_seeds, project_mask_to_scene, Aabb, PointCloud};
use crate::gspn::{propose, Gspn, Proposal, ProposeMode};
use crate::nets::{backbone_input, SemanticBackbone, BACKBONE_INPUT_WIDTH};

use super::heads::{head_input, rpointnet_loss, DetectionHeads, HeadOutput, RoiTarget, RpnLossBreakdown};
use super::{
    apply_box_delta, clamp_box_delta, point_roi_align, proposal_to_roi, select_training_rois,
    InstancePrediction, Roi, RoiLabel, RoiSample, RpnError, SeedFeatures,
};

/// RoIs per head batch at inference.
const HEAD_CHUNK: usize = 32;

/// The pretrained backbone and GSPN, used read-only.
#[derive(Clone, Copy)]
pub struct FrozenStages<'a, T: Real> {
    pub backbone: &'a SemanticBackbone,
    pub backbone_store: &'a ParamStore<T>,
    pub gspn: &'a Gspn,
    pub gspn_store: &'a ParamStore<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalParams {
    pub num_sample: usize,
    pub pre_nms_limit: usize,
    pub nms_max_size: usize,
    pub iou_threshold: f64,
    pub roi_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionParams {
    pub num_roi_points: usize,
    pub min_confidence: f64,
    pub max_instances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneProposals {
    pub seeds: SeedFeatures,
    /// One proposal per seed, best objectness first. Only the first
    /// `pre_nms_limit` become RoI candidates.
    pub proposals: Vec<Proposal>,
    /// RoIs surviving NMS in selection order; `Roi::proposal` indexes `proposals`.
    pub rois: Vec<Roi>,
}

/// Seeds drawn uniformly from the scene points, one proposal per seed, seed features `f_ĉ ⊕ f_sem`, then RoIs after NMS.
pub fn scene_proposals<T: Real, R: Rng + ?Sized>(
    stages: &FrozenStages<'_, T>,
    scene: &PointCloud,
    params: &ProposalParams,
    mode: ProposeMode,
    rng: &mut R,
) -> Result<SceneProposals, RpnError> {
    let n = scene.len();
    let k = params.num_sample.min(n);
    let seeds = random_seeds(n, k, rng)?;
    let seed_points: Vec<_> = seeds.iter().map(|&i| scene.points[i]).collect();

    let all = propose(stages.gspn, stages.gspn_store, scene, &seeds, rng, mode, usize::MAX)?;

    let mut g = Graph::<T>::inference();
    let input = g.constant(Tensor::from_f64(vec![n, BACKBONE_INPUT_WIDTH], &backbone_input(scene)));
    let out = stages.backbone.forward(&mut g, stages.backbone_store, &scene.points, input, None)?;
    let hyper = stages.backbone.hypercolumn(&mut g, &out, &seed_points)?;
    let hyper = g.value(hyper).to_f64_vec();
    let hw = stages.backbone.hypercolumn_width();

    let fw = all.first().map_or(0, |p| p.instance_feature().len());
    let mut by_seed = vec![None; n];
    for p in &all {
        by_seed[p.seed_index] = Some(p.instance_feature());
    }
    let width = fw + hw;
    let mut features = Vec::with_capacity(k * width);
    for (j, &s) in seeds.iter().enumerate() {
        features.extend_from_slice(by_seed[s].expect("one proposal per seed"));
        features.extend_from_slice(&hyper[j * hw..(j + 1) * hw]);
    }

    let candidates: Vec<Roi> = all
        .iter()
        .take(params.pre_nms_limit)
        .enumerate()
        .filter_map(|(i, p)| proposal_to_roi(p, i, params.roi_margin))
        .collect();
    let boxes: Vec<Aabb> = candidates.iter().map(|r| r.bbox).collect();
    let scores: Vec<f64> = candidates.iter().map(|r| r.score).collect();
    let kept = nms_3d(&boxes, &scores, params.iou_threshold, params.nms_max_size)?;
    Ok(SceneProposals {
        seeds: SeedFeatures { points: seed_points, features, width },
        proposals: all,
        rois: kept.into_iter().map(|i| candidates[i]).collect(),
    })
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn delta_row(boxes: &[f64], c: usize, row: usize, category: u32) -> [f64; 6] {
    let off = row * 6 * c + 6 * (category as usize - 1);
    std::array::from_fn(|j| boxes[off + j])
}

/// Resamples the refined box for the mask head, keeping the original sample
/// when the refined box is degenerate or holds no scene point.
fn refine_sample<R: Rng + ?Sized>(
    scene: &PointCloud,
    seeds: &SeedFeatures,
    original: &RoiSample,
    delta: &[f64; 6],
    n_roi: usize,
    rng: &mut R,
) -> Result<RoiSample, RpnError> {
    let refined = match apply_box_delta(&original.bbox, &clamp_box_delta(delta)) {
        Ok(b) => b,
        Err(_) => return Ok(original.clone()),
    };
    match point_roi_align(&scene.points, seeds, &refined, n_roi, rng) {
        Ok(s) => Ok(s),
        Err(RpnError::EmptyRoi(_)) => Ok(original.clone()),
        Err(e) => Err(e),
    }
}

/// Loss of one scene's RoIs. Returns `None` when no RoI could be labeled
/// and aligned.
#[allow(clippy::too_many_arguments)]
pub fn scene_rpointnet_loss<T: Real, R: Rng + ?Sized>(
    heads: &DetectionHeads,
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    scene: &PointCloud,
    sp: &SceneProposals,
    num_roi_points: usize,
    max_rois: usize,
    rng: &mut R,
) -> Result<Option<(Var, RpnLossBreakdown)>, RpnError> {
    let inst = scene.instances();
    let gt_boxes: Vec<Aabb> = inst.iter().map(|i| i.bbox).collect();
    let gt_cats: Vec<u32> = inst.iter().map(|i| i.category).collect();
    let labeled = select_training_rois(&sp.rois, &gt_boxes, &gt_cats, max_rois, rng);
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for l in &labeled {
        match point_roi_align(&scene.points, &sp.seeds, &sp.rois[l.roi].bbox, num_roi_points, rng) {
            Ok(s) => {
                samples.push(s);
                labels.push(l.label);
            }
            Err(RpnError::EmptyRoi(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if samples.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&RoiSample> = samples.iter().collect();
    let x = g.constant(head_input(&refs)?);
    let (cls, boxes) = heads.classify(g, store, x)?;
    let c = heads.config.num_categories;
    let box_values = g.value(boxes).to_f64_vec();

    let mut mask_samples = Vec::new();
    let mut targets = Vec::with_capacity(labels.len());
    for (row, label) in labels.iter().enumerate() {
        match *label {
            RoiLabel::Negative => targets.push(RoiTarget { category: 0, delta: None, mask: None }),
            RoiLabel::Positive { gt, category, delta } => {
                let predicted = delta_row(&box_values, c, row, category);
                let ms = refine_sample(scene, &sp.seeds, &samples[row], &predicted, num_roi_points, rng)?;
                let id = inst[gt].id;
                let mask = ms.indices.iter().map(|&i| scene.instance_id(i) == id).collect();
                mask_samples.push(ms);
                targets.push(RoiTarget { category, delta: Some(delta), mask: Some(mask) });
            }
        }
    }
    let masks = if mask_samples.is_empty() {
        None
    } else {
        let refs: Vec<&RoiSample> = mask_samples.iter().collect();
        let mx = g.constant(head_input(&refs)?);
        Some(heads.segment(g, store, mx)?)
    };
    let out = HeadOutput { cls, boxes, masks };
    rpointnet_loss(g, &out, &targets).map(Some)
}

/// Full detection on one scene: proposals, RoIs after NMS, heads, refinement,
/// masks, then the confidence filter and instance cap.
#[allow(clippy::too_many_arguments)]
pub fn run_inference<T: Real, R: Rng + ?Sized>(
    scene: &PointCloud,
    stages: &FrozenStages<'_, T>,
    heads: &DetectionHeads,
    heads_store: &ParamStore<T>,
    pparams: &ProposalParams,
    dparams: &DetectionParams,
    rng: &mut R,
) -> Result<Vec<InstancePrediction>, RpnError> {
    if scene.is_empty() {
        return Ok(Vec::new());
    }
    let sp = scene_proposals(stages, scene, pparams, ProposeMode::Infer, rng)?;
    detect(scene, &sp, heads, heads_store, dparams, rng)
}

/// Head stage of [`run_inference`] on precomputed proposals.
pub fn detect<T: Real, R: Rng + ?Sized>(
    scene: &PointCloud,
    sp: &SceneProposals,
    heads: &DetectionHeads,
    heads_store: &ParamStore<T>,
    dparams: &DetectionParams,
    rng: &mut R,
) -> Result<Vec<InstancePrediction>, RpnError> {
    let c = heads.config.num_categories;
    let n_roi = dparams.num_roi_points;
    let mut samples = Vec::new();
    for roi in &sp.rois {
        match point_roi_align(&scene.points, &sp.seeds, &roi.bbox, n_roi, rng) {
            Ok(s) => samples.push(s),
            Err(RpnError::EmptyRoi(_)) => {}
            Err(e) => return Err(e),
        }
    }
    // (category, confidence, mask sample)
    let mut kept: Vec<(u32, f64, RoiSample)> = Vec::new();
    for chunk in samples.chunks(HEAD_CHUNK) {
        let mut g = Graph::<T>::inference();
        let refs: Vec<&RoiSample> = chunk.iter().collect();
        let x = g.constant(head_input(&refs)?);
        let (cls, boxes) = heads.classify(&mut g, heads_store, x)?;
        let logits = g.value(cls).to_f64_vec();
        let box_values = g.value(boxes).to_f64_vec();
        for (row, s) in chunk.iter().enumerate() {
            let probs = softmax_row(&logits[row * (c + 1)..(row + 1) * (c + 1)]);
            let mut best = 0;
            for (k, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = k;
                }
            }
            if best == 0 || probs[best] < dparams.min_confidence {
                continue;
            }
            let category = best as u32;
            let delta = delta_row(&box_values, c, row, category);
            let ms = refine_sample(scene, &sp.seeds, s, &delta, n_roi, rng)?;
            kept.push((category, probs[best], ms));
        }
    }
    let mut preds = Vec::with_capacity(kept.len());
    for chunk in kept.chunks(HEAD_CHUNK) {
        let mut g = Graph::<T>::inference();
        let refs: Vec<&RoiSample> = chunk.iter().map(|k| &k.2).collect();
        let x = g.constant(head_input(&refs)?);
        let masks = heads.segment(&mut g, heads_store, x)?;
        let m = g.value(masks).data();
        for (row, (category, confidence, s)) in chunk.iter().enumerate() {
            let col = *category as usize - 1;
            let bits: Vec<bool> =
                (0..n_roi).map(|j| sigmoid(m[(row * n_roi + j) * c + col]).as_f64() > 0.5).collect();
            let world: Vec<_> = s.indices.iter().map(|&i| scene.points[i]).collect();
            let mask = project_mask_to_scene(&s.bbox, &world, &bits, &scene.points)?;
            preds.push(InstancePrediction { category: *category, confidence: *confidence, bbox: s.bbox, mask });
        }
    }
    // stable: equal confidences keep RoI order
    preds.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    preds.truncate(dparams.max_instances);
    Ok(preds)
}
