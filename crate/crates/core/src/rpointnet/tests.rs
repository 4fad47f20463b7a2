use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{gradient_check, GradCheckOptions, Graph, ParamStore, Tensor};
use crate::geom::{three_nn_interpolate, PointCloud};
use crate::gspn::tests::{micro_config, micro_scene};
use crate::gspn::{binary_cross_entropy, smooth_l1, Gspn};
use crate::nets::{BackboneConfig, SaSpec, SemanticBackbone, BACKBONE_INPUT_WIDTH};

fn bx(a: [f64; 6]) -> Aabb {
    Aabb::from_array(a).unwrap()
}

fn roi(b: [f64; 6]) -> Roi {
    Roi { bbox: bx(b), score: 0.5, proposal: 0 }
}

fn random_box(rng: &mut ChaCha8Rng) -> Aabb {
    let c = Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let e = Point3::new(rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0));
    Aabb::from_center_extent(c, e).unwrap()
}

fn micro_heads_config(features: usize) -> HeadConfig {
    HeadConfig {
        in_features: features,
        num_categories: 2,
        trunk: vec![5, 6],
        cls_hidden: vec![4],
        box_hidden: vec![4],
        mask_local: vec![4],
        mask_global: vec![5],
        mask_hidden: vec![4],
    }
}

#[test]
fn proposal_to_roi_filters_confident_points() {
    let pts: Vec<Point3> = (0..8).map(|i| Point3::new(i as f64, (i * i % 5) as f64, (i % 3) as f64)).collect();
    let p = |conf: Vec<f64>| Proposal {
        seed_index: 0,
        points: pts.clone(),
        confidence: conf,
        objectness: 0.7,
        center: Point3::new(0.0, 0.0, 0.0),
        context_feature: vec![],
    };
    let all = proposal_to_roi(&p(vec![1.0; 8]), 3, ROI_MARGIN).unwrap();
    assert_eq!(all.bbox, crate::geom::aabb_of(&pts).unwrap().expand_by_fraction(ROI_MARGIN));
    assert_eq!((all.score, all.proposal), (0.7, 3));
    assert!(proposal_to_roi(&p(vec![0.0; 8]), 0, ROI_MARGIN).is_none());
    let conf = vec![0.9, 0.2, 0.6, 0.51, 0.5, 0.8, 0.1, 0.7];
    let kept: Vec<Point3> = pts.iter().zip(&conf).filter(|(_, &c)| c > 0.5).map(|(p, _)| *p).collect();
    let r = proposal_to_roi(&p(conf), 0, ROI_MARGIN).unwrap();
    assert_eq!(r.bbox, crate::geom::aabb_of(&kept).unwrap().expand_by_fraction(ROI_MARGIN));
}

#[test]
fn box_delta_identities() {
    let b = bx([0.0, 1.0, 2.0, 2.0, 2.0, 5.0]);
    assert_eq!(apply_box_delta(&b, &[0.0; 6]).unwrap(), b);
    let d = apply_box_delta(&b, &[0.0, 0.0, 0.0, std::f64::consts::LN_2, 0.0, 0.0]).unwrap();
    assert_eq!(d.to_array(), [-1.0, 1.0, 2.0, 3.0, 2.0, 5.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let (r, t) = (random_box(&mut rng), random_box(&mut rng));
        let back = apply_box_delta(&r, &compute_box_delta(&r, &t).unwrap()).unwrap();
        for (a, b) in back.to_array().iter().zip(t.to_array()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
    let flat = bx([0.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
    assert!(matches!(compute_box_delta(&flat, &b), Err(RpnError::DegenerateBox(_))));
    assert_eq!(clamp_box_delta(&[9.0, 0.0, 0.0, 9.0, -9.0, 1.0])[..4], [9.0, 0.0, 0.0, BOX_DELTA_CLAMP]);
}

#[test]
fn labels_without_gt_are_negative_and_exact_box_is_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rois: Vec<Roi> = (0..6).map(|_| Roi { bbox: random_box(&mut rng), score: 0.1, proposal: 0 }).collect();
    let sel = select_training_rois(&rois, &[], &[], 64, &mut rng);
    assert_eq!(sel.len(), 6);
    assert!(sel.iter().all(|l| l.label == RoiLabel::Negative));

    let gt = bx([0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let labels = label_rois(&[roi(gt.to_array())], &[gt], &[3]);
    assert_eq!(labels[0], Some(RoiLabel::Positive { gt: 0, category: 3, delta: [0.0; 6] }));
    // IoU of exactly one half is neither positive nor negative
    let half = roi([0.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
    assert_eq!(label_rois(&[half], &[gt], &[1]), vec![None]);
}

#[test]
fn labels_match_brute_force_iou_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let gts: Vec<Aabb> = (0..3).map(|_| random_box(&mut rng)).collect();
        let cats = [1, 2, 3];
        // mix of boxes near the gts and unrelated ones
        let rois: Vec<Roi> = (0..8)
            .map(|i| {
                let b = if i % 2 == 0 {
                    let g = gts[i % 3];
                    let j = Point3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), 0.0);
                    g.translate(j)
                } else {
                    random_box(&mut rng)
                };
                Roi { bbox: b, score: 0.0, proposal: i }
            })
            .collect();
        let labels = label_rois(&rois, &gts, &cats);
        for (r, l) in rois.iter().zip(&labels) {
            let ious: Vec<f64> = gts.iter().map(|g| crate::geom::aabb_iou(&r.bbox, g)).collect();
            let best = ious.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let arg = ious.iter().position(|&v| v == best).unwrap();
            match l {
                Some(RoiLabel::Positive { gt, category, .. }) => {
                    assert!(best > 0.5);
                    assert_eq!((*gt, *category), (arg, cats[arg]));
                }
                Some(RoiLabel::Negative) => assert!(ious.iter().all(|&v| v < 0.5)),
                None => assert_eq!(best, 0.5),
            }
        }
    }
}

#[test]
fn selection_respects_ratio_and_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gt = bx([0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    for (n_pos, n_neg, max) in [(10, 30, 16), (10, 0, 16), (1, 1, 16), (0, 5, 4), (20, 3, 64), (5, 40, 64), (7, 7, 3)] {
        let mut rois = vec![Roi { bbox: gt, score: 0.9, proposal: 0 }; n_pos];
        rois.extend(vec![roi([5.0, 5.0, 5.0, 6.0, 6.0, 6.0]); n_neg]);
        let sel = select_training_rois(&rois, &[gt], &[1], max, &mut rng);
        let pos = sel.iter().filter(|l| matches!(l.label, RoiLabel::Positive { .. })).count();
        assert!(sel.len() <= max);
        assert!(pos as f64 <= 0.25 * sel.len() as f64 + 1.0, "{n_pos} {n_neg} {max}: {pos}/{}", sel.len());
        assert!(sel.windows(2).all(|w| w[0].roi < w[1].roi));
        for l in &sel {
            assert_eq!(matches!(l.label, RoiLabel::Positive { .. }), l.roi < n_pos);
        }
    }
}

fn seed_set(rng: &mut ChaCha8Rng, width: usize) -> SeedFeatures {
    let points: Vec<Point3> = (0..10).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect();
    let features = (0..10 * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SeedFeatures { points, features, width }
}

#[test]
fn roi_align_normalizes_and_interpolates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seeds = seed_set(&mut rng, 4);
    let b = bx([0.0, 0.0, 0.0, 2.0, 4.0, 1.0]);
    let scene = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 2.0, 0.5), Point3::new(2.0, 4.0, 1.0), Point3::new(3.0, 0.0, 0.0)];
    let s = point_roi_align(&scene, &seeds, &b, 3, &mut rng).unwrap();
    let mut idx = s.indices.clone();
    idx.sort_unstable();
    assert_eq!(idx, vec![0, 1, 2]);
    for (&i, q) in s.indices.iter().zip(&s.normalized) {
        let want = match i {
            0 => [-0.5; 3],
            1 => [0.0; 3],
            _ => [0.5; 3],
        };
        assert_eq!(q.to_array(), want);
    }

    // many random points: bounds and oracle interpolation
    let scene: Vec<Point3> = (0..200).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect();
    let b = bx([0.2, 0.1, 0.3, 0.7, 0.6, 0.9]);
    let s = point_roi_align(&scene, &seeds, &b, 16, &mut rng).unwrap();
    assert_eq!(s.indices.len(), 16);
    assert!(s.normalized.iter().all(|p| p.to_array().iter().all(|v| (-0.5..=0.5).contains(v))));
    let world: Vec<Point3> = s.indices.iter().map(|&i| scene[i]).collect();
    let oracle = three_nn_interpolate(&seeds.points, &seeds.features, 4, &world).unwrap();
    assert_eq!(s.features, oracle);

    // short boxes are padded with duplicates of in-box points
    let s = point_roi_align(&scene[..20], &seeds, &b, 40, &mut rng).unwrap();
    assert_eq!(s.indices.len(), 40);
    assert!(s.indices.iter().all(|&i| b.contains(scene[i])));

    let far = bx([5.0, 5.0, 5.0, 6.0, 6.0, 6.0]);
    assert!(matches!(point_roi_align(&scene, &seeds, &far, 8, &mut rng), Err(RpnError::EmptyRoi(_))));
}

/// Zero biases put every point with all-dead inputs exactly on a relu kink,
/// where central differences are meaningless.
fn jitter_biases(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().filter(|&id| store.name(id).ends_with(".b")).collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-0.2..0.2);
        }
    }
}

fn micro_heads(seed: u64, features: usize) -> (DetectionHeads, ParamStore<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let h = DetectionHeads::new(&mut store, "heads", micro_heads_config(features), &mut rng).unwrap();
    jitter_biases(&mut store, &mut rng);
    (h, store)
}

fn random_input(rng: &mut ChaCha8Rng, b: usize, n: usize, d: usize) -> Tensor<f64> {
    let v: Vec<f64> = (0..b * n * d).map(|_| rng.gen_range(-0.5..0.5)).collect();
    Tensor::from_f64(vec![b, n, d], &v)
}

#[test]
fn head_shapes_and_permutation() {
    let (h, store) = micro_heads(6, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let input = random_input(&mut rng, 2, 5, 6);
    let mut g = Graph::inference();
    let x = g.constant(input.clone());
    let out = h.forward(&mut g, &store, x).unwrap();
    assert_eq!(g.shape(out.cls), &[2, 3]);
    assert_eq!(g.shape(out.boxes), &[2, 12]);
    assert_eq!(g.shape(out.masks.unwrap()), &[2, 5, 2]);

    let perm = [3, 0, 4, 1, 2];
    let d = input.data();
    let mut pd = Vec::new();
    for b in 0..2 {
        for &p in &perm {
            pd.extend_from_slice(&d[(b * 5 + p) * 6..(b * 5 + p + 1) * 6]);
        }
    }
    let y = g.constant(Tensor::new(vec![2, 5, 6], pd).unwrap());
    let out2 = h.forward(&mut g, &store, y).unwrap();
    assert_eq!(g.value(out.cls).data(), g.value(out2.cls).data());
    assert_eq!(g.value(out.boxes).data(), g.value(out2.boxes).data());
    let (m1, m2) = (g.value(out.masks.unwrap()).data().to_vec(), g.value(out2.masks.unwrap()).data().to_vec());
    for b in 0..2 {
        for (k, &p) in perm.iter().enumerate() {
            for c in 0..2 {
                assert_eq!(m2[(b * 5 + k) * 2 + c], m1[(b * 5 + p) * 2 + c]);
            }
        }
    }
}

fn micro_targets() -> Vec<RoiTarget> {
    vec![
        RoiTarget { category: 2, delta: Some([0.1, -0.2, 0.3, 0.05, -0.4, 1.5]), mask: Some(vec![true, false, true, true, false]) },
        RoiTarget { category: 0, delta: None, mask: None },
        RoiTarget { category: 1, delta: Some([-1.2, 0.0, 0.2, 0.3, 0.1, -0.1]), mask: Some(vec![false, false, true, false, true]) },
    ]
}

#[test]
fn head_loss_gradient_check() {
    let (h, store) = micro_heads(8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let input = random_input(&mut rng, 3, 5, 6);
    let mask_input = random_input(&mut rng, 2, 5, 6);
    let targets = micro_targets();
    let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
        let x = g.constant(input.clone());
        let (cls, boxes) = h.classify(g, s, x)?;
        let mx = g.constant(mask_input.clone());
        let masks = h.segment(g, s, mx)?;
        rpointnet_loss(g, &HeadOutput { cls, boxes, masks: Some(masks) }, &targets).map(|(v, _)| v)
    };
    let report = gradient_check::<_, RpnError>(&store, f, &GradCheckOptions::default()).unwrap();
    assert!(report.passed(), "{:?}", report.worst());
    assert_eq!(report.params.len(), store.len());
}

/// Direct evaluation of the loss from raw numbers.
fn loss_oracle(cls: &[f64], boxes: &[f64], masks: &[f64], targets: &[RoiTarget], c: usize, n: usize) -> [f64; 3] {
    let mut l_cls = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let row = &cls[i * (c + 1)..(i + 1) * (c + 1)];
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        l_cls += lse - row[t.category as usize];
    }
    l_cls /= targets.len() as f64;
    let (mut l_box, mut l_mask, mut pos, mut mrow) = (0.0, 0.0, 0, 0);
    for (i, t) in targets.iter().enumerate() {
        if t.category == 0 {
            continue;
        }
        pos += 1;
        let cat = t.category as usize - 1;
        let d = t.delta.unwrap();
        for j in 0..6 {
            l_box += smooth_l1(boxes[i * 6 * c + 6 * cat + j] - d[j]);
        }
        let m = t.mask.as_ref().unwrap();
        for (j, &y) in m.iter().enumerate() {
            let logit = masks[(mrow * n + j) * c + cat];
            l_mask += binary_cross_entropy(1.0 / (1.0 + (-logit).exp()), y) / n as f64;
        }
        mrow += 1;
    }
    if pos > 0 {
        l_box /= pos as f64;
        l_mask /= pos as f64;
    }
    [l_cls, l_box, l_mask]
}

fn run_loss(cls: &[f64], boxes: &[f64], masks: &[f64], targets: &[RoiTarget], p: usize) -> RpnLossBreakdown {
    let mut g = Graph::<f64>::new();
    let cls = g.input(Tensor::from_f64(vec![targets.len(), 3], cls));
    let boxes = g.input(Tensor::from_f64(vec![targets.len(), 12], boxes));
    let masks = (p > 0).then(|| g.input(Tensor::from_f64(vec![p, 5, 2], masks)));
    rpointnet_loss(&mut g, &HeadOutput { cls, boxes, masks }, targets).unwrap().1
}

#[test]
fn loss_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let targets = micro_targets();
    for _ in 0..20 {
        let cls: Vec<f64> = (0..9).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let boxes: Vec<f64> = (0..36).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let masks: Vec<f64> = (0..20).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let bd = run_loss(&cls, &boxes, &masks, &targets, 2);
        let o = loss_oracle(&cls, &boxes, &masks, &targets, 2, 5);
        assert!((bd.l_cls - o[0]).abs() < 1e-9);
        assert!((bd.l_box - o[1]).abs() < 1e-9);
        assert!((bd.l_mask - o[2]).abs() < 1e-9);
        assert!((bd.total - o.iter().sum::<f64>()).abs() < 1e-9);
    }
}

#[test]
fn negative_batch_and_perfect_predictions() {
    let negs = vec![RoiTarget { category: 0, delta: None, mask: None }; 2];
    let bd = run_loss(&[1.0, 0.0, -1.0, 0.5, 0.2, 0.1], &[0.3; 24], &[], &negs, 0);
    assert_eq!((bd.l_box, bd.l_mask, bd.positives), (0.0, 0.0, 0));
    assert!(bd.l_cls > 0.0);

    let targets = micro_targets();
    let big = 40.0;
    let mut cls = vec![-big; 9];
    for (i, t) in targets.iter().enumerate() {
        cls[i * 3 + t.category as usize] = big;
    }
    let mut boxes = vec![0.0; 36];
    boxes[6..12].copy_from_slice(&targets[0].delta.unwrap());
    boxes[24..30].copy_from_slice(&targets[2].delta.unwrap());
    let mut masks = vec![0.0; 20];
    for (row, t) in [&targets[0], &targets[2]].iter().enumerate() {
        let cat = t.category as usize - 1;
        for (j, &y) in t.mask.as_ref().unwrap().iter().enumerate() {
            masks[(row * 5 + j) * 2 + cat] = if y { big } else { -big };
        }
    }
    let bd = run_loss(&cls, &boxes, &masks, &targets, 2);
    assert!(bd.total < 1e-12, "{bd:?}");
}

pub(crate) fn micro_backbone_config() -> BackboneConfig {
    BackboneConfig {
        in_features: BACKBONE_INPUT_WIDTH,
        sa: vec![
            SaSpec { regions: 12, radius: 0.3, group_size: 4, widths: vec![6] },
            SaSpec { regions: 4, radius: 0.6, group_size: 4, widths: vec![6] },
        ],
        fp: vec![vec![6], vec![6]],
        classifier_hidden: vec![],
        num_classes: 2,
    }
}

struct MicroStages {
    backbone: SemanticBackbone,
    bstore: ParamStore<f64>,
    gspn: Gspn,
    gstore: ParamStore<f64>,
    heads: DetectionHeads,
    hstore: ParamStore<f64>,
}

fn micro_stages(seed: u64) -> MicroStages {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bstore = ParamStore::new();
    let backbone = SemanticBackbone::new(&mut bstore, "sem", micro_backbone_config(), &mut rng).unwrap();
    let mut gstore = ParamStore::new();
    let gspn = Gspn::new(&mut gstore, "gspn", micro_config(), &mut rng).unwrap();
    let width = gspn.config.context_feature_width() + backbone.hypercolumn_width();
    let mut hstore = ParamStore::new();
    let mut hc = micro_heads_config(width);
    hc.num_categories = 1;
    let heads = DetectionHeads::new(&mut hstore, "heads", hc, &mut rng).unwrap();
    jitter_biases(&mut hstore, &mut rng);
    MicroStages { backbone, bstore, gspn, gstore, heads, hstore }
}

impl MicroStages {
    fn frozen(&self) -> FrozenStages<'_, f64> {
        FrozenStages { backbone: &self.backbone, backbone_store: &self.bstore, gspn: &self.gspn, gspn_store: &self.gstore }
    }
}

const PP: ProposalParams =
    ProposalParams { num_sample: 12, pre_nms_limit: 10, nms_max_size: 6, iou_threshold: 0.5, roi_margin: ROI_MARGIN };

#[test]
fn scene_proposals_shapes_and_nms() {
    let m = micro_stages(11);
    let scene = micro_scene(12);
    let sp = scene_proposals(&m.frozen(), &scene, &PP, crate::gspn::ProposeMode::Infer, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    assert_eq!(sp.seeds.points.len(), 12);
    assert_eq!(sp.seeds.width, m.heads.config.in_features);
    assert_eq!(sp.seeds.features.len(), 12 * sp.seeds.width);
    assert!(sp.proposals.len() == 12 && sp.rois.len() <= 6);
    assert!(sp.rois.iter().all(|r| r.proposal < 10));
    for (i, a) in sp.rois.iter().enumerate() {
        for b in &sp.rois[i + 1..] {
            assert!(crate::geom::aabb_iou(&a.bbox, &b.bbox) <= 0.5);
        }
    }
}

#[test]
fn scene_loss_gradient_check_on_heads() {
    let m = micro_stages(13);
    let scene = micro_scene(14);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut sp = scene_proposals(&m.frozen(), &scene, &PP, crate::gspn::ProposeMode::Train, &mut rng).unwrap();
    // untrained proposals are arbitrary; add the gt box and a background box as RoIs
    let gt = scene.instances()[0].bbox;
    sp.rois = vec![
        Roi { bbox: gt.expand_by_fraction(0.02), score: 1.0, proposal: 0 },
        Roi { bbox: bx([0.0, 0.0, -0.01, 0.8, 0.15, 0.01]), score: 0.5, proposal: 0 },
    ];
    let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let out = scene_rpointnet_loss(&m.heads, g, s, &scene, &sp, 6, 8, &mut r)?;
        let (v, bd) = out.ok_or(RpnError::NoRois)?;
        assert_eq!((bd.rois, bd.positives), (2, 1));
        Ok::<_, RpnError>(v)
    };
    let report = gradient_check::<_, RpnError>(&m.hstore, f, &GradCheckOptions::default()).unwrap();
    // The mask sample is drawn over the box refined by the (detached) predicted
    // deltas, so trunk and box parameters move the mask input without a tape
    // path. Their gradients are covered by `head_loss_gradient_check`.
    let checked: Vec<_> = report
        .params
        .iter()
        .filter(|p| !(p.name.starts_with("heads.trunk") || p.name.starts_with("heads.box")))
        .collect();
    assert_eq!(checked.len(), 12);
    for p in checked {
        assert!(p.max_rel_error < 1e-4, "{p:?}");
    }
}

#[test]
fn inference_is_bounded_and_deterministic() {
    let m = micro_stages(15);
    let scene = micro_scene(16);
    let dp = DetectionParams { num_roi_points: 6, min_confidence: 0.0, max_instances: 3 };
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        run_inference(&scene, &m.frozen(), &m.heads, &m.hstore, &PP, &dp, &mut rng).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.len() <= 3);
    for p in &a {
        assert_eq!(p.mask.len(), scene.len());
        for (i, &bit) in p.mask.iter().enumerate() {
            assert!(!bit || p.bbox.contains(scene.points[i]));
        }
    }
    assert!(a.windows(2).all(|w| w[0].confidence >= w[1].confidence));
    let strict = DetectionParams { min_confidence: 0.99, ..dp };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = run_inference(&scene, &m.frozen(), &m.heads, &m.hstore, &PP, &strict, &mut rng).unwrap();
    assert!(b.iter().all(|p| p.confidence >= 0.99));
    let empty = PointCloud::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    assert!(run_inference(&empty, &m.frozen(), &m.heads, &m.hstore, &PP, &dp, &mut rng).unwrap().is_empty());
}


