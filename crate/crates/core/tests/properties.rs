//! Randomized invariants of the geometry kernels, the KL term, box deltas,
//! RoI sampling, evaluation and the scene generator.

use gspnkit::config::Config;
use gspnkit::eval::{average_precision, mask_iou, GtMask, PredMask};
use gspnkit::geom::{
    aabb_iou, chamfer_distance, farthest_point_sample, nms_3d, random_seeds, three_nn_weights, Aabb, Point3,
};
use gspnkit::gspn::{kl_diag_gaussians, GaussianParams};
use gspnkit::rpointnet::{apply_box_delta, compute_box_delta, select_training_rois, RoiLabel, Roi};
use gspnkit::scenegen::{
    decode_scenes, default_catalog, encode_scenes, generate_scene, rle_decode, rle_encode, SceneSpec,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn point() -> impl Strategy<Value = Point3> {
    (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(point(), 1..max)
}

fn aabb() -> impl Strategy<Value = Aabb> {
    (point(), 0.05..3.0f64, 0.05..3.0f64, 0.05..3.0f64)
        .prop_map(|(c, a, b, d)| Aabb::from_center_extent(c, Point3::new(a, b, d)).unwrap())
}

fn gaussian(dim: usize) -> impl Strategy<Value = GaussianParams> {
    (prop::collection::vec(-3.0..3.0f64, dim), prop::collection::vec(0.05..4.0f64, dim))
        .prop_map(|(mu, sigma)| GaussianParams::new(mu, sigma).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn chamfer_is_zero_on_self_and_symmetric(a in cloud(40), b in cloud(40)) {
        prop_assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        let ab = chamfer_distance(&a, &b).unwrap();
        let ba = chamfer_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
    }

    #[test]
    fn chamfer_ignores_shared_translation(a in cloud(30), b in cloud(30), v in point()) {
        let ta: Vec<Point3> = a.iter().map(|&p| p + v).collect();
        let tb: Vec<Point3> = b.iter().map(|&p| p + v).collect();
        let d0 = chamfer_distance(&a, &b).unwrap();
        let d1 = chamfer_distance(&ta, &tb).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-9);
    }

    #[test]
    fn box_iou_is_symmetric_and_bounded(a in aabb(), b in aabb()) {
        let ab = aabb_iou(&a, &b);
        prop_assert_eq!(ab, aabb_iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((aabb_iou(&a, &a) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn fps_indices_are_distinct(pts in prop::collection::vec(point(), 2..80), k_frac in 0.0..1.0f64, start_frac in 0.0..1.0f64) {
        let n = pts.len();
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let start = ((n - 1) as f64 * start_frac) as usize;
        let idx = farthest_point_sample(&pts, k, start).unwrap();
        prop_assert_eq!(idx.len(), k);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), k);
        prop_assert_eq!(idx[0], start);
    }

    #[test]
    fn random_seeds_are_distinct_and_reproducible(n in 1usize..500, k_frac in 0.0..1.0f64, seed in any::<u64>()) {
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let a = random_seeds(n, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = random_seeds(n, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), k);
        prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(a.iter().all(|&i| i < n));
    }

    #[test]
    fn nms_postcondition(boxes in prop::collection::vec(aabb(), 1..40), thr in 0.05..0.95f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = boxes.iter().map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0)).collect();
        let kept = nms_3d(&boxes, &scores, thr, usize::MAX).unwrap();
        for (i, &a) in kept.iter().enumerate() {
            for &b in &kept[i + 1..] {
                prop_assert!(aabb_iou(&boxes[a], &boxes[b]) <= thr);
            }
        }
        for j in (0..boxes.len()).filter(|j| !kept.contains(j)) {
            let earlier = kept.iter().any(|&k| {
                (scores[k] > scores[j] || (scores[k] == scores[j] && k < j)) && aabb_iou(&boxes[k], &boxes[j]) > thr
            });
            prop_assert!(earlier, "box {} suppressed without a stronger overlapping box", j);
        }
    }

    #[test]
    fn interpolation_weights_form_a_partition_of_unity(known in prop::collection::vec(point(), 3..40), queries in cloud(20)) {
        for w in three_nn_weights(&known, &queries).unwrap() {
            prop_assert!(w.weights.iter().all(|&x| x >= 0.0));
            prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_on_equal(q in gaussian(6), p in gaussian(6)) {
        let kl = kl_diag_gaussians(&q, &p).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(kl_diag_gaussians(&q, &q).unwrap().abs() <= 1e-12);
        if q != p {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn box_delta_round_trip(roi in aabb(), target in aabb()) {
        let d = compute_box_delta(&roi, &target).unwrap();
        let back = apply_box_delta(&roi, &d).unwrap();
        for ax in 0..3 {
            prop_assert!((back.min.get(ax) - target.min.get(ax)).abs() <= 1e-9);
            prop_assert!((back.max.get(ax) - target.max.get(ax)).abs() <= 1e-9);
        }
    }

    #[test]
    fn training_rois_respect_the_positive_cap(
        boxes in prop::collection::vec(aabb(), 1..60),
        gts in prop::collection::vec(aabb(), 1..6),
        max_rois in 1usize..40,
        seed in any::<u64>(),
    ) {
        let rois: Vec<Roi> = boxes.iter().enumerate().map(|(i, &b)| Roi { bbox: b, score: 0.5, proposal: i }).collect();
        let cats = vec![0u32; gts.len()];
        let picked = select_training_rois(&rois, &gts, &cats, max_rois, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(picked.len() <= max_rois);
        prop_assert!(picked.windows(2).all(|w| w[0].roi < w[1].roi));
        let pos = picked.iter().filter(|l| matches!(l.label, RoiLabel::Positive { .. })).count();
        prop_assert!(pos as f64 <= 0.25 * picked.len() as f64 + 1.0);
    }

    #[test]
    fn mask_iou_symmetric_and_one_on_self(a in prop::collection::vec(any::<bool>(), 1..200), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<bool> = a.iter().map(|_| rand::Rng::gen_bool(&mut rng, 0.5)).collect();
        prop_assert_eq!(mask_iou(&a, &b).unwrap(), mask_iou(&b, &a).unwrap());
        if a.iter().any(|&x| x) {
            prop_assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn rle_round_trip(mask in prop::collection::vec(any::<bool>(), 0..300)) {
        prop_assert_eq!(rle_decode(&rle_encode(&mask), mask.len()), Some(mask));
    }
}

/// Random masks over one scene: `num_gt` disjoint objects and `num_pred` noisy
/// predictions, some of them pure false positives.
fn ap_case(seed: u64) -> (Vec<Vec<bool>>, Vec<Vec<bool>>, Vec<f64>) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 120;
    let num_gt = rng.gen_range(1..5);
    let owner: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=num_gt)).collect();
    let gts: Vec<Vec<bool>> = (1..=num_gt).map(|g| owner.iter().map(|&o| o == g).collect()).collect();
    let num_pred = rng.gen_range(1..9);
    let preds: Vec<Vec<bool>> = (0..num_pred)
        .map(|_| {
            let g = rng.gen_range(0..=num_gt);
            let flip = rng.gen_range(0.0..0.4);
            owner.iter().map(|&o| (o == g && g > 0) ^ rng.gen_bool(flip)).collect()
        })
        .collect();
    let conf = (0..num_pred).map(|_| rng.gen_range(0.0..1.0)).collect();
    (gts, preds, conf)
}

fn ap_of(gts: &[Vec<bool>], preds: &[Vec<bool>], conf: &[f64], thr: f64) -> f64 {
    let g: Vec<GtMask> =
        gts.iter().enumerate().map(|(i, m)| GtMask { scene: 0, id: i as u32 + 1, category: 0, mask: m }).collect();
    let p: Vec<PredMask> = preds
        .iter()
        .zip(conf)
        .map(|(m, &c)| PredMask { scene: 0, category: 0, confidence: c, mask: m })
        .collect();
    average_precision(&p, &g, thr, 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ap_invariant_under_monotone_confidence_maps(seed in any::<u64>(), thr in prop::sample::select(vec![0.25, 0.5])) {
        let (gts, preds, conf) = ap_case(seed);
        let base = ap_of(&gts, &preds, &conf, thr);
        let mapped: Vec<f64> = conf.iter().map(|c| (3.0 * c - 1.0).exp() + 7.0).collect();
        prop_assert_eq!(base, ap_of(&gts, &preds, &mapped, thr));
    }

    #[test]
    fn removing_a_false_positive_never_lowers_ap(seed in any::<u64>(), thr in prop::sample::select(vec![0.25, 0.5])) {
        let (gts, preds, conf) = ap_case(seed);
        let base = ap_of(&gts, &preds, &conf, thr);
        // a prediction overlapping no gt at the threshold can never be a true positive
        for i in 0..preds.len() {
            let fp = gts.iter().all(|g| mask_iou(&preds[i], g).unwrap() < thr);
            if !fp {
                continue;
            }
            let mut p = preds.clone();
            let mut c = conf.clone();
            p.remove(i);
            c.remove(i);
            prop_assert!(ap_of(&gts, &p, &c, thr) >= base - 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_scenes_satisfy_their_invariants(seed in any::<u64>()) {
        let spec = SceneSpec { seed, ..SceneSpec::default() };
        let scene = generate_scene(&spec, &default_catalog(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let c = &scene.cloud;
        prop_assert!(c.validate().is_ok());
        prop_assert!(c.len() >= 256);
        prop_assert!(!scene.objects.is_empty());
        let instances = c.instances();
        prop_assert_eq!(instances.len(), scene.objects.len());
        for (k, inst) in instances.iter().enumerate() {
            prop_assert!(inst.indices.len() >= 16);
            prop_assert!(inst.indices.iter().all(|&i| inst.bbox.contains(c.points[i])));
            for other in &instances[k + 1..] {
                prop_assert_eq!(aabb_iou(&inst.bbox, &other.bbox), 0.0);
            }
        }
        for i in 0..c.len() {
            if c.semantic_label(i) == 0 {
                prop_assert_eq!(c.instance_id(i), 0);
            }
        }
        let record = scene.into_record();
        let decoded = decode_scenes(&encode_scenes(std::slice::from_ref(&record))).unwrap();
        prop_assert_eq!(decoded, vec![record]);
    }

    #[test]
    fn unknown_config_keys_are_rejected(key in "[a-z]{3,8}\\.[a-z_]{3,10}") {
        let known = Config::desk().to_text();
        prop_assume!(!known.lines().any(|l| l.split('=').next().map(str::trim) == Some(key.as_str())));
        let text = format!("{key} = 1\n");
        prop_assert!(Config::parse(&text).is_err());
    }
}
