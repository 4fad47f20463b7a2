use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{gradient_check, GradCheckOptions, Graph, ParamStore};
use crate::geom::{Point3, PointCloud};

pub(crate) fn micro_config() -> GspnConfig {
    GspnConfig {
        radii: vec![0.3, 0.7],
        points_per_scale: 8,
        context_widths: vec![6, 6],
        center_prediction: true,
        center_hidden: vec![6],
        prior_hidden: vec![6],
        latent_dim: 2,
        object_points: 6,
        object_widths: vec![5],
        recognition_hidden: vec![5],
        fc_hidden: vec![6],
        fc_points: 4,
        grid_side: 2,
        grid_hidden: vec![5, 4],
        objectness_hidden: vec![4],
    }
}

/// One 0.3 m cube (instance 1) on a floor of background points.
pub(crate) fn micro_scene(seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut ids = Vec::new();
    for _ in 0..30 {
        let face = rng.gen_range(0..5);
        let (u, v): (f64, f64) = (rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3));
        let p = match face {
            0 => Point3::new(u, v, 0.3),
            1 => Point3::new(0.0, u, v),
            2 => Point3::new(0.3, u, v),
            3 => Point3::new(u, 0.0, v),
            _ => Point3::new(u, 0.3, v),
        };
        points.push(p + Point3::new(0.2, 0.2, 0.0));
        ids.push(1);
    }
    for _ in 0..14 {
        points.push(Point3::new(rng.gen_range(0.0..0.8), rng.gen_range(0.0..0.8), 0.0));
        ids.push(0);
    }
    let colors = ids.iter().map(|&i| if i == 1 { [0.9, 0.2, 0.1] } else { [0.5; 3] }).collect();
    let labels = ids.clone();
    PointCloud::new(points, Some(colors), Some(labels), Some(ids)).unwrap()
}

fn micro_net(seed: u64) -> (Gspn, ParamStore<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let net = Gspn::new(&mut store, "gspn", micro_config(), &mut rng).unwrap();
    (net, store)
}

#[test]
fn full_loss_gradient_check() {
    let scene = micro_scene(1);
    let sup = SceneSupervision::new(&scene, 0.05);
    let (net, store) = micro_net(2);
    let seeds = [0usize, 5, 12, 31, 40];
    let opts = StepOptions { kl_weight: 0.7, weights: LossWeights::default(), roi_margin: 0.05 };
    let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        scene_training_loss(&net, g, s, &scene, &sup, &seeds, &opts, &mut rng).map(|(v, _)| v)
    };
    let report = gradient_check::<_, GspnError>(&store, f, &GradCheckOptions::default()).unwrap();
    assert!(report.passed(), "{:?}", report.worst());
    assert_eq!(report.params.len(), store.len());
}

#[test]
fn breakdown_sums_to_total() {
    let scene = micro_scene(3);
    let sup = SceneSupervision::new(&scene, 0.05);
    let (net, store) = micro_net(4);
    let opts = StepOptions { kl_weight: 0.25, weights: LossWeights::default(), roi_margin: 0.05 };
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, bd) = scene_training_loss(&net, &mut g, &store, &scene, &sup, &[1, 2, 35], &opts, &mut rng).unwrap();
    let want = bd.l_gen + bd.l_e + 0.25 * bd.l_kl + bd.l_center + bd.l_obj;
    assert!((bd.total - want).abs() < 1e-12);
    for v in [bd.l_gen, bd.l_e, bd.l_kl, bd.l_center, bd.l_obj] {
        assert!(v >= 0.0);
    }
}

#[test]
fn directions_are_unit_and_sigmas_positive() {
    let scene = micro_scene(6);
    let (net, store) = micro_net(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ctx: Vec<_> = (0..10)
        .map(|i| {
            crate::geom::multi_scale_context(&scene, scene.points[i * 4], &net.config.radii, 8, &mut rng).unwrap()
        })
        .collect();
    let mut g = Graph::<f64>::inference();
    let out = net.encode(&mut g, &store, &ctx).unwrap();
    let dir = g.value(out.direction.unwrap()).data().to_vec();
    for d in dir.chunks(3) {
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
    assert_eq!(g.shape(out.features), &[10, 12]);
    let gen = prior_generate(&net, &mut g, &store, &out, false, &mut rng).unwrap();
    assert_eq!(g.shape(gen.points), &[10, 8, 3]);
    assert_eq!(net.config.generated_points(), 8);
}

#[test]
fn propose_caps_orders_and_repeats() {
    let scene = micro_scene(9);
    let (net, store) = micro_net(10);
    let seeds: Vec<usize> = (0..scene.len()).step_by(3).collect();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        propose(&net, &store, &scene, &seeds, &mut rng, ProposeMode::Infer, 6).unwrap()
    };
    let a = run();
    assert_eq!(a.len(), 6);
    assert!(a.windows(2).all(|w| w[0].objectness >= w[1].objectness));
    assert_eq!(a, run());
    let all = {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        propose(&net, &store, &scene, &seeds, &mut rng, ProposeMode::Infer, usize::MAX).unwrap()
    };
    let cut = a.last().unwrap().objectness;
    let kept: Vec<usize> = a.iter().map(|p| p.seed_index).collect();
    for p in all.iter().filter(|p| !kept.contains(&p.seed_index)) {
        assert!(p.objectness <= cut);
    }
    for p in &a {
        assert_eq!(p.points.len(), 8);
        assert!(p.confidence.iter().all(|c| (0.0..=1.0).contains(c)));
        assert_eq!(p.context_feature.len(), 12 + 3);
        assert_eq!(&p.context_feature[12..], &p.center.to_array());
    }
}

#[test]
fn world_proposals_follow_scene_translation() {
    let scene = micro_scene(12);
    let (net, store) = micro_net(13);
    let v = Point3::new(1.25, -0.5, 2.0);
    let moved = scene.translate(v);
    let seeds = [0usize, 7, 33];
    let run = |s: &PointCloud| {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        propose(&net, &store, s, &seeds, &mut rng, ProposeMode::Infer, 10).unwrap()
    };
    let (a, b) = (run(&scene), run(&moved));
    for (pa, pb) in a.iter().zip(&b) {
        assert_eq!(pa.seed_index, pb.seed_index);
        for (x, y) in pa.points.iter().zip(&pb.points) {
            assert!((*x + v).distance(*y) <= 1e-6);
        }
        assert_eq!(pa.instance_feature().len(), pb.instance_feature().len());
    }
}

#[test]
fn proposal_box_rules() {
    let pts: Vec<Point3> = (0..6).map(|i| Point3::new(i as f64, (i % 2) as f64, (i % 3) as f64)).collect();
    assert!(proposal_box(&pts, &[0.0; 6], 0.05).is_none());
    let b = proposal_box(&pts, &[1.0; 6], 0.0).unwrap();
    assert_eq!(b.to_array(), [0.0, 0.0, 0.0, 5.0, 1.0, 2.0]);
    let b = proposal_box(&pts, &[0.9, 0.9, 0.1, 0.9, 0.9, 0.2], 0.05).unwrap();
    let oracle = crate::geom::aabb_of(&[pts[0], pts[1], pts[3], pts[4]]).unwrap().expand_by_fraction(0.05);
    assert_eq!(b, oracle);
}

#[test]
fn missing_gt_on_positive_is_error() {
    let scene = micro_scene(15);
    let (net, store) = micro_net(16);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ctx = vec![crate::geom::multi_scale_context(&scene, scene.points[40], &net.config.radii, 8, &mut rng).unwrap()];
    let targets = vec![SeedTarget { seed: scene.points[40], object: None }];
    let mut g = Graph::new();
    let fwd = training_forward(&net, &mut g, &store, &ctx, &targets, &mut rng).unwrap();
    let err = gspn_loss(&mut g, &fwd, &targets, &[ProposalLabel::Positive], 1.0, &LossWeights::default(), 0.01);
    assert_eq!(err.unwrap_err(), GspnError::MissingGroundTruth);
}
