//! Runs the point-set kernels on one generated scene: sampling, grouping,
//! box overlap, suppression and chamfer distance.

use gspnkit::geom::{aabb_iou, ball_query, chamfer_distance, farthest_point_sample, nms_3d};
use gspnkit::scenegen::{default_catalog, generate_corpus, SceneSpec};

fn main() {
    let scene = generate_corpus(&SceneSpec::default(), &default_catalog(), 11, 0, 1).expect("scene").remove(0);
    let cloud = &scene.cloud;
    let centers = farthest_point_sample(&cloud.points, 64, 0).expect("fps");
    let center_pts: Vec<_> = centers.iter().map(|&i| cloud.points[i]).collect();
    let groups = ball_query(&cloud.points, &center_pts, 0.2, 32);
    let mean_group = groups.iter().map(|g| g.len()).sum::<usize>() as f64 / groups.len() as f64;
    println!("{} points, 64 FPS centers, mean ball-query group {:.1}", cloud.len(), mean_group);

    let instances = cloud.instances();
    for a in &instances {
        let best = instances
            .iter()
            .filter(|b| b.id != a.id)
            .map(|b| aabb_iou(&a.bbox, &b.bbox))
            .fold(0.0, f64::max);
        println!("instance {} ({} points): largest box IoU with another instance {best:.3}", a.id, a.indices.len());
    }

    // jittered copies of each box compete in NMS; one per instance survives
    let mut boxes = Vec::new();
    let mut scores = Vec::new();
    for (k, inst) in instances.iter().enumerate() {
        for j in 0..3 {
            boxes.push(inst.bbox.expand_by(0.01 * j as f64));
            scores.push(1.0 - 0.1 * j as f64 - 0.001 * k as f64);
        }
    }
    let kept = nms_3d(&boxes, &scores, 0.5, 100).expect("nms");
    println!("nms kept {} of {} boxes", kept.len(), boxes.len());

    if instances.len() >= 2 {
        let pts = |i: usize| instances[i].indices.iter().map(|&j| cloud.points[j]).collect::<Vec<_>>();
        let d = chamfer_distance(&pts(0), &pts(1)).expect("chamfer");
        println!("chamfer between the first two instances: {d:.4}");
    }
}
