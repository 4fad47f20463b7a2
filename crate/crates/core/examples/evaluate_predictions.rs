//! Scores corrupted copies of the ground truth to show how mask AP reacts
//! to dropped points and false positives.

use gspnkit::eval::evaluate_corpus;
use gspnkit::geom::aabb_of;
use gspnkit::scenegen::{default_catalog, generate_corpus, InstancePrediction, PredictionRecord, SceneRecord, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corrupt(scenes: &[SceneRecord], keep: f64, extra: usize, rng: &mut ChaCha8Rng) -> Vec<PredictionRecord> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n = s.cloud.len();
            let mut instances: Vec<InstancePrediction> = s
                .cloud
                .instances()
                .into_iter()
                .map(|inst| {
                    let mut mask = vec![false; n];
                    inst.indices.iter().filter(|_| rng.gen_bool(keep)).for_each(|&j| mask[j] = true);
                    InstancePrediction { category: inst.category, confidence: rng.gen_range(0.5..1.0), bbox: inst.bbox, mask }
                })
                .collect();
            for _ in 0..extra {
                // a random blob of background and foreground points
                let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.05)).collect();
                let pts: Vec<_> = (0..n).filter(|&j| mask[j]).map(|j| s.cloud.points[j]).collect();
                let Ok(bbox) = aabb_of(&pts) else { continue };
                instances.push(InstancePrediction { category: rng.gen_range(1..=4), confidence: rng.gen_range(0.0..0.6), bbox, mask });
            }
            PredictionRecord { scene: i as u64, num_points: n, instances }
        })
        .collect()
}

fn main() {
    let scenes: Vec<SceneRecord> = generate_corpus(&SceneSpec::default(), &default_catalog(), 5, 0, 10)
        .expect("scenes")
        .into_iter()
        .map(|s| s.into_record())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (keep, extra) in [(1.0, 0), (0.6, 0), (0.4, 0), (0.9, 3)] {
        let preds = corrupt(&scenes, keep, extra, &mut rng);
        let r = evaluate_corpus(&scenes, &preds, 4, None).expect("eval");
        println!("keep {keep:.1}, {extra} false positives per scene: mAP@0.25 {:.3}  mAP@0.5 {:.3}", r.mean_ap25, r.mean_ap50);
    }
}
