//! Generates shape proposals for one scene and scores them against the
//! ground truth. Pass a run directory to use its trained `gspn.ckpt`;
//! otherwise the network is freshly initialized.
//!
//!     cargo run --release --example gspn_proposals -- runs/desk

use gspnkit::autodiff::load_checkpoint;
use gspnkit::config::Config;
use gspnkit::eval::{score_proposals, ProposalStats};
use gspnkit::geom::random_seeds;
use gspnkit::gspn::{propose, ProposeMode};
use gspnkit::pipeline::{build_gspn, Scalar};
use gspnkit::scenegen::{default_catalog, generate_corpus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::desk();
    let (net, mut store) = build_gspn(&cfg)?;
    if let Some(dir) = std::env::args().nth(1) {
        store.load_values(&load_checkpoint::<Scalar>(&std::path::Path::new(&dir).join("gspn.ckpt"))?)?;
        println!("loaded {dir}/gspn.ckpt");
    }
    let scene = generate_corpus(&cfg.scene_spec(cfg.seed), &default_catalog(), 99, 0, 1)?.remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seeds = random_seeds(scene.cloud.len(), cfg.counts.num_sample_infer, &mut rng)?;
    let proposals = propose(&net, &store, &scene.cloud, &seeds, &mut rng, ProposeMode::Infer, seeds.len())?;
    let scores = score_proposals(&scene.cloud, &proposals)?;
    let stats = ProposalStats::from_scores(&scores)?;
    println!(
        "{} proposals, {} on foreground seeds: box mIoU {:.3}, mean chamfer {:.4}",
        proposals.len(),
        stats.seeds,
        stats.miou,
        stats.mean_chamfer
    );
    for p in proposals.iter().take(5) {
        let confident = p.confidence.iter().filter(|&&e| e > 0.5).count();
        println!(
            "  seed {:>4}: objectness {:.3}, {confident}/{} confident points, center ({:.2}, {:.2}, {:.2})",
            p.seed_index,
            p.objectness,
            p.points.len(),
            p.center.x,
            p.center.y,
            p.center.z
        );
    }
    Ok(())
}
