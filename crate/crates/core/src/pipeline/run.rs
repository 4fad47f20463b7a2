use std::fs;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Config;
use crate::eval::{evaluate_corpus, score_proposals, EvalReport, ProposalStats};
use crate::gspn::ProposeMode;
use crate::rpointnet::{detect, scene_proposals, FrozenStages};
use crate::scenegen::{
    derive_seed, read_predictions, read_proposals, write_ply, write_predictions, write_proposals, PlyVertex,
    PredictionRecord, ProposalRecord,
};

use super::{io_err, load_trained, read_corpus, Artifacts, PipelineError};

/// Color of points no instance claims.
pub const BACKGROUND_GRAY: [u8; 3] = [128, 128, 128];

/// Instance colors by rank; rank `r` uses `PALETTE[r % PALETTE.len()]`.
pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 190],
    [0, 128, 128],
    [170, 110, 40],
];

/// Per-point colors: the first mask containing a point decides its color.
pub fn instance_colors(num_points: usize, masks: &[&[bool]]) -> Vec<[u8; 3]> {
    let mut out = vec![BACKGROUND_GRAY; num_points];
    let mut taken = vec![false; num_points];
    for (rank, m) in masks.iter().enumerate() {
        for (i, &on) in m.iter().enumerate().take(num_points) {
            if on && !taken[i] {
                taken[i] = true;
                out[i] = PALETTE[rank % PALETTE.len()];
            }
        }
    }
    out
}

/// Summary of [`cmd_infer`].
#[derive(Debug, Clone, PartialEq)]
pub struct InferSummary {
    pub scenes: usize,
    pub instances: usize,
}

/// Detects instances in every test scene and writes the prediction and
/// proposal files. Scenes run in parallel; each uses its own random stream.
pub fn cmd_infer(cfg: &Config, arts: &Artifacts) -> Result<InferSummary, PipelineError> {
    let m = load_trained(cfg, arts, "infer")?;
    let test = read_corpus(arts, arts.test_corpus())?;
    let stages =
        FrozenStages { backbone: &m.backbone, backbone_store: &m.backbone_store, gspn: &m.gspn, gspn_store: &m.gspn_store };
    let pparams = cfg.proposal_params(false);
    let dparams = cfg.detection_params(false);
    let results = test
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0x1f3e, i as u64));
            let sp = scene_proposals(&stages, &s.cloud, &pparams, ProposeMode::Infer, &mut rng)?;
            let instances = detect(&s.cloud, &sp, &m.heads, &m.heads_store, &dparams, &mut rng)?;
            let pred = PredictionRecord { scene: i as u64, num_points: s.cloud.len(), instances };
            let props: Vec<ProposalRecord> = sp
                .proposals
                .into_iter()
                .map(|mut p| {
                    // features are not needed downstream and dominate the file size
                    p.context_feature.clear();
                    ProposalRecord { scene: i as u64, proposal: p }
                })
                .collect();
            Ok((pred, props))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let (preds, props): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let props: Vec<ProposalRecord> = props.into_iter().flatten().collect();
    write_predictions(&arts.predictions(), &preds)?;
    write_proposals(&arts.proposals(), &props)?;
    let instances = preds.iter().map(|p| p.instances.len()).sum();
    log::info!("wrote {instances} instances over {} scenes", preds.len());
    Ok(InferSummary { scenes: preds.len(), instances })
}

/// Scores predictions (and proposals when present) against the test corpus
/// and writes the metrics file and the text report.
pub fn cmd_eval(cfg: &Config, arts: &Artifacts) -> Result<EvalReport, PipelineError> {
    let test = read_corpus(arts, arts.test_corpus())?;
    let preds = read_predictions(&arts.require(arts.predictions())?)?;
    let proposals = if arts.proposals().is_file() {
        let records = read_proposals(&arts.proposals())?;
        let mut by_scene: Vec<Vec<_>> = vec![Vec::new(); test.len()];
        for r in records {
            let slot = by_scene
                .get_mut(r.scene as usize)
                .ok_or_else(|| PipelineError::Runtime(format!("proposal for unknown scene {}", r.scene)))?;
            slot.push(r.proposal);
        }
        let scores = test
            .par_iter()
            .zip(&by_scene)
            .map(|(s, p)| score_proposals(&s.cloud, p))
            .collect::<Result<Vec<_>, _>>()?;
        let scores: Vec<_> = scores.into_iter().flatten().collect();
        Some(ProposalStats::from_scores(&scores)?)
    } else {
        None
    };
    let report = evaluate_corpus(&test, &preds, cfg.num_categories, proposals)?;
    let metrics = arts.metrics();
    fs::write(&metrics, report.to_key_values()).map_err(io_err(&metrics))?;
    let table = arts.report();
    fs::write(&table, report.to_table()).map_err(io_err(&table))?;
    Ok(report)
}

/// Writes test scene `scene` as PLY colored by ground-truth instance, and a
/// second file colored by predicted instance when predictions exist.
pub fn cmd_export_ply(arts: &Artifacts, scene: usize) -> Result<Vec<PathBuf>, PipelineError> {
    let test = read_corpus(arts, arts.test_corpus())?;
    let s = test
        .get(scene)
        .ok_or_else(|| PipelineError::Runtime(format!("scene {scene} out of range (corpus has {})", test.len())))?;
    let cloud = &s.cloud;
    let dir = arts.ply_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut written = Vec::new();

    let instances = cloud.instances();
    let gt_masks: Vec<Vec<bool>> = instances
        .iter()
        .map(|inst| {
            let mut m = vec![false; cloud.len()];
            inst.indices.iter().for_each(|&i| m[i] = true);
            m
        })
        .collect();
    let refs: Vec<&[bool]> = gt_masks.iter().map(|m| m.as_slice()).collect();
    let colors = instance_colors(cloud.len(), &refs);
    let verts: Vec<PlyVertex> = (0..cloud.len())
        .map(|i| PlyVertex {
            position: cloud.points[i],
            color: colors[i],
            labels: Some((cloud.semantic_label(i), cloud.instance_id(i))),
        })
        .collect();
    let path = dir.join(format!("scene{scene:03}_gt.ply"));
    write_ply(&path, &verts)?;
    written.push(path);

    if arts.predictions().is_file() {
        let preds = read_predictions(&arts.predictions())?;
        let rec = preds
            .iter()
            .find(|p| p.scene == scene as u64)
            .ok_or_else(|| PipelineError::Runtime(format!("no predictions for scene {scene}")))?;
        let refs: Vec<&[bool]> = rec.instances.iter().map(|p| p.mask.as_slice()).collect();
        let colors = instance_colors(cloud.len(), &refs);
        let mut labels = vec![(0u32, 0u32); cloud.len()];
        for (rank, p) in rec.instances.iter().enumerate() {
            for (i, &on) in p.mask.iter().enumerate() {
                if on && labels[i].1 == 0 {
                    labels[i] = (p.category, rank as u32 + 1);
                }
            }
        }
        let verts: Vec<PlyVertex> = (0..cloud.len())
            .map(|i| PlyVertex { position: cloud.points[i], color: colors[i], labels: Some(labels[i]) })
            .collect();
        let path = dir.join(format!("scene{scene:03}_pred.ply"));
        write_ply(&path, &verts)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_excludes_gray_and_is_injective() {
        assert!(!PALETTE.contains(&BACKGROUND_GRAY));
        for (i, a) in PALETTE.iter().enumerate() {
            assert!(PALETTE[i + 1..].iter().all(|b| a != b));
        }
    }

    #[test]
    fn first_mask_wins() {
        let a = [true, true, false, false];
        let b = [false, true, true, false];
        let c = instance_colors(4, &[&a, &b]);
        assert_eq!(c, vec![PALETTE[0], PALETTE[0], PALETTE[1], BACKGROUND_GRAY]);
    }
}
