use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{save_checkpoint, Adam, Graph, ParamStore, PlateauDecay, Tensor};
use crate::config::{Config, StageSchedule};
use crate::eval::{score_proposals, ProposalStats};
use crate::geom::random_seeds;
use crate::gspn::{kl_anneal_weight, propose, scene_training_loss, Gspn, ProposeMode, SceneSupervision, StepOptions};
use crate::nets::{argmax_rows, backbone_input, semantic_pretrain_loss, SemanticBackbone, BACKBONE_INPUT_WIDTH};
use crate::rpointnet::{scene_proposals, scene_rpointnet_loss, FrozenStages};
use crate::scenegen::{derive_seed, SceneRecord};

use super::{
    build_backbone, build_gspn, build_heads, io_err, load_frozen, read_corpus, stage_rng, Artifacts, PipelineError,
    Scalar, Stage,
};

/// One parsed training-log line: `kind=step stage=gspn epoch=1 ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLine {
    pub fields: Vec<(String, String)>,
}

impl LogLine {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }
}

pub fn parse_log_line(line: &str) -> Option<LogLine> {
    let fields = line
        .split_whitespace()
        .map(|tok| tok.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect::<Option<Vec<_>>>()?;
    (!fields.is_empty()).then_some(LogLine { fields })
}

struct TrainLog {
    out: BufWriter<File>,
    stage: Stage,
}

impl TrainLog {
    fn create(arts: &Artifacts, stage: Stage) -> Result<Self, PipelineError> {
        let path = arts.log(stage);
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok(Self { out: BufWriter::new(file), stage })
    }

    fn line(&mut self, kind: &str, epoch: usize, fields: &[(&str, String)]) -> Result<(), PipelineError> {
        let mut s = format!("kind={kind} stage={} epoch={epoch}", self.stage.as_str());
        for (k, v) in fields {
            s.push_str(&format!(" {k}={v}"));
        }
        if kind != "step" {
            log::info!("{s}");
        } else {
            log::debug!("{s}");
        }
        writeln!(self.out, "{s}").map_err(|e| PipelineError::Runtime(format!("writing training log: {e}")))
    }

    fn flush(&mut self) -> Result<(), PipelineError> {
        self.out.flush().map_err(|e| PipelineError::Runtime(format!("writing training log: {e}")))
    }
}

fn optimizer(cfg: &Config, sched: &StageSchedule) -> (Adam, PlateauDecay) {
    let t = &cfg.train;
    (Adam::new(sched.lr).with_betas(t.beta1, t.beta2), PlateauDecay::new(t.lr_decay, t.lr_patience, t.min_lr))
}

/// Averages the accumulated gradients over `count` scenes, clips, steps, and
/// clears them. Returns the pre-clip gradient norm.
fn apply_step(cfg: &Config, store: &mut ParamStore<Scalar>, adam: &mut Adam, count: usize) -> f64 {
    store.scale_grads(1.0 / count as Scalar);
    let norm = if cfg.train.grad_clip > 0.0 { store.clip_grad_norm(cfg.train.grad_clip) } else { store.grad_norm() };
    adam.step(store);
    store.zero_grad();
    norm
}

fn save_epoch(arts: &Artifacts, stage: Stage, epoch: usize, store: &ParamStore<Scalar>) -> Result<(), PipelineError> {
    let dir = arts.root.join("epochs");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    save_checkpoint(store, &arts.epoch_checkpoint(stage, epoch))?;
    save_checkpoint(store, &arts.checkpoint(stage))?;
    Ok(())
}

fn f(v: f64) -> String {
    format!("{v}")
}

/// Trains one stage, writing a checkpoint after every epoch and a log line
/// per optimizer step. Prerequisite checkpoints are loaded read-only.
pub fn cmd_train(cfg: &Config, arts: &Artifacts, stage: Stage) -> Result<(), PipelineError> {
    for &pre in stage.prerequisites() {
        let path = arts.checkpoint(pre);
        if !path.is_file() {
            return Err(PipelineError::MissingStage { stage: stage.as_str(), missing: pre.as_str(), path });
        }
    }
    let train = read_corpus(arts, arts.train_corpus())?;
    let test = read_corpus(arts, arts.test_corpus())?;
    let started = Instant::now();
    match stage {
        Stage::Semantic => train_semantic(cfg, arts, &train, &test)?,
        Stage::Gspn => train_gspn(cfg, arts, &train, &test)?,
        Stage::Rpointnet => train_rpointnet(cfg, arts, &train)?,
    }
    log::info!("stage {} finished in {:.1}s", stage.as_str(), started.elapsed().as_secs_f64());
    Ok(())
}

fn labels(scene: &SceneRecord) -> Vec<u32> {
    (0..scene.cloud.len()).map(|i| scene.cloud.semantic_label(i)).collect()
}

/// Per-point semantic accuracy over `scenes`, FPS starting at index 0.
pub fn evaluate_semantic(
    net: &SemanticBackbone,
    store: &ParamStore<Scalar>,
    scenes: &[SceneRecord],
) -> Result<f64, PipelineError> {
    let per_scene = scenes
        .par_iter()
        .map(|s| {
            let mut g = Graph::<Scalar>::inference();
            let n = s.cloud.len();
            let x = g.constant(Tensor::from_f64(vec![n, BACKBONE_INPUT_WIDTH], &backbone_input(&s.cloud)));
            let out = net.forward(&mut g, store, &s.cloud.points, x, None)?;
            let pred = argmax_rows(g.value(out.logits));
            let hits = pred.iter().zip(labels(s)).filter(|(p, l)| **p == *l as usize).count();
            Ok((hits, n))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let (hits, total) = per_scene.into_iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

fn train_semantic(
    cfg: &Config,
    arts: &Artifacts,
    train: &[SceneRecord],
    test: &[SceneRecord],
) -> Result<(), PipelineError> {
    let sched = &cfg.train.semantic;
    let (net, mut store) = build_backbone(cfg)?;
    let (mut adam, mut plateau) = optimizer(cfg, sched);
    let mut rng = stage_rng(cfg, Stage::Semantic, 1);
    let mut log = TrainLog::create(arts, Stage::Semantic)?;
    let mut step = 0u64;
    for epoch in 1..=sched.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(sched.scenes_per_step) {
            let mut loss_sum = 0.0;
            for &i in chunk {
                let s = &train[i];
                let mut g = Graph::<Scalar>::new();
                let n = s.cloud.len();
                let x = g.constant(Tensor::from_f64(vec![n, BACKBONE_INPUT_WIDTH], &backbone_input(&s.cloud)));
                let out = net.forward(&mut g, &store, &s.cloud.points, x, Some(&mut rng as &mut dyn RngCore))?;
                let loss = semantic_pretrain_loss(&mut g, out.logits, &labels(s))?;
                loss_sum += g.value(loss).item() as f64;
                g.backward(loss)?;
                store.accumulate_grads(&g);
            }
            let norm = apply_step(cfg, &mut store, &mut adam, chunk.len());
            step += 1;
            let l = loss_sum / chunk.len() as f64;
            epoch_loss += loss_sum;
            log.line("step", epoch, &[("step", step.to_string()), ("l_sem", f(l)), ("grad_norm", f(norm))])?;
        }
        save_epoch(arts, Stage::Semantic, epoch, &store)?;
        let acc = evaluate_semantic(&net, &store, test)?;
        let train_loss = epoch_loss / train.len() as f64;
        log.line("eval", epoch, &[("train_loss", f(train_loss)), ("semantic_accuracy", f(acc)), ("lr", f(adam.lr))])?;
        adam.lr = plateau.observe(train_loss, adam.lr);
        log.flush()?;
    }
    Ok(())
}

/// Proposal mIoU and chamfer over every foreground seed of `scenes`,
/// with the prior mean as latent.
pub fn evaluate_gspn(
    cfg: &Config,
    net: &Gspn,
    store: &ParamStore<Scalar>,
    scenes: &[SceneRecord],
) -> Result<ProposalStats, PipelineError> {
    let per_scene = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0xe7a1, i as u64));
            let k = cfg.counts.num_sample_infer.min(s.cloud.len());
            let seeds = random_seeds(s.cloud.len(), k, &mut rng)?;
            let props = propose(net, store, &s.cloud, &seeds, &mut rng, ProposeMode::Infer, usize::MAX)?;
            Ok(score_proposals(&s.cloud, &props)?)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let scores: Vec<_> = per_scene.into_iter().flatten().collect();
    Ok(ProposalStats::from_scores(&scores)?)
}

fn train_gspn(cfg: &Config, arts: &Artifacts, train: &[SceneRecord], test: &[SceneRecord]) -> Result<(), PipelineError> {
    let sched = &cfg.train.gspn;
    let (net, mut store) = build_gspn(cfg)?;
    let (mut adam, mut plateau) = optimizer(cfg, sched);
    let mut rng = stage_rng(cfg, Stage::Gspn, 1);
    let mut log = TrainLog::create(arts, Stage::Gspn)?;
    let sups: Vec<SceneSupervision> = train.iter().map(|s| SceneSupervision::new(&s.cloud, cfg.train.eps_fraction)).collect();
    let base = evaluate_gspn(cfg, &net, &store, test)?;
    log.line("eval", 0, &[("proposal_miou", f(base.miou)), ("mean_chamfer", f(base.mean_chamfer))])?;
    let mut step = 0u64;
    for epoch in 1..=sched.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for chunk in order.chunks(sched.scenes_per_step) {
            let kl_weight = kl_anneal_weight(step, cfg.train.kl_warmup_steps);
            let opts = StepOptions { kl_weight, weights: cfg.loss_weights(), roi_margin: cfg.counts.roi_margin };
            let mut sum = [0.0f64; 6];
            for &i in chunk {
                let cloud = &train[i].cloud;
                let k = cfg.train.gspn_seeds_per_scene.min(cloud.len());
                let seeds = random_seeds(cloud.len(), k, &mut rng)?;
                let mut g = Graph::<Scalar>::new();
                let (loss, bd) = scene_training_loss(&net, &mut g, &store, cloud, &sups[i], &seeds, &opts, &mut rng)?;
                g.backward(loss)?;
                store.accumulate_grads(&g);
                for (s, v) in sum.iter_mut().zip([bd.l_gen, bd.l_e, bd.l_kl, bd.l_center, bd.l_obj, bd.total]) {
                    *s += v;
                }
            }
            let norm = apply_step(cfg, &mut store, &mut adam, chunk.len());
            step += 1;
            epoch_total += sum[5];
            let m = chunk.len() as f64;
            let names = ["l_gen", "l_e", "l_kl", "l_center", "l_obj", "total"];
            let mut fields: Vec<(&str, String)> = vec![("step", step.to_string())];
            fields.extend(names.iter().zip(sum).map(|(n, v)| (*n, f(v / m))));
            fields.push(("kl_weight", f(kl_weight)));
            fields.push(("grad_norm", f(norm)));
            log.line("step", epoch, &fields)?;
        }
        save_epoch(arts, Stage::Gspn, epoch, &store)?;
        let stats = evaluate_gspn(cfg, &net, &store, test)?;
        let train_loss = epoch_total / train.len() as f64;
        log.line(
            "eval",
            epoch,
            &[
                ("train_loss", f(train_loss)),
                ("proposal_miou", f(stats.miou)),
                ("mean_chamfer", f(stats.mean_chamfer)),
                ("lr", f(adam.lr)),
            ],
        )?;
        adam.lr = plateau.observe(train_loss, adam.lr);
        log.flush()?;
    }
    Ok(())
}

fn train_rpointnet(cfg: &Config, arts: &Artifacts, train: &[SceneRecord]) -> Result<(), PipelineError> {
    let sched = &cfg.train.rpointnet;
    let (backbone, bstore, gspn, gstore) = load_frozen(cfg, arts, Stage::Rpointnet.as_str())?;
    let stages = FrozenStages { backbone: &backbone, backbone_store: &bstore, gspn: &gspn, gspn_store: &gstore };
    let (heads, mut store) = build_heads(cfg, &backbone, &gspn)?;
    let (mut adam, mut plateau) = optimizer(cfg, sched);
    let mut rng = stage_rng(cfg, Stage::Rpointnet, 1);
    let mut log = TrainLog::create(arts, Stage::Rpointnet)?;
    let pparams = cfg.proposal_params(true);
    let n_roi = cfg.counts.num_point_ins_mask_train;
    let mut step = 0u64;
    for epoch in 1..=sched.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_sum = [0.0f64; 4];
        let mut epoch_scenes = 0usize;
        for chunk in order.chunks(sched.scenes_per_step) {
            let mut sum = [0.0f64; 4];
            let (mut used, mut positives, mut rois) = (0usize, 0usize, 0usize);
            for &i in chunk {
                let cloud = &train[i].cloud;
                let sp = scene_proposals(&stages, cloud, &pparams, ProposeMode::Train, &mut rng)?;
                let mut g = Graph::<Scalar>::new();
                let max_rois = cfg.counts.train_rois_per_image;
                let Some((loss, bd)) = scene_rpointnet_loss(&heads, &mut g, &store, cloud, &sp, n_roi, max_rois, &mut rng)?
                else {
                    continue;
                };
                g.backward(loss)?;
                store.accumulate_grads(&g);
                for (s, v) in sum.iter_mut().zip([bd.l_cls, bd.l_box, bd.l_mask, bd.total]) {
                    *s += v;
                }
                used += 1;
                positives += bd.positives;
                rois += bd.rois;
            }
            if used == 0 {
                log.line("skip", epoch, &[("reason", "no_labeled_rois".into())])?;
                continue;
            }
            let norm = apply_step(cfg, &mut store, &mut adam, used);
            step += 1;
            let m = used as f64;
            let names = ["l_cls", "l_box", "l_mask", "total"];
            let mut fields: Vec<(&str, String)> = vec![("step", step.to_string())];
            fields.extend(names.iter().zip(sum).map(|(n, v)| (*n, f(v / m))));
            fields.push(("positives", positives.to_string()));
            fields.push(("rois", rois.to_string()));
            fields.push(("grad_norm", f(norm)));
            log.line("step", epoch, &fields)?;
            for (e, s) in epoch_sum.iter_mut().zip(sum) {
                *e += s;
            }
            epoch_scenes += used;
        }
        save_epoch(arts, Stage::Rpointnet, epoch, &store)?;
        let m = epoch_scenes.max(1) as f64;
        log.line(
            "epoch",
            epoch,
            &[
                ("l_cls", f(epoch_sum[0] / m)),
                ("l_box", f(epoch_sum[1] / m)),
                ("l_mask", f(epoch_sum[2] / m)),
                ("total", f(epoch_sum[3] / m)),
                ("lr", f(adam.lr)),
            ],
        )?;
        adam.lr = plateau.observe(epoch_sum[3] / m, adam.lr);
        log.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_lines_parse() {
        let l = parse_log_line("kind=eval stage=gspn epoch=3 proposal_miou=0.5").unwrap();
        assert_eq!(l.get("kind"), Some("eval"));
        assert_eq!(l.number("epoch"), Some(3.0));
        assert_eq!(l.number("proposal_miou"), Some(0.5));
        assert!(parse_log_line("no equals here").is_none());
        assert!(parse_log_line("").is_none());
    }
}
