//! Artifact plumbing behind the command-line tool: corpus generation, the
//! three training stages, inference, evaluation and PLY export.
//!
//! Every command reads a [`Config`] and works inside its output directory.
//! Networks train in `f32`; checkpoints hold parameter values only and are
//! rebuilt against the architecture the config describes.

mod run;
mod train;

pub use run::{cmd_eval, cmd_export_ply, cmd_infer, instance_colors, BACKGROUND_GRAY, PALETTE};
pub use train::{cmd_train, parse_log_line, LogLine};

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{load_checkpoint, AutodiffError, ParamStore};
use crate::config::{Config, ConfigError};
use crate::eval::EvalError;
use crate::geom::GeomError;
use crate::gspn::{Gspn, GspnError};
use crate::nets::{NetError, SemanticBackbone};
use crate::rpointnet::{DetectionHeads, RpnError};
use crate::scenegen::{default_catalog, derive_seed, generate_corpus, write_scenes, SceneError, SceneRecord};

/// Scalar type used for training and inference.
pub type Scalar = f32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Semantic,
    Gspn,
    Rpointnet,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Semantic, Stage::Gspn, Stage::Rpointnet];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Semantic => "semantic",
            Stage::Gspn => "gspn",
            Stage::Rpointnet => "rpointnet",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.as_str() == s)
    }

    /// Stages whose checkpoints must exist before this one can train.
    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Semantic | Stage::Gspn => &[],
            Stage::Rpointnet => &[Stage::Semantic, Stage::Gspn],
        }
    }

    fn rng_tag(self) -> u64 {
        match self {
            Stage::Semantic => 0x5e4a,
            Stage::Gspn => 0x6599,
            Stage::Rpointnet => 0x7290,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown stage `{0}` (expected semantic, gspn or rpointnet)")]
    UnknownStage(String),
    #[error("`{stage}` needs the `{missing}` checkpoint at {path}; train that stage first")]
    MissingStage { stage: &'static str, missing: &'static str, path: PathBuf },
    #[error("missing artifact {0}; run the producing command first")]
    MissingArtifact(PathBuf),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Gspn(#[from] GspnError),
    #[error(transparent)]
    Rpn(#[from] RpnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    /// 2 for configuration and usage errors, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::UnknownStage(_) => 2,
            _ => 3,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// File layout inside the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn train_corpus(&self) -> PathBuf {
        self.root.join("train.corpus")
    }
    pub fn test_corpus(&self) -> PathBuf {
        self.root.join("test.corpus")
    }
    pub fn checkpoint(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("{}.ckpt", stage.as_str()))
    }
    pub fn epoch_checkpoint(&self, stage: Stage, epoch: usize) -> PathBuf {
        self.root.join("epochs").join(format!("{}-{epoch:03}.ckpt", stage.as_str()))
    }
    pub fn log(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("{}.log", stage.as_str()))
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.bin")
    }
    pub fn proposals(&self) -> PathBuf {
        self.root.join("proposals.bin")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.txt")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }
    pub fn ply_dir(&self) -> PathBuf {
        self.root.join("ply")
    }

    pub(crate) fn require(&self, path: PathBuf) -> Result<PathBuf, PipelineError> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(PipelineError::MissingArtifact(path))
        }
    }
}

pub(crate) fn stage_rng(cfg: &Config, stage: Stage, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ stage.rng_tag(), purpose))
}

const INIT: u64 = 0;

/// Freshly initialized backbone and its parameters.
pub fn build_backbone(cfg: &Config) -> Result<(SemanticBackbone, ParamStore<Scalar>), PipelineError> {
    let mut store = ParamStore::new();
    let mut rng = stage_rng(cfg, Stage::Semantic, INIT);
    let net = SemanticBackbone::new(&mut store, "backbone", cfg.backbone_config()?, &mut rng)?;
    Ok((net, store))
}

pub fn build_gspn(cfg: &Config) -> Result<(Gspn, ParamStore<Scalar>), PipelineError> {
    let mut store = ParamStore::new();
    let mut rng = stage_rng(cfg, Stage::Gspn, INIT);
    let net = Gspn::new(&mut store, "gspn", cfg.gspn.clone(), &mut rng)?;
    Ok((net, store))
}

/// Heads sized for seed features `f_ĉ ⊕ hypercolumn`.
pub fn build_heads(
    cfg: &Config,
    backbone: &SemanticBackbone,
    gspn: &Gspn,
) -> Result<(DetectionHeads, ParamStore<Scalar>), PipelineError> {
    let mut store = ParamStore::new();
    let mut rng = stage_rng(cfg, Stage::Rpointnet, INIT);
    let width = gspn.config.context_feature_width() + backbone.hypercolumn_width();
    let net = DetectionHeads::new(&mut store, "heads", cfg.head_config(width), &mut rng)?;
    Ok((net, store))
}

/// Overwrites `store` with the saved parameters of `stage`.
pub(crate) fn load_into(
    arts: &Artifacts,
    stage: Stage,
    needed_by: &'static str,
    store: &mut ParamStore<Scalar>,
) -> Result<(), PipelineError> {
    let path = arts.checkpoint(stage);
    if !path.is_file() {
        return Err(PipelineError::MissingStage { stage: needed_by, missing: stage.as_str(), path });
    }
    let saved = load_checkpoint::<Scalar>(&path)?;
    store.load_values(&saved)?;
    Ok(())
}

/// All three trained stages, loaded read-only.
pub struct TrainedModels {
    pub backbone: SemanticBackbone,
    pub backbone_store: ParamStore<Scalar>,
    pub gspn: Gspn,
    pub gspn_store: ParamStore<Scalar>,
    pub heads: DetectionHeads,
    pub heads_store: ParamStore<Scalar>,
}

/// Loads the backbone and GSPN checkpoints; `needed_by` names the caller in errors.
pub(crate) fn load_frozen(
    cfg: &Config,
    arts: &Artifacts,
    needed_by: &'static str,
) -> Result<(SemanticBackbone, ParamStore<Scalar>, Gspn, ParamStore<Scalar>), PipelineError> {
    let (backbone, mut bstore) = build_backbone(cfg)?;
    load_into(arts, Stage::Semantic, needed_by, &mut bstore)?;
    let (gspn, mut gstore) = build_gspn(cfg)?;
    load_into(arts, Stage::Gspn, needed_by, &mut gstore)?;
    Ok((backbone, bstore, gspn, gstore))
}

pub fn load_trained(cfg: &Config, arts: &Artifacts, needed_by: &'static str) -> Result<TrainedModels, PipelineError> {
    let (backbone, backbone_store, gspn, gspn_store) = load_frozen(cfg, arts, needed_by)?;
    let (heads, mut heads_store) = build_heads(cfg, &backbone, &gspn)?;
    load_into(arts, Stage::Rpointnet, needed_by, &mut heads_store)?;
    Ok(TrainedModels { backbone, backbone_store, gspn, gspn_store, heads, heads_store })
}

/// Counter offset separating test scenes from train scenes.
pub const TEST_COUNTER_BASE: u64 = 1 << 32;

/// Summary printed by [`cmd_gen_data`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub instances: usize,
    pub points: usize,
}

/// Writes the train and test corpora.
pub fn cmd_gen_data(cfg: &Config, arts: &Artifacts) -> Result<CorpusSummary, PipelineError> {
    let catalog = default_catalog();
    crate::scenegen::validate_catalog(&catalog, cfg.num_categories as u32)?;
    let template = cfg.scene_spec(cfg.seed);
    let train = generate_corpus(&template, &catalog, cfg.seed, 0, cfg.data.train_scenes)?;
    let test = generate_corpus(&template, &catalog, cfg.seed, TEST_COUNTER_BASE, cfg.data.test_scenes)?;
    let instances = train.iter().chain(&test).map(|s| s.objects.len()).sum();
    let train: Vec<SceneRecord> = train.into_iter().map(|s| s.into_record()).collect();
    let test: Vec<SceneRecord> = test.into_iter().map(|s| s.into_record()).collect();
    fs::create_dir_all(&arts.root).map_err(io_err(&arts.root))?;
    write_scenes(&arts.train_corpus(), &train)?;
    write_scenes(&arts.test_corpus(), &test)?;
    let points = train.iter().chain(&test).map(|s| s.cloud.len()).sum();
    log::info!("wrote {} train and {} test scenes to {}", train.len(), test.len(), arts.root.display());
    Ok(CorpusSummary { train_scenes: train.len(), test_scenes: test.len(), instances, points })
}

pub(crate) fn read_corpus(arts: &Artifacts, path: PathBuf) -> Result<Vec<SceneRecord>, PipelineError> {
    let path = arts.require(path)?;
    Ok(crate::scenegen::read_scenes(&path)?)
}
