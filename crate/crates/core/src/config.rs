//! Run configuration: a strict `key = value` format with dotted sections.
//!
//! A file may name a `preset` (`desk` or `paper`); every other key overrides
//! the preset's value. Unknown keys, malformed values and out-of-range
//! settings are rejected before anything is written.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gspn::{GspnConfig, LossWeights};
use crate::nets::{BackboneConfig, SaSpec, BACKBONE_INPUT_WIDTH};
use crate::rpointnet::{DetectionParams, HeadConfig, ProposalParams, ROI_MARGIN};
use crate::scenegen::SceneSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: bad value for `{key}`: {message}")]
    Value { line: usize, key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Preset::Desk),
            "paper" => Some(Preset::Paper),
            _ => None,
        }
    }
}

/// Value types that can appear on the right of `=`.
trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for usize {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("expected a finite number, got `{s}`")),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for bool {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected true or false, got `{s}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            return Err("empty path".into());
        }
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl<V: ConfigValue> ConfigValue for Vec<V> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|p| V::parse_value(p.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.render()).collect::<Vec<_>>().join(", ")
    }
}

/// Nested list: groups separated by `;`, entries by `,`.
#[derive(Debug, Clone, PartialEq)]
pub struct Groups(pub Vec<Vec<usize>>);

impl ConfigValue for Groups {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.split(';').map(|g| Vec::<usize>::parse_value(g.trim())).collect::<Result<_, _>>().map(Groups)
    }
    fn render(&self) -> String {
        self.0.iter().map(|g| g.render()).collect::<Vec<_>>().join("; ")
    }
}

impl ConfigValue for [f64; 3] {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v = Vec::<f64>::parse_value(s)?;
        v.try_into().map_err(|_| "expected three numbers".to_string())
    }
    fn render(&self) -> String {
        self.to_vec().render()
    }
}

impl ConfigValue for Preset {
    fn parse_value(s: &str) -> Result<Self, String> {
        Preset::parse(s).ok_or_else(|| format!("expected desk or paper, got `{s}`"))
    }
    fn render(&self) -> String {
        self.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub points_per_scene: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_separation: f64,
    pub noise_sigma: f64,
    pub background_fraction: f64,
    pub room: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWidths {
    pub sa_regions: Vec<usize>,
    pub sa_radius: Vec<f64>,
    pub sa_group_size: Vec<usize>,
    pub sa_widths: Groups,
    /// Coarsest level first.
    pub fp_widths: Groups,
    pub classifier_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWidths {
    pub trunk: Vec<usize>,
    pub cls_hidden: Vec<usize>,
    pub box_hidden: Vec<usize>,
    pub mask_local: Vec<usize>,
    pub mask_global: Vec<usize>,
    pub mask_hidden: Vec<usize>,
}

/// Counts from the train/inference configuration table.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionCounts {
    pub num_sample_train: usize,
    pub num_sample_infer: usize,
    pub spn_pre_nms_limit_train: usize,
    pub spn_pre_nms_limit_infer: usize,
    pub spn_nms_max_size_train: usize,
    pub spn_nms_max_size_infer: usize,
    pub spn_iou_threshold: f64,
    pub num_point_ins_mask_train: usize,
    pub num_point_ins_mask_infer: usize,
    pub train_rois_per_image: usize,
    pub detection_min_confidence: f64,
    pub detection_max_instances: usize,
    pub roi_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSchedule {
    pub epochs: usize,
    pub lr: f64,
    /// Scenes whose gradients are summed per optimizer step.
    pub scenes_per_step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub semantic: StageSchedule,
    pub gspn: StageSchedule,
    pub rpointnet: StageSchedule,
    pub beta1: f64,
    pub beta2: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    /// Learning-rate factor applied when the epoch training loss stops improving.
    pub lr_decay: f64,
    /// Non-improving epochs tolerated before decaying.
    pub lr_patience: usize,
    pub min_lr: f64,
    /// Seeds drawn per scene for each GSPN step.
    pub gspn_seeds_per_scene: usize,
    pub kl_warmup_steps: u64,
    /// Confidence-target distance as a fraction of the mean gt box diagonal.
    pub eps_fraction: f64,
    pub loss_gen: f64,
    pub loss_e: f64,
    pub loss_kl: f64,
    pub loss_center: f64,
    pub loss_obj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub preset: Preset,
    pub seed: u64,
    /// Rayon worker threads; 0 keeps the library default.
    pub workers: usize,
    pub num_categories: usize,
    pub out: PathBuf,
    pub data: DataConfig,
    pub backbone: BackboneWidths,
    pub gspn: GspnConfig,
    pub heads: HeadWidths,
    pub counts: DetectionCounts,
    pub train: TrainConfig,
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ ;)*) => {
        /// Every accepted key, in file order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl Config {
            fn set_key(&mut self, key: &str, value: &str) -> Option<Result<(), String>> {
                match key {
                    $($key => Some(ConfigValue::parse_value(value).map(|v| self$(.$field)+ = v)),)*
                    _ => None,
                }
            }

            /// Every key with its current value, one `key = value` per line.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(let _ = writeln!(s, "{} = {}", $key, self$(.$field)+.render());)*
                s
            }
        }
    };
}

config_keys! {
    "preset" => preset;
    "seed" => seed;
    "workers" => workers;
    "num_categories" => num_categories;
    "paths.out" => out;
    "data.train_scenes" => data.train_scenes;
    "data.test_scenes" => data.test_scenes;
    "data.points_per_scene" => data.points_per_scene;
    "data.min_objects" => data.min_objects;
    "data.max_objects" => data.max_objects;
    "data.min_separation" => data.min_separation;
    "data.noise_sigma" => data.noise_sigma;
    "data.background_fraction" => data.background_fraction;
    "data.room" => data.room;
    "backbone.sa_regions" => backbone.sa_regions;
    "backbone.sa_radius" => backbone.sa_radius;
    "backbone.sa_group_size" => backbone.sa_group_size;
    "backbone.sa_widths" => backbone.sa_widths;
    "backbone.fp_widths" => backbone.fp_widths;
    "backbone.classifier_hidden" => backbone.classifier_hidden;
    "gspn.radii" => gspn.radii;
    "gspn.points_per_scale" => gspn.points_per_scale;
    "gspn.context_widths" => gspn.context_widths;
    "gspn.center_prediction" => gspn.center_prediction;
    "gspn.center_hidden" => gspn.center_hidden;
    "gspn.prior_hidden" => gspn.prior_hidden;
    "gspn.latent_dim" => gspn.latent_dim;
    "gspn.object_points" => gspn.object_points;
    "gspn.object_widths" => gspn.object_widths;
    "gspn.recognition_hidden" => gspn.recognition_hidden;
    "gspn.fc_hidden" => gspn.fc_hidden;
    "gspn.fc_points" => gspn.fc_points;
    "gspn.grid_side" => gspn.grid_side;
    "gspn.grid_hidden" => gspn.grid_hidden;
    "gspn.objectness_hidden" => gspn.objectness_hidden;
    "heads.trunk" => heads.trunk;
    "heads.cls_hidden" => heads.cls_hidden;
    "heads.box_hidden" => heads.box_hidden;
    "heads.mask_local" => heads.mask_local;
    "heads.mask_global" => heads.mask_global;
    "heads.mask_hidden" => heads.mask_hidden;
    "detection.num_sample_train" => counts.num_sample_train;
    "detection.num_sample_infer" => counts.num_sample_infer;
    "detection.spn_pre_nms_limit_train" => counts.spn_pre_nms_limit_train;
    "detection.spn_pre_nms_limit_infer" => counts.spn_pre_nms_limit_infer;
    "detection.spn_nms_max_size_train" => counts.spn_nms_max_size_train;
    "detection.spn_nms_max_size_infer" => counts.spn_nms_max_size_infer;
    "detection.spn_iou_threshold" => counts.spn_iou_threshold;
    "detection.num_point_ins_mask_train" => counts.num_point_ins_mask_train;
    "detection.num_point_ins_mask_infer" => counts.num_point_ins_mask_infer;
    "detection.train_rois_per_image" => counts.train_rois_per_image;
    "detection.detection_min_confidence" => counts.detection_min_confidence;
    "detection.detection_max_instances" => counts.detection_max_instances;
    "detection.roi_margin" => counts.roi_margin;
    "train.semantic.epochs" => train.semantic.epochs;
    "train.semantic.lr" => train.semantic.lr;
    "train.semantic.scenes_per_step" => train.semantic.scenes_per_step;
    "train.gspn.epochs" => train.gspn.epochs;
    "train.gspn.lr" => train.gspn.lr;
    "train.gspn.scenes_per_step" => train.gspn.scenes_per_step;
    "train.gspn.seeds_per_scene" => train.gspn_seeds_per_scene;
    "train.gspn.kl_warmup_steps" => train.kl_warmup_steps;
    "train.gspn.eps_fraction" => train.eps_fraction;
    "train.gspn.loss_gen" => train.loss_gen;
    "train.gspn.loss_e" => train.loss_e;
    "train.gspn.loss_kl" => train.loss_kl;
    "train.gspn.loss_center" => train.loss_center;
    "train.gspn.loss_obj" => train.loss_obj;
    "train.rpointnet.epochs" => train.rpointnet.epochs;
    "train.rpointnet.lr" => train.rpointnet.lr;
    "train.rpointnet.scenes_per_step" => train.rpointnet.scenes_per_step;
    "train.beta1" => train.beta1;
    "train.beta2" => train.beta2;
    "train.grad_clip" => train.grad_clip;
    "train.lr_decay" => train.lr_decay;
    "train.lr_patience" => train.lr_patience;
    "train.min_lr" => train.min_lr;
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a).trim()
}

impl Config {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Desk-scale preset: small corpus and narrow networks for one CPU.
    pub fn desk() -> Self {
        Config {
            preset: Preset::Desk,
            seed: 7,
            workers: 0,
            num_categories: 4,
            out: PathBuf::from("runs/desk"),
            data: DataConfig {
                train_scenes: 200,
                test_scenes: 40,
                points_per_scene: 2048,
                min_objects: 3,
                max_objects: 8,
                min_separation: 0.1,
                noise_sigma: 0.005,
                background_fraction: 0.25,
                room: [3.5, 3.5, 1.0],
            },
            backbone: BackboneWidths {
                sa_regions: vec![256, 64, 16, 4],
                sa_radius: vec![0.2, 0.4, 0.8, 1.6],
                sa_group_size: vec![16, 16, 16, 4],
                sa_widths: Groups(vec![vec![16, 16, 32], vec![32, 32, 64], vec![64, 64, 128], vec![128, 128, 256]]),
                fp_widths: Groups(vec![vec![128, 128], vec![128, 64], vec![64, 64], vec![64, 64]]),
                classifier_hidden: vec![64],
            },
            gspn: GspnConfig {
                radii: vec![0.25, 0.5, 1.0],
                points_per_scale: 64,
                context_widths: vec![32, 64, 128],
                center_prediction: true,
                center_hidden: vec![128, 64],
                prior_hidden: vec![128, 128],
                latent_dim: 32,
                object_points: 128,
                object_widths: vec![32, 64, 128],
                recognition_hidden: vec![128, 128],
                fc_hidden: vec![128, 128],
                fc_points: 64,
                grid_side: 8,
                grid_hidden: vec![64, 64],
                objectness_hidden: vec![64],
            },
            heads: HeadWidths {
                trunk: vec![64, 128, 256],
                cls_hidden: vec![128, 128],
                box_hidden: vec![128, 128],
                mask_local: vec![32, 32],
                mask_global: vec![32, 64, 256],
                mask_hidden: vec![128, 128],
            },
            counts: DetectionCounts {
                num_sample_train: 64,
                num_sample_infer: 256,
                spn_pre_nms_limit_train: 48,
                spn_pre_nms_limit_infer: 192,
                spn_nms_max_size_train: 32,
                spn_nms_max_size_infer: 48,
                spn_iou_threshold: 0.5,
                num_point_ins_mask_train: 64,
                num_point_ins_mask_infer: 128,
                train_rois_per_image: 32,
                detection_min_confidence: 0.5,
                detection_max_instances: 100,
                // proposals at this scale come out slightly oversized, not conservative
                roi_margin: 0.0,
            },
            train: TrainConfig {
                semantic: StageSchedule { epochs: 10, lr: 2e-3, scenes_per_step: 1 },
                gspn: StageSchedule { epochs: 30, lr: 1e-3, scenes_per_step: 4 },
                rpointnet: StageSchedule { epochs: 80, lr: 1e-3, scenes_per_step: 1 },
                beta1: 0.9,
                beta2: 0.999,
                grad_clip: 10.0,
                lr_decay: 0.5,
                lr_patience: 6,
                min_lr: 1e-5,
                gspn_seeds_per_scene: 32,
                kl_warmup_steps: 200,
                eps_fraction: 0.1,
                // chamfer in square metres is ~1e-2 here and would drown under the BCE terms
                loss_gen: 20.0,
                loss_e: 1.0,
                loss_kl: 1.0,
                loss_center: 10.0,
                loss_obj: 1.0,
            },
        }
    }

    /// Widths and counts of the published configuration.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.preset = Preset::Paper;
        c.out = PathBuf::from("runs/paper");
        c.backbone = BackboneWidths {
            sa_regions: vec![2048, 512, 128, 32],
            sa_radius: vec![0.2, 0.4, 0.8, 1.6],
            sa_group_size: vec![32, 32, 32, 32],
            sa_widths: Groups(vec![vec![32, 32, 64], vec![64, 64, 128], vec![128, 128, 256], vec![256, 256, 512]]),
            fp_widths: Groups(vec![vec![256, 256], vec![256, 256], vec![256, 128], vec![128, 128, 128]]),
            classifier_hidden: vec![128],
        };
        c.data.points_per_scene = 16384;
        c.gspn = GspnConfig {
            radii: vec![0.25, 0.5, 1.0],
            points_per_scale: 512,
            context_widths: vec![64, 128, 256],
            center_prediction: true,
            center_hidden: vec![256, 128],
            prior_hidden: vec![256, 512, 512],
            latent_dim: 256,
            object_points: 512,
            object_widths: vec![64, 256, 512, 256],
            recognition_hidden: vec![256, 512, 512],
            fc_hidden: vec![512, 512],
            fc_points: 256,
            grid_side: 16,
            grid_hidden: vec![512, 256, 128],
            objectness_hidden: vec![256],
        };
        c.heads = HeadWidths {
            trunk: vec![128, 256, 512],
            cls_hidden: vec![256, 256],
            box_hidden: vec![256, 256],
            mask_local: vec![64, 64],
            mask_global: vec![64, 128, 512],
            mask_hidden: vec![256, 256],
        };
        c.counts = DetectionCounts {
            num_sample_train: 512,
            num_sample_infer: 2048,
            spn_pre_nms_limit_train: 192,
            spn_pre_nms_limit_infer: 1536,
            spn_nms_max_size_train: 128,
            spn_nms_max_size_infer: 384,
            spn_iou_threshold: 0.5,
            num_point_ins_mask_train: 256,
            num_point_ins_mask_infer: 1024,
            train_rois_per_image: 64,
            detection_min_confidence: 0.5,
            detection_max_instances: 100,
            roi_margin: ROI_MARGIN,
        };
        c.train.gspn_seeds_per_scene = 512;
        c.train.eps_fraction = 0.05;
        c.train.loss_gen = 1.0;
        c.train.loss_center = 1.0;
        c
    }

    /// Parses config text: the preset is applied first, then every other key.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey { line: i + 1, key: k.to_string() });
            }
            if !seen.insert(k.to_string()) {
                return Err(ConfigError::Syntax { line: i + 1, message: format!("`{k}` given twice") });
            }
            entries.push((i + 1, k, v));
        }
        let preset = match entries.iter().find(|e| e.1 == "preset") {
            Some(&(line, key, v)) => Preset::parse_value(v)
                .map_err(|message| ConfigError::Value { line, key: key.to_string(), message })?,
            None => Preset::Desk,
        };
        let mut cfg = Self::preset(preset);
        for (line, key, v) in entries {
            if let Some(Err(message)) = cfg.set_key(key, v) {
                return Err(ConfigError::Value { line, key: key.to_string(), message });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// Checks ranges and that every network can be built from the widths.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let d = &self.data;
        let k = &self.counts;
        let t = &self.train;
        let positive = [
            ("num_categories", self.num_categories),
            ("data.train_scenes", d.train_scenes),
            ("data.test_scenes", d.test_scenes),
            ("detection.num_sample_train", k.num_sample_train),
            ("detection.num_sample_infer", k.num_sample_infer),
            ("detection.spn_pre_nms_limit_train", k.spn_pre_nms_limit_train),
            ("detection.spn_pre_nms_limit_infer", k.spn_pre_nms_limit_infer),
            ("detection.spn_nms_max_size_train", k.spn_nms_max_size_train),
            ("detection.spn_nms_max_size_infer", k.spn_nms_max_size_infer),
            ("detection.num_point_ins_mask_train", k.num_point_ins_mask_train),
            ("detection.num_point_ins_mask_infer", k.num_point_ins_mask_infer),
            ("detection.train_rois_per_image", k.train_rois_per_image),
            ("detection.detection_max_instances", k.detection_max_instances),
            ("train.semantic.scenes_per_step", t.semantic.scenes_per_step),
            ("train.gspn.scenes_per_step", t.gspn.scenes_per_step),
            ("train.rpointnet.scenes_per_step", t.rpointnet.scenes_per_step),
            ("train.gspn.seeds_per_scene", t.gspn_seeds_per_scene),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let unit = [
            ("detection.spn_iou_threshold", k.spn_iou_threshold),
            ("detection.detection_min_confidence", k.detection_min_confidence),
            ("train.beta1", t.beta1),
            ("train.beta2", t.beta2),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(t.lr_decay > 0.0 && t.lr_decay <= 1.0) {
            return bad(format!("train.lr_decay must lie in (0, 1], got {}", t.lr_decay));
        }
        if t.min_lr <= 0.0 {
            return bad("train.min_lr must be positive".into());
        }
        if t.beta1 == 1.0 || t.beta2 == 1.0 {
            return bad("Adam betas must be below 1".into());
        }
        let nonneg = [
            ("detection.roi_margin", k.roi_margin),
            ("train.grad_clip", t.grad_clip),
            ("train.gspn.eps_fraction", t.eps_fraction),
            ("train.gspn.loss_gen", t.loss_gen),
            ("train.gspn.loss_e", t.loss_e),
            ("train.gspn.loss_kl", t.loss_kl),
            ("train.gspn.loss_center", t.loss_center),
            ("train.gspn.loss_obj", t.loss_obj),
        ];
        for (name, v) in nonneg {
            if v < 0.0 {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, lr) in [("semantic", t.semantic.lr), ("gspn", t.gspn.lr), ("rpointnet", t.rpointnet.lr)] {
            if lr <= 0.0 {
                return bad(format!("train.{name}.lr must be positive"));
            }
        }
        if k.spn_nms_max_size_train > k.spn_pre_nms_limit_train || k.spn_nms_max_size_infer > k.spn_pre_nms_limit_infer
        {
            return bad("spn_nms_max_size cannot exceed spn_pre_nms_limit".into());
        }
        for (name, n) in [("train", k.num_sample_train), ("infer", k.num_sample_infer), ("gspn", t.gspn_seeds_per_scene)] {
            if n > d.points_per_scene {
                return bad(format!("{name} seed count {n} exceeds points per scene"));
            }
        }
        self.scene_spec(0).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let b = self.backbone_config()?;
        if b.sa[0].regions > d.points_per_scene {
            return bad("first SA layer has more regions than points per scene".into());
        }
        self.gspn.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.head_config(1).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn scene_spec(&self, seed: u64) -> SceneSpec {
        let d = &self.data;
        SceneSpec {
            room: d.room,
            min_objects: d.min_objects,
            max_objects: d.max_objects,
            min_separation: d.min_separation,
            points_per_scene: d.points_per_scene,
            noise_sigma: d.noise_sigma,
            background_fraction: d.background_fraction,
            seed,
        }
    }

    pub fn backbone_config(&self) -> Result<BackboneConfig, ConfigError> {
        let b = &self.backbone;
        let n = b.sa_regions.len();
        if n == 0
            || b.sa_radius.len() != n
            || b.sa_group_size.len() != n
            || b.sa_widths.0.len() != n
            || b.fp_widths.0.len() != n
        {
            return Err(ConfigError::Invalid("backbone SA and FP lists must have equal, non-zero length".into()));
        }
        let all_widths = b.sa_widths.0.iter().chain(&b.fp_widths.0);
        if all_widths.clone().any(|w| w.is_empty() || w.contains(&0))
            || b.sa_regions.contains(&0)
            || b.sa_group_size.contains(&0)
            || b.sa_radius.iter().any(|&r| r <= 0.0)
        {
            return Err(ConfigError::Invalid("backbone counts, radii and widths must be positive".into()));
        }
        Ok(BackboneConfig {
            in_features: BACKBONE_INPUT_WIDTH,
            sa: (0..n)
                .map(|i| SaSpec {
                    regions: b.sa_regions[i],
                    radius: b.sa_radius[i],
                    group_size: b.sa_group_size[i],
                    widths: b.sa_widths.0[i].clone(),
                })
                .collect(),
            fp: b.fp_widths.0.clone(),
            classifier_hidden: b.classifier_hidden.clone(),
            num_classes: self.num_categories + 1,
        })
    }

    /// Head widths for seed features of width `in_features`.
    pub fn head_config(&self, in_features: usize) -> HeadConfig {
        let h = &self.heads;
        HeadConfig {
            in_features,
            num_categories: self.num_categories,
            trunk: h.trunk.clone(),
            cls_hidden: h.cls_hidden.clone(),
            box_hidden: h.box_hidden.clone(),
            mask_local: h.mask_local.clone(),
            mask_global: h.mask_global.clone(),
            mask_hidden: h.mask_hidden.clone(),
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        let t = &self.train;
        LossWeights { gen: t.loss_gen, e: t.loss_e, kl: t.loss_kl, center: t.loss_center, obj: t.loss_obj }
    }

    pub fn proposal_params(&self, training: bool) -> ProposalParams {
        let k = &self.counts;
        let (num_sample, pre_nms_limit, nms_max_size) = if training {
            (k.num_sample_train, k.spn_pre_nms_limit_train, k.spn_nms_max_size_train)
        } else {
            (k.num_sample_infer, k.spn_pre_nms_limit_infer, k.spn_nms_max_size_infer)
        };
        ProposalParams { num_sample, pre_nms_limit, nms_max_size, iou_threshold: k.spn_iou_threshold, roi_margin: k.roi_margin }
    }

    pub fn detection_params(&self, training: bool) -> DetectionParams {
        let k = &self.counts;
        DetectionParams {
            num_roi_points: if training { k.num_point_ins_mask_train } else { k.num_point_ins_mask_infer },
            min_confidence: k.detection_min_confidence,
            max_instances: k.detection_max_instances,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        Config::desk().validate().unwrap();
        Config::paper().validate().unwrap();
    }

    #[test]
    fn paper_counts() {
        let c = Config::paper().counts;
        assert_eq!((c.num_sample_train, c.num_sample_infer), (512, 2048));
        assert_eq!((c.spn_pre_nms_limit_train, c.spn_pre_nms_limit_infer), (192, 1536));
        assert_eq!((c.spn_nms_max_size_train, c.spn_nms_max_size_infer), (128, 384));
        assert_eq!(c.spn_iou_threshold, 0.5);
        assert_eq!((c.num_point_ins_mask_train, c.num_point_ins_mask_infer), (256, 1024));
        assert_eq!(c.train_rois_per_image, 64);
        assert_eq!((c.detection_min_confidence, c.detection_max_instances), (0.5, 100));
    }

    #[test]
    fn text_round_trip() {
        for c in [Config::desk(), Config::paper()] {
            assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        }
    }

    #[test]
    fn overrides_apply_over_the_preset() {
        let c = Config::parse("# comment\nseed = 99\npreset = paper\n\ndata.room = 4, 4, 1.5  # trailing\n").unwrap();
        assert_eq!(c.preset, Preset::Paper);
        assert_eq!(c.seed, 99);
        assert_eq!(c.data.room, [4.0, 4.0, 1.5]);
        assert_eq!(c.counts.num_sample_train, 512);
        let c = Config::parse("backbone.fp_widths = 8, 8; 8; 8; 8").unwrap();
        assert_eq!(c.backbone.fp_widths.0[0], vec![8, 8]);
    }

    #[test]
    fn strictness() {
        let err = |t: &str| Config::parse(t).unwrap_err();
        assert!(matches!(err("bogus = 1"), ConfigError::UnknownKey { line: 1, .. }));
        assert!(matches!(err("seed"), ConfigError::Syntax { .. }));
        assert!(matches!(err("seed = -1"), ConfigError::Value { .. }));
        assert!(matches!(err("seed = 1\nseed = 2"), ConfigError::Syntax { line: 2, .. }));
        assert!(matches!(err("preset = huge"), ConfigError::Value { .. }));
        assert!(matches!(err("detection.spn_iou_threshold = 1.5"), ConfigError::Invalid(_)));
        assert!(matches!(err("detection.num_sample_train = 0"), ConfigError::Invalid(_)));
        assert!(matches!(err("data.room = 1, 2"), ConfigError::Value { .. }));
        assert!(matches!(err("backbone.sa_radius = 0.2"), ConfigError::Invalid(_)));
        assert!(matches!(err("train.gspn.lr = nan"), ConfigError::Value { .. }));
    }
}
