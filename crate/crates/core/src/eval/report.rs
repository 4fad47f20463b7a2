use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::geom::PointCloud;
use crate::scenegen::{PredictionRecord, SceneRecord};

use super::{average_precision, EvalError, GtMask, PredMask};

/// Interpolation, matching and chamfer conventions, recorded with every report.
pub const METADATA: [(&str, &str); 3] = [
    ("meta.ap_interpolation", "all-point"),
    ("meta.matching", "greedy by descending confidence, highest-IoU unmatched gt, lower gt id on ties"),
    ("meta.chamfer", "squared euclidean, mean per side, sides summed"),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryAp {
    pub category: u32,
    pub ap25: f64,
    pub ap50: f64,
}

/// Aggregated proposal quality over foreground seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalStats {
    pub miou: f64,
    pub mean_chamfer: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub categories: Vec<CategoryAp>,
    pub mean_ap25: f64,
    pub mean_ap50: f64,
    pub proposals: Option<ProposalStats>,
    pub scenes: usize,
    pub predictions: usize,
    pub ground_truth: usize,
}

fn gt_masks(cloud: &PointCloud) -> Vec<(u32, u32, Vec<bool>)> {
    cloud
        .instances()
        .into_iter()
        .map(|inst| {
            let mut m = vec![false; cloud.len()];
            for i in inst.indices {
                m[i] = true;
            }
            (inst.id, inst.category, m)
        })
        .collect()
}

/// Mask AP at 0.25 and 0.5 for categories `1..=num_categories`;
/// `predictions[i]` must describe `scenes[i]`.
pub fn evaluate_corpus(
    scenes: &[SceneRecord],
    predictions: &[PredictionRecord],
    num_categories: usize,
    proposals: Option<ProposalStats>,
) -> Result<EvalReport, EvalError> {
    if scenes.len() != predictions.len() {
        return Err(EvalError::SceneCount { expected: scenes.len(), found: predictions.len() });
    }
    for (s, p) in scenes.iter().zip(predictions) {
        if p.num_points != s.cloud.len() {
            return Err(EvalError::LengthMismatch(p.num_points, s.cloud.len()));
        }
    }
    let gt_per_scene: Vec<_> = scenes.par_iter().map(|s| gt_masks(&s.cloud)).collect();
    let gts: Vec<GtMask<'_>> = gt_per_scene
        .iter()
        .enumerate()
        .flat_map(|(scene, list)| {
            list.iter().map(move |(id, category, m)| GtMask { scene, id: *id, category: *category, mask: m })
        })
        .collect();
    let preds: Vec<PredMask<'_>> = predictions
        .iter()
        .enumerate()
        .flat_map(|(scene, r)| {
            r.instances.iter().map(move |p| PredMask {
                scene,
                category: p.category,
                confidence: p.confidence,
                mask: &p.mask,
            })
        })
        .collect();
    let categories = (1..=num_categories as u32)
        .into_par_iter()
        .map(|c| {
            Ok(CategoryAp {
                category: c,
                ap25: average_precision(&preds, &gts, 0.25, c)?,
                ap50: average_precision(&preds, &gts, 0.5, c)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let k = categories.len().max(1) as f64;
    Ok(EvalReport {
        mean_ap25: categories.iter().map(|c| c.ap25).sum::<f64>() / k,
        mean_ap50: categories.iter().map(|c| c.ap50).sum::<f64>() / k,
        categories,
        proposals,
        scenes: scenes.len(),
        predictions: preds.len(),
        ground_truth: gts.len(),
    })
}

impl EvalReport {
    /// Flat `metric.name = value` lines; floats use the shortest exact form.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for c in &self.categories {
            let _ = writeln!(s, "ap25.category.{} = {}", c.category, c.ap25);
            let _ = writeln!(s, "ap50.category.{} = {}", c.category, c.ap50);
        }
        let _ = writeln!(s, "ap25.mean = {}", self.mean_ap25);
        let _ = writeln!(s, "ap50.mean = {}", self.mean_ap50);
        if let Some(p) = &self.proposals {
            let _ = writeln!(s, "proposal.miou = {}", p.miou);
            let _ = writeln!(s, "proposal.mean_chamfer = {}", p.mean_chamfer);
            let _ = writeln!(s, "proposal.seeds = {}", p.seeds);
        }
        let _ = writeln!(s, "count.scenes = {}", self.scenes);
        let _ = writeln!(s, "count.predictions = {}", self.predictions);
        let _ = writeln!(s, "count.ground_truth = {}", self.ground_truth);
        for (k, v) in METADATA {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Inverse of [`EvalReport::to_key_values`].
    pub fn from_key_values(text: &str) -> Result<Self, EvalError> {
        let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| EvalError::Parse { line: i + 1, message: "expected `key = value`".into() })?;
            if map.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
                return Err(EvalError::Parse { line: i + 1, message: format!("duplicate key {k}") });
            }
        }
        let mut take = |key: &str| map.remove(key);
        fn num<V: std::str::FromStr>(key: &str, entry: Option<(usize, String)>) -> Result<V, EvalError> {
            let (line, v) = entry.ok_or_else(|| EvalError::Parse { line: 0, message: format!("missing {key}") })?;
            v.parse().map_err(|_| EvalError::Parse { line, message: format!("bad value for {key}: {v}") })
        }
        let mut categories = Vec::new();
        let mut c = 1u32;
        while let Some(e25) = take(&format!("ap25.category.{c}")) {
            let ap25 = num("ap25", Some(e25))?;
            let ap50 = num("ap50", take(&format!("ap50.category.{c}")))?;
            categories.push(CategoryAp { category: c, ap25, ap50 });
            c += 1;
        }
        let mean_ap25 = num("ap25.mean", take("ap25.mean"))?;
        let mean_ap50 = num("ap50.mean", take("ap50.mean"))?;
        let proposals = match take("proposal.miou") {
            None => None,
            Some(e) => Some(ProposalStats {
                miou: num("proposal.miou", Some(e))?,
                mean_chamfer: num("proposal.mean_chamfer", take("proposal.mean_chamfer"))?,
                seeds: num("proposal.seeds", take("proposal.seeds"))?,
            }),
        };
        let report = EvalReport {
            categories,
            mean_ap25,
            mean_ap50,
            proposals,
            scenes: num("count.scenes", take("count.scenes"))?,
            predictions: num("count.predictions", take("count.predictions"))?,
            ground_truth: num("count.ground_truth", take("count.ground_truth"))?,
        };
        for (k, _) in METADATA {
            take(k);
        }
        if let Some((k, (line, _))) = map.into_iter().next() {
            return Err(EvalError::Parse { line, message: format!("unknown key {k}") });
        }
        Ok(report)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>9} {:>9}", "category", "AP@0.25", "AP@0.50");
        for c in &self.categories {
            let _ = writeln!(s, "{:<12} {:>9.4} {:>9.4}", c.category, c.ap25, c.ap50);
        }
        let _ = writeln!(s, "{:<12} {:>9.4} {:>9.4}", "mean", self.mean_ap25, self.mean_ap50);
        let _ = writeln!(s);
        if let Some(p) = &self.proposals {
            let _ = writeln!(s, "{:<22} {:>9.4}", "proposal mIoU", p.miou);
            let _ = writeln!(s, "{:<22} {:>9.6}", "mean chamfer", p.mean_chamfer);
            let _ = writeln!(s, "{:<22} {:>9}", "foreground seeds", p.seeds);
        }
        let _ = writeln!(s, "{:<22} {:>9}", "scenes", self.scenes);
        let _ = writeln!(s, "{:<22} {:>9}", "predictions", self.predictions);
        let _ = writeln!(s, "{:<22} {:>9}", "ground-truth instances", self.ground_truth);
        for (k, v) in METADATA {
            let _ = writeln!(s, "{}: {v}", k.trim_start_matches("meta."));
        }
        s
    }
}
