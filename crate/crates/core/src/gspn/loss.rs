use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{sigmoid, Graph, ParamStore, Real, Tensor, Var};
use crate::geom::{multi_scale_context, Aabb, ContextSet, Point3, PointCloud};

use super::network::{resample_object, ContextOutputs, Generated, Gspn};
use super::targets::{
    assign_proposal_label, center_target, confidence_epsilon, confidence_targets, ProposalLabel,
};
use super::{kl_diag_graph, proposal_box, sample_latent_graph, GspnError, CENTER_DEGENERATE_DISTANCE};

/// Ground truth attached to a foreground seed.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    /// Every point of the instance.
    pub points: Vec<Point3>,
    /// Fixed-size resample used for batched chamfer and recognition.
    pub samples: Vec<Point3>,
    /// Center of the instance's bounding box.
    pub center: Point3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedTarget {
    pub seed: Point3,
    /// `None` for background seeds.
    pub object: Option<GtObject>,
}

/// Per-term weights; the KL term is further multiplied by the annealing weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub gen: f64,
    pub e: f64,
    pub kl: f64,
    pub center: f64,
    pub obj: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { gen: 1.0, e: 1.0, kl: 1.0, center: 1.0, obj: 1.0 }
    }
}

/// Values of the five loss terms. With unit weights
/// `total = l_gen + l_e + kl_weight·l_kl + l_center + l_obj`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GspnLossBreakdown {
    pub l_gen: f64,
    pub l_e: f64,
    pub l_kl: f64,
    pub l_center: f64,
    pub l_obj: f64,
    pub total: f64,
    pub kl_weight: f64,
}

/// Graph outputs of one training batch.
#[derive(Debug, Clone)]
pub struct TrainForward {
    pub context: ContextOutputs,
    /// Batch rows whose seed lies on an object, in batch order.
    pub fg_rows: Vec<usize>,
    pub recognition: Option<(Var, Var)>,
    /// Shapes decoded from the recognition sample, one per foreground row.
    pub generated: Option<Generated>,
}

fn gaussian_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Encodes every seed and, for foreground seeds, samples `z` from the
/// recognition distribution and decodes a shape.
pub fn training_forward<T: Real, R: Rng + ?Sized>(
    net: &Gspn,
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    contexts: &[ContextSet],
    targets: &[SeedTarget],
    rng: &mut R,
) -> Result<TrainForward, GspnError> {
    if contexts.len() != targets.len() {
        return Err(GspnError::Dimension { expected: contexts.len(), found: targets.len() });
    }
    let context = net.encode(g, store, contexts)?;
    let fg_rows: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].object.is_some()).collect();
    if fg_rows.is_empty() {
        return Ok(TrainForward { context, fg_rows, recognition: None, generated: None });
    }
    let f = fg_rows.len();
    let n = net.config.object_points;
    let mut obj = Vec::with_capacity(f * n * 3);
    for &r in &fg_rows {
        let o = targets[r].object.as_ref().expect("foreground row");
        if o.samples.len() != n {
            return Err(GspnError::Dimension { expected: n, found: o.samples.len() });
        }
        obj.extend(o.samples.iter().flat_map(|p| p.to_array()));
    }
    let objects = g.constant(Tensor::from_f64(vec![f, n, 3], &obj));
    let center = g.gather(context.center, &fg_rows)?;
    let feats = g.gather(context.features, &fg_rows)?;
    let (mu, ls) = net.recognize(g, store, objects, center, feats)?;
    let d = net.config.latent_dim;
    let noise = g.constant(Tensor::from_f64(vec![f, d], &gaussian_noise(rng, f * d)));
    let z = sample_latent_graph(g, mu, ls, noise)?;
    let generated = net.generate(g, store, z, feats, center)?;
    Ok(TrainForward { context, fg_rows, recognition: Some((mu, ls)), generated: Some(generated) })
}

/// Samples `z` from the prior (`noise` drawn) or takes its mean, and decodes
/// a shape for every row.
pub fn prior_generate<T: Real, R: Rng + ?Sized>(
    net: &Gspn,
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    context: &ContextOutputs,
    sample: bool,
    rng: &mut R,
) -> Result<Generated, GspnError> {
    let z = if sample {
        let shape = g.shape(context.prior_mu).to_vec();
        let noise = gaussian_noise(rng, shape.iter().product());
        let noise = g.constant(Tensor::from_f64(shape, &noise));
        sample_latent_graph(g, context.prior_mu, context.prior_log_sigma, noise)?
    } else {
        context.prior_mu
    };
    net.generate(g, store, z, context.features, context.center)
}

/// Rows of a `(B, M, 3)` point tensor and `(B, M)` logits as per-row point
/// lists and probabilities.
pub fn generated_values<T: Real>(g: &Graph<T>, gen: &Generated) -> Vec<(Vec<Point3>, Vec<f64>)> {
    let pts = g.value(gen.points);
    let logits = g.value(gen.confidence_logits);
    let (b, m) = (pts.shape()[0], pts.shape()[1]);
    (0..b)
        .map(|i| {
            let p = &pts.data()[i * m * 3..(i + 1) * m * 3];
            let l = &logits.data()[i * m..(i + 1) * m];
            let points = p
                .chunks(3)
                .map(|c| Point3::new(c[0].as_f64(), c[1].as_f64(), c[2].as_f64()))
                .collect();
            let conf = l.iter().map(|&v| sigmoid(v).as_f64()).collect();
            (points, conf)
        })
        .collect()
}

/// Batched five-term loss. Generation, confidence, KL and center terms are
/// averaged over foreground rows; objectness over rows not labeled ignore.
#[allow(clippy::too_many_arguments)]
pub fn gspn_loss<T: Real>(
    g: &mut Graph<T>,
    fwd: &TrainForward,
    targets: &[SeedTarget],
    labels: &[ProposalLabel],
    kl_weight: f64,
    weights: &LossWeights,
    eps: f64,
) -> Result<(Var, GspnLossBreakdown), GspnError> {
    let b = targets.len();
    if labels.len() != b {
        return Err(GspnError::Dimension { expected: b, found: labels.len() });
    }
    for (t, l) in targets.iter().zip(labels) {
        if *l == ProposalLabel::Positive && t.object.is_none() {
            return Err(GspnError::MissingGroundTruth);
        }
    }
    let zero = || Tensor::<T>::scalar(T::zero());
    let mut terms: Vec<(Var, f64)> = Vec::new();
    let mut bd = GspnLossBreakdown { kl_weight, ..Default::default() };

    if let (Some(gen), Some((q_mu, q_ls))) = (&fwd.generated, fwd.recognition) {
        let rows = &fwd.fg_rows;
        let f = rows.len();
        let objs: Vec<&GtObject> = rows.iter().map(|&r| targets[r].object.as_ref().expect("fg")).collect();
        let n = objs[0].samples.len();
        let gt: Vec<f64> = objs.iter().flat_map(|o| o.samples.iter().flat_map(|p| p.to_array())).collect();
        let gt = g.constant(Tensor::from_f64(vec![f, n, 3], &gt));

        // chamfer, squared distances, mean per side
        let d = g.pairwise_sq_dist(gen.points, gt)?;
        let to_gt = g.min_reduce(d, 2)?;
        let to_gen = g.min_reduce(d, 1)?;
        let a = g.mean_all(to_gt)?;
        let c = g.mean_all(to_gen)?;
        let l_gen = g.add(a, c)?;

        // confidence targets against every point of the object
        let values = generated_values(g, gen);
        let m = values[0].0.len();
        let mut y = Vec::with_capacity(f * m);
        for ((pts, _), o) in values.iter().zip(&objs) {
            y.extend(confidence_targets(pts, &o.points, eps).into_iter().map(|t| if t { 1.0 } else { 0.0 }));
        }
        let y = g.constant(Tensor::from_f64(vec![f, m], &y));
        let l_e = bce_with_logits(g, gen.confidence_logits, y)?;

        let p_mu = g.gather(fwd.context.prior_mu, rows)?;
        let p_ls = g.gather(fwd.context.prior_log_sigma, rows)?;
        let kl = kl_diag_graph(g, q_mu, q_ls, p_mu, p_ls)?;
        let l_kl = g.mean_all(kl)?;

        bd.l_gen = g.value(l_gen).item().as_f64();
        bd.l_e = g.value(l_e).item().as_f64();
        bd.l_kl = g.value(l_kl).item().as_f64();
        terms.push((l_gen, weights.gen));
        terms.push((l_e, weights.e));
        terms.push((l_kl, weights.kl * kl_weight));

        if let (Some(dir), Some(dist)) = (fwd.context.direction, fwd.context.distance) {
            let mut dir_t = Vec::with_capacity(f * 3);
            let mut dist_t = Vec::with_capacity(f);
            let mut mask = Vec::with_capacity(f);
            for (&r, o) in rows.iter().zip(&objs) {
                let (u, n) = center_target(targets[r].seed, o.center);
                dir_t.extend_from_slice(&u.to_array());
                dist_t.push(n);
                mask.push(if n < CENTER_DEGENERATE_DISTANCE { 0.0 } else { 1.0 });
            }
            let dir = g.gather(dir, rows)?;
            let dist = g.gather(dist, rows)?;
            let dir_t = g.constant(Tensor::from_f64(vec![f, 3], &dir_t));
            let dist_t = g.constant(Tensor::from_f64(vec![f, 1], &dist_t));
            let mask = g.constant(Tensor::from_f64(vec![f, 1], &mask));
            let rd = g.sub(dir, dir_t)?;
            let rd = g.smooth_l1(rd);
            let rd = g.mul(rd, mask)?;
            let rn = g.sub(dist, dist_t)?;
            let rn = g.smooth_l1(rn);
            let sd = g.sum_all(rd)?;
            let sn = g.sum_all(rn)?;
            let s = g.add(sd, sn)?;
            let l_center = g.scale(s, 1.0 / f as f64);
            bd.l_center = g.value(l_center).item().as_f64();
            terms.push((l_center, weights.center));
        }
    }

    let obj_rows: Vec<usize> = (0..b).filter(|&i| labels[i] != ProposalLabel::Ignore).collect();
    if !obj_rows.is_empty() {
        let y: Vec<f64> = obj_rows
            .iter()
            .map(|&i| if labels[i] == ProposalLabel::Positive { 1.0 } else { 0.0 })
            .collect();
        let logits = g.gather(fwd.context.objectness, &obj_rows)?;
        let y = g.constant(Tensor::from_f64(vec![obj_rows.len(), 1], &y));
        let l_obj = bce_with_logits(g, logits, y)?;
        bd.l_obj = g.value(l_obj).item().as_f64();
        terms.push((l_obj, weights.obj));
    }

    let mut total = g.constant(zero());
    for (v, w) in terms {
        let s = g.scale(v, w);
        total = g.add(total, s)?;
    }
    bd.total = g.value(total).item().as_f64();
    Ok((total, bd))
}

/// Mean binary cross entropy of logits against 0/1 targets, computed as
/// `softplus(x) − x·y`.
pub fn bce_with_logits<T: Real>(g: &mut Graph<T>, logits: Var, targets: Var) -> Result<Var, GspnError> {
    let sp = g.softplus(logits);
    let xy = g.mul(logits, targets)?;
    let per = g.sub(sp, xy)?;
    Ok(g.mean_all(per)?)
}

/// Per-scene ground truth used by GSPN training.
#[derive(Debug, Clone)]
pub struct SceneSupervision {
    pub gt_boxes: Vec<Aabb>,
    /// Instance points per instance id, aligned with `gt_boxes`.
    pub instance_points: Vec<Vec<Point3>>,
    pub instance_ids: Vec<u32>,
    pub eps: f64,
}

impl SceneSupervision {
    pub fn new(scene: &PointCloud, eps_fraction: f64) -> Self {
        let inst = scene.instances();
        let gt_boxes: Vec<Aabb> = inst.iter().map(|i| i.bbox).collect();
        let eps = confidence_epsilon(&gt_boxes, eps_fraction);
        Self {
            instance_points: inst.iter().map(|i| i.indices.iter().map(|&j| scene.points[j]).collect()).collect(),
            instance_ids: inst.iter().map(|i| i.id).collect(),
            gt_boxes,
            eps,
        }
    }

    /// Target for a seed at scene index `i`; samples drawn from `rng`.
    pub fn seed_target<R: Rng + ?Sized>(
        &self,
        scene: &PointCloud,
        i: usize,
        object_points: usize,
        rng: &mut R,
    ) -> SeedTarget {
        let id = scene.instance_id(i);
        let object = self.instance_ids.iter().position(|&v| v == id && id != 0).map(|k| GtObject {
            samples: resample_object(&self.instance_points[k], object_points, rng),
            points: self.instance_points[k].clone(),
            center: self.gt_boxes[k].center(),
        });
        SeedTarget { seed: scene.points[i], object }
    }
}

/// Options of one GSPN training step.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub kl_weight: f64,
    pub weights: LossWeights,
    pub roi_margin: f64,
}

/// Builds contexts and targets for `seeds`, runs the network, labels prior
/// proposals for objectness and returns the loss.
pub fn scene_training_loss<T: Real, R: Rng + ?Sized>(
    net: &Gspn,
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    scene: &PointCloud,
    sup: &SceneSupervision,
    seeds: &[usize],
    opts: &StepOptions,
    rng: &mut R,
) -> Result<(Var, GspnLossBreakdown), GspnError> {
    let cfg = &net.config;
    let mut contexts = Vec::with_capacity(seeds.len());
    let mut targets = Vec::with_capacity(seeds.len());
    for &i in seeds {
        contexts.push(multi_scale_context(scene, scene.points[i], &cfg.radii, cfg.points_per_scale, rng)?);
        targets.push(sup.seed_target(scene, i, cfg.object_points, rng));
    }
    let fwd = training_forward(net, g, store, &contexts, &targets, rng)?;
    let prior = prior_generate(net, g, store, &fwd.context, true, rng)?;
    let labels: Vec<ProposalLabel> = generated_values(g, &prior)
        .iter()
        .zip(&targets)
        .map(|((pts, conf), t)| {
            let b = proposal_box(pts, conf, opts.roi_margin);
            assign_proposal_label(b.as_ref(), &sup.gt_boxes, t.object.is_some())
        })
        .collect();
    gspn_loss(g, &fwd, &targets, &labels, opts.kl_weight, &opts.weights, sup.eps)
}
