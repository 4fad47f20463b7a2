use rand::Rng;

use crate::autodiff::{sigmoid, Graph, ParamStore, Real};
use crate::geom::{multi_scale_context, Point3, PointCloud};

use super::loss::{generated_values, prior_generate};
use super::network::Gspn;
use super::GspnError;

/// Whether proposals sample the prior or use its mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposeMode {
    /// `z` drawn from the prior.
    Train,
    /// `z` is the prior mean.
    Infer,
}

/// A generated object hypothesis for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub seed_index: usize,
    /// Generated points `x̃` in world coordinates.
    pub points: Vec<Point3>,
    /// Per-point confidence `e` in [0, 1].
    pub confidence: Vec<f64>,
    pub objectness: f64,
    /// Predicted object center `t`.
    pub center: Point3,
    /// `f_ĉ` followed by the three coordinates of `t`.
    pub context_feature: Vec<f64>,
}

impl Proposal {
    /// `f_ĉ` without the appended center.
    pub fn instance_feature(&self) -> &[f64] {
        &self.context_feature[..self.context_feature.len().saturating_sub(3)]
    }
}

/// Seeds processed per graph.
pub const PROPOSE_CHUNK: usize = 64;

/// Generates one proposal per seed and keeps the `pre_nms_limit` with the
/// highest objectness, ordered by descending objectness (lower seed position
/// first on ties).
///
/// Contexts are drawn from `rng` seed by seed, then (in train mode) the latent
/// noise chunk by chunk, so results depend only on the inputs and the stream.
pub fn propose<T: Real, R: Rng + ?Sized>(
    net: &Gspn,
    store: &ParamStore<T>,
    scene: &PointCloud,
    seeds: &[usize],
    rng: &mut R,
    mode: ProposeMode,
    pre_nms_limit: usize,
) -> Result<Vec<Proposal>, GspnError> {
    let cfg = &net.config;
    if let Some(&bad) = seeds.iter().find(|&&s| s >= scene.len()) {
        return Err(GspnError::SeedOutOfRange { index: bad, len: scene.len() });
    }
    let contexts = seeds
        .iter()
        .map(|&i| multi_scale_context(scene, scene.points[i], &cfg.radii, cfg.points_per_scale, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(seeds.len());
    for (chunk_i, chunk) in contexts.chunks(PROPOSE_CHUNK).enumerate() {
        let mut g = Graph::<T>::inference();
        let ctx = net.encode(&mut g, store, chunk)?;
        let gen = prior_generate(net, &mut g, store, &ctx, mode == ProposeMode::Train, rng)?;
        let shapes = generated_values(&g, &gen);
        let centers = g.value(ctx.center).to_f64_vec();
        let feats = g.value(ctx.features);
        let fw = feats.shape()[1];
        let obj = g.value(ctx.objectness).data();
        for (j, (points, confidence)) in shapes.into_iter().enumerate() {
            let center = Point3::new(centers[3 * j], centers[3 * j + 1], centers[3 * j + 2]);
            let mut context_feature: Vec<f64> =
                feats.data()[j * fw..(j + 1) * fw].iter().map(|v| v.as_f64()).collect();
            context_feature.extend_from_slice(&center.to_array());
            out.push(Proposal {
                seed_index: seeds[chunk_i * PROPOSE_CHUNK + j],
                points,
                confidence,
                objectness: sigmoid(obj[j]).as_f64(),
                center,
                context_feature,
            });
        }
    }
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| out[b].objectness.total_cmp(&out[a].objectness).then(a.cmp(&b)));
    order.truncate(pre_nms_limit);
    let mut slots: Vec<Option<Proposal>> = out.into_iter().map(Some).collect();
    Ok(order.into_iter().map(|i| slots[i].take().expect("each index once")).collect())
}
