use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Real, Tensor, Var};
use crate::geom::{ContextSet, Point3};
use crate::nets::{pointnet_encode, Linear, SharedMlp};

use super::GspnError;

/// Widths and sampling sizes of the proposal network.
#[derive(Debug, Clone, PartialEq)]
pub struct GspnConfig {
    /// Context crop radii, strictly increasing.
    pub radii: Vec<f64>,
    pub points_per_scale: usize,
    /// Per-scale context PointNet widths (input is 3 coordinates + 3 colors).
    pub context_widths: Vec<usize>,
    /// Predict the object center; when false the context is centered on the seed.
    pub center_prediction: bool,
    pub center_hidden: Vec<usize>,
    pub prior_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Points each ground-truth object is resampled to.
    pub object_points: usize,
    pub object_widths: Vec<usize>,
    pub recognition_hidden: Vec<usize>,
    pub fc_hidden: Vec<usize>,
    pub fc_points: usize,
    /// The structured branch emits `grid_side²` points.
    pub grid_side: usize,
    /// First entry is the joint width of the `[z, f]` and `(u, v)` projections.
    pub grid_hidden: Vec<usize>,
    pub objectness_hidden: Vec<usize>,
}

impl GspnConfig {
    pub fn scales(&self) -> usize {
        self.radii.len()
    }

    /// Width of `f_ĉ` (without the appended center).
    pub fn context_feature_width(&self) -> usize {
        self.scales() * self.context_widths.last().copied().unwrap_or(0)
    }

    pub fn generated_points(&self) -> usize {
        self.fc_points + self.grid_side * self.grid_side
    }

    /// Generated shapes are emitted in units of the largest context radius.
    pub fn shape_scale(&self) -> f64 {
        self.radii.last().copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), GspnError> {
        let bad = |m: &str| Err(GspnError::Config(m.to_string()));
        if self.radii.is_empty() || self.radii[0] <= 0.0 || self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return bad("radii must be positive and strictly increasing");
        }
        let lists = [
            ("context_widths", &self.context_widths),
            ("center_hidden", &self.center_hidden),
            ("prior_hidden", &self.prior_hidden),
            ("object_widths", &self.object_widths),
            ("recognition_hidden", &self.recognition_hidden),
            ("fc_hidden", &self.fc_hidden),
            ("grid_hidden", &self.grid_hidden),
            ("objectness_hidden", &self.objectness_hidden),
        ];
        for (name, l) in lists {
            if l.is_empty() || l.contains(&0) {
                return Err(GspnError::Config(format!("{name} must be a non-empty list of positive widths")));
            }
        }
        if self.points_per_scale == 0
            || self.latent_dim == 0
            || self.object_points == 0
            || self.fc_points + self.grid_side == 0
        {
            return bad("point counts and latent width must be positive");
        }
        Ok(())
    }
}

fn with_input(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w
}

#[derive(Debug, Clone)]
struct CenterNet {
    encoders: Vec<SharedMlp>,
    trunk: SharedMlp,
    direction: Linear,
    distance: Linear,
}

/// Context encoders, center/prior/recognition/generation networks and the
/// objectness head. Parameters live in a caller-owned [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gspn {
    pub config: GspnConfig,
    center: Option<CenterNet>,
    encoders: Vec<SharedMlp>,
    prior_trunk: SharedMlp,
    prior_mu: Linear,
    prior_log_sigma: Linear,
    object_encoder: SharedMlp,
    recog_trunk: SharedMlp,
    recog_mu: Linear,
    recog_log_sigma: Linear,
    fc_trunk: SharedMlp,
    fc_xyz: Linear,
    fc_conf: Linear,
    grid_zf: Option<Linear>,
    grid_uv: Option<Linear>,
    grid_trunk: Option<SharedMlp>,
    grid_xyz: Option<Linear>,
    grid_conf: Option<Linear>,
    grid_cells: Vec<f64>,
    obj_trunk: SharedMlp,
    obj_head: Linear,
}

/// Batched outputs shared by training and proposal generation.
#[derive(Debug, Clone)]
pub struct ContextOutputs {
    /// Predicted centers `(B, 3)` in world coordinates.
    pub center: Var,
    /// Unit directions `(B, 3)` and distances `(B, 1)` when centers are predicted.
    pub direction: Option<Var>,
    pub distance: Option<Var>,
    /// Instance-sensitive features `(B, K·w)`.
    pub features: Var,
    pub prior_mu: Var,
    pub prior_log_sigma: Var,
    /// Objectness logits `(B, 1)`.
    pub objectness: Var,
}

/// Generated shapes in world coordinates `(B, M, 3)` and confidence logits `(B, M)`.
#[derive(Debug, Clone, Copy)]
pub struct Generated {
    pub points: Var,
    pub confidence_logits: Var,
}

impl Gspn {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: GspnConfig,
        rng: &mut R,
    ) -> Result<Self, GspnError> {
        config.validate()?;
        let k = config.scales();
        let ctx_in = with_input(6, &config.context_widths);
        let make_encoders = |store: &mut ParamStore<T>, rng: &mut R, prefix: &str| {
            (0..k)
                .map(|i| SharedMlp::new(store, &format!("{name}.{prefix}{i}"), &ctx_in, true, rng))
                .collect::<Result<Vec<_>, _>>()
        };
        let f = config.context_feature_width();
        let center = if config.center_prediction {
            let encoders = make_encoders(store, rng, "center.enc")?;
            let trunk = SharedMlp::new(store, &format!("{name}.center.mlp"), &with_input(f, &config.center_hidden), true, rng)?;
            let h = trunk.out_width();
            Some(CenterNet {
                encoders,
                trunk,
                direction: Linear::new(store, &format!("{name}.center.dir"), h, 3, false, rng)?,
                distance: Linear::new(store, &format!("{name}.center.dist"), h, 1, false, rng)?,
            })
        } else {
            None
        };
        let encoders = make_encoders(store, rng, "ctx.enc")?;
        let d = config.latent_dim;
        let prior_trunk = SharedMlp::new(store, &format!("{name}.prior.mlp"), &with_input(f, &config.prior_hidden), true, rng)?;
        let ph = prior_trunk.out_width();
        let prior_mu = Linear::new(store, &format!("{name}.prior.mu"), ph, d, false, rng)?;
        let prior_log_sigma = Linear::new(store, &format!("{name}.prior.logsigma"), ph, d, false, rng)?;
        let object_encoder = SharedMlp::new(store, &format!("{name}.recog.enc"), &with_input(3, &config.object_widths), true, rng)?;
        let ow = object_encoder.out_width();
        let recog_trunk = SharedMlp::new(store, &format!("{name}.recog.mlp"), &with_input(ow + f, &config.recognition_hidden), true, rng)?;
        let rh = recog_trunk.out_width();
        let recog_mu = Linear::new(store, &format!("{name}.recog.mu"), rh, d, false, rng)?;
        let recog_log_sigma = Linear::new(store, &format!("{name}.recog.logsigma"), rh, d, false, rng)?;
        let fc_trunk = SharedMlp::new(store, &format!("{name}.gen.fc"), &with_input(d + f, &config.fc_hidden), true, rng)?;
        let fh = fc_trunk.out_width();
        let m_fc = config.fc_points;
        let fc_xyz = Linear::new(store, &format!("{name}.gen.fc.xyz"), fh, m_fc.max(1) * 3, false, rng)?;
        let fc_conf = Linear::new(store, &format!("{name}.gen.fc.conf"), fh, m_fc.max(1), false, rng)?;
        let side = config.grid_side;
        let (mut grid_zf, mut grid_uv, mut grid_trunk, mut grid_xyz, mut grid_conf) = (None, None, None, None, None);
        let mut grid_cells = Vec::new();
        if side > 0 {
            let hj = config.grid_hidden[0];
            grid_zf = Some(Linear::new(store, &format!("{name}.gen.grid.zf"), d + f, hj, true, rng)?);
            grid_uv = Some(Linear::new(store, &format!("{name}.gen.grid.uv"), 2, hj, true, rng)?);
            let mut last = hj;
            if config.grid_hidden.len() > 1 {
                let t = SharedMlp::new(store, &format!("{name}.gen.grid.mlp"), &config.grid_hidden, true, rng)?;
                last = t.out_width();
                grid_trunk = Some(t);
            }
            grid_xyz = Some(Linear::new(store, &format!("{name}.gen.grid.xyz"), last, 3, false, rng)?);
            grid_conf = Some(Linear::new(store, &format!("{name}.gen.grid.conf"), last, 1, false, rng)?);
            let step = |i: usize| if side == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (side - 1) as f64 };
            for i in 0..side {
                for j in 0..side {
                    grid_cells.extend_from_slice(&[step(i), step(j)]);
                }
            }
        }
        let obj_trunk = SharedMlp::new(store, &format!("{name}.obj.mlp"), &with_input(f, &config.objectness_hidden), true, rng)?;
        let obj_head = Linear::new(store, &format!("{name}.obj.head"), obj_trunk.out_width(), 1, false, rng)?;
        Ok(Self {
            config,
            center,
            encoders,
            prior_trunk,
            prior_mu,
            prior_log_sigma,
            object_encoder,
            recog_trunk,
            recog_mu,
            recog_log_sigma,
            fc_trunk,
            fc_xyz,
            fc_conf,
            grid_zf,
            grid_uv,
            grid_trunk,
            grid_xyz,
            grid_conf,
            grid_cells,
            obj_trunk,
            obj_head,
        })
    }

    /// Runs K context PointNets on `contexts`, each scale expressed relative to
    /// `reference` `(B, 3)` and divided by its radius; returns `(B, K·w)`.
    fn encode_contexts<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        encoders: &[SharedMlp],
        contexts: &[ContextSet],
        reference: Var,
    ) -> Result<Var, GspnError> {
        let b = contexts.len();
        let p = self.config.points_per_scale;
        let reference = g.reshape(reference, vec![b, 1, 3])?;
        let mut feats = Vec::with_capacity(encoders.len());
        for (k, enc) in encoders.iter().enumerate() {
            let mut pos = Vec::with_capacity(b * p * 3);
            let mut col = Vec::with_capacity(b * p * 3);
            for c in contexts {
                let scale = c.scales.get(k).ok_or(GspnError::ContextShape)?;
                if scale.points.len() != p {
                    return Err(GspnError::ContextShape);
                }
                for (i, q) in scale.points.iter().enumerate() {
                    pos.extend_from_slice(&q.to_array());
                    col.extend_from_slice(&scale.colors.as_ref().map_or([0.0; 3], |cs| cs[i]));
                }
            }
            let pos = g.constant(Tensor::from_f64(vec![b, p, 3], &pos));
            let col = g.constant(Tensor::from_f64(vec![b, p, 3], &col));
            let rel = g.sub(pos, reference)?;
            let rel = g.scale(rel, 1.0 / self.config.radii[k]);
            let x = g.concat(&[rel, col], 2)?;
            feats.push(pointnet_encode(g, store, enc, x)?);
        }
        Ok(g.concat(&feats, 1)?)
    }

    /// Center prediction, centered-context encoding, prior and objectness for a
    /// batch of seeds (each with its multi-scale context).
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        contexts: &[ContextSet],
    ) -> Result<ContextOutputs, GspnError> {
        if contexts.is_empty() {
            return Err(GspnError::EmptyBatch);
        }
        let b = contexts.len();
        let seeds: Vec<f64> = contexts.iter().flat_map(|c| c.seed.to_array()).collect();
        let seeds = g.constant(Tensor::from_f64(vec![b, 3], &seeds));
        let (center, direction, distance) = match &self.center {
            Some(net) => {
                let f = self.encode_contexts(g, store, &net.encoders, contexts, seeds)?;
                let h = net.trunk.forward(g, store, f)?;
                let raw = net.direction.forward(g, store, h)?;
                let sq = g.square(raw);
                let n2 = g.sum_reduce(sq, 1)?;
                let n2 = g.reshape(n2, vec![b, 1])?;
                let n2 = g.add_scalar(n2, super::DIRECTION_EPS * super::DIRECTION_EPS);
                let norm = g.sqrt(n2);
                let dir = g.div(raw, norm)?;
                let dist_raw = net.distance.forward(g, store, h)?;
                let dist = g.softplus(dist_raw);
                let offset = g.mul(dir, dist)?;
                let t = g.add(seeds, offset)?;
                (t, Some(dir), Some(dist))
            }
            None => (seeds, None, None),
        };
        let features = self.encode_contexts(g, store, &self.encoders, contexts, center)?;
        let h = self.prior_trunk.forward(g, store, features)?;
        let prior_mu = self.prior_mu.forward(g, store, h)?;
        let prior_log_sigma = self.prior_log_sigma.forward(g, store, h)?;
        let oh = self.obj_trunk.forward(g, store, features)?;
        let objectness = self.obj_head.forward(g, store, oh)?;
        Ok(ContextOutputs { center, direction, distance, features, prior_mu, prior_log_sigma, objectness })
    }

    /// Recognition distribution from world-frame objects `(B, G, 3)` centered
    /// at `center` `(B, 3)`.
    pub fn recognize<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        objects: Var,
        center: Var,
        features: Var,
    ) -> Result<(Var, Var), GspnError> {
        let b = g.shape(center)[0];
        let c = g.reshape(center, vec![b, 1, 3])?;
        let rel = g.sub(objects, c)?;
        let rel = g.scale(rel, 1.0 / self.config.shape_scale());
        let fx = pointnet_encode(g, store, &self.object_encoder, rel)?;
        let x = g.concat(&[fx, features], 1)?;
        let h = self.recog_trunk.forward(g, store, x)?;
        let mu = self.recog_mu.forward(g, store, h)?;
        let ls = self.recog_log_sigma.forward(g, store, h)?;
        Ok((mu, ls))
    }

    /// Decodes latent codes `(B, d)` with features `(B, F)` into world-frame
    /// shapes shifted by `center` `(B, 3)`.
    pub fn generate<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        z: Var,
        features: Var,
        center: Var,
    ) -> Result<Generated, GspnError> {
        let b = g.shape(z)[0];
        let zf = g.concat(&[z, features], 1)?;
        let mut pts = Vec::new();
        let mut confs = Vec::new();
        if self.config.fc_points > 0 {
            let m = self.config.fc_points;
            let h = self.fc_trunk.forward(g, store, zf)?;
            let xyz = self.fc_xyz.forward(g, store, h)?;
            pts.push(g.reshape(xyz, vec![b, m, 3])?);
            confs.push(self.fc_conf.forward(g, store, h)?);
        }
        if let (Some(zf_l), Some(uv_l), Some(xyz_l), Some(conf_l)) =
            (&self.grid_zf, &self.grid_uv, &self.grid_xyz, &self.grid_conf)
        {
            let m = self.config.grid_side * self.config.grid_side;
            let a = zf_l.forward(g, store, zf)?;
            let hj = zf_l.out_width;
            let a = g.reshape(a, vec![b, 1, hj])?;
            let uv = g.constant(Tensor::from_f64(vec![m, 2], &self.grid_cells));
            let c = uv_l.forward(g, store, uv)?;
            let joint = g.add(a, c)?;
            let mut h = g.relu(joint);
            if let Some(t) = &self.grid_trunk {
                h = t.forward(g, store, h)?;
            }
            pts.push(xyz_l.forward(g, store, h)?);
            let conf = conf_l.forward(g, store, h)?;
            confs.push(g.reshape(conf, vec![b, m])?);
        }
        let local = if pts.len() == 1 { pts[0] } else { g.concat(&pts, 1)? };
        let confidence_logits = if confs.len() == 1 { confs[0] } else { g.concat(&confs, 1)? };
        let local = g.scale(local, self.config.shape_scale());
        let c = g.reshape(center, vec![b, 1, 3])?;
        let points = g.add(local, c)?;
        Ok(Generated { points, confidence_logits })
    }
}

/// `n` points of `object`: a sorted subsample without replacement when the
/// object is large enough, otherwise every point plus random duplicates.
pub fn resample_object<R: Rng + ?Sized>(object: &[Point3], n: usize, rng: &mut R) -> Vec<Point3> {
    if object.is_empty() {
        return Vec::new();
    }
    if object.len() >= n {
        let mut idx = rand::seq::index::sample(rng, object.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| object[i]).collect()
    } else {
        let mut out = object.to_vec();
        while out.len() < n {
            out.push(object[rng.gen_range(0..object.len())]);
        }
        out
    }
}
