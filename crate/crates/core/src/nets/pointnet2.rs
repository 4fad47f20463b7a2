use rand::{Rng, RngCore};

use crate::autodiff::{Graph, ParamStore, Real, Tensor, Var};
use crate::geom::{ball_query, farthest_point_sample, three_nn_weights, Point3, PointCloud};

use super::{NetError, SharedMlp};

/// Shape of one set-abstraction layer: `regions` centroids, each pooling up to
/// `group_size` neighbours within `radius` through an MLP of `widths`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaSpec {
    pub regions: usize,
    pub radius: f64,
    pub group_size: usize,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SetAbstraction {
    pub spec: SaSpec,
    pub mlp: SharedMlp,
}

/// A level of the point hierarchy: positions plus one feature row per point.
#[derive(Debug, Clone, Copy)]
pub struct LevelRef<'a> {
    pub points: &'a [Point3],
    pub features: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct SaOutput {
    pub centroid_indices: Vec<usize>,
    pub centroids: Vec<Point3>,
    pub groups: Vec<Vec<usize>>,
    /// `(K, out)` pooled features.
    pub features: Var,
}

impl SetAbstraction {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: SaSpec,
        in_features: usize,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        if spec.regions == 0 || spec.group_size == 0 || !(spec.radius > 0.0) {
            return Err(NetError::Widths(format!("{name}: bad set-abstraction spec {spec:?}")));
        }
        let mut widths = vec![3 + in_features];
        widths.extend_from_slice(&spec.widths);
        let mlp = SharedMlp::new(store, name, &widths, true, rng)?;
        Ok(Self { spec, mlp })
    }

    pub fn out_width(&self) -> usize {
        self.mlp.out_width()
    }

    /// Samples centroids by FPS from `start`, groups neighbours by ball query and
    /// pools each group. Group coordinates are taken relative to the centroid and
    /// divided by the radius. `K` is clipped to the level size.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        level: LevelRef<'_>,
        start: usize,
    ) -> Result<SaOutput, NetError> {
        let n = level.points.len();
        if n == 0 {
            return Err(NetError::Input("set abstraction on an empty level".into()));
        }
        let k = self.spec.regions.min(n);
        let centroid_indices = farthest_point_sample(level.points, k, start % n)?;
        let centroids: Vec<Point3> = centroid_indices.iter().map(|&i| level.points[i]).collect();
        let groups = ball_query(level.points, &centroids, self.spec.radius, self.spec.group_size);
        let s = self.spec.group_size;
        let inv_r = 1.0 / self.spec.radius;
        let mut rel = Vec::with_capacity(k * s * 3);
        for (c, grp) in centroids.iter().zip(&groups) {
            for &i in grp {
                let d = (level.points[i] - *c) * inv_r;
                rel.extend_from_slice(&[d.x, d.y, d.z]);
            }
        }
        let rel = g.constant(Tensor::from_f64(vec![k * s, 3], &rel));
        let input = match level.features {
            Some(f) => {
                let flat: Vec<usize> = groups.iter().flatten().copied().collect();
                let gathered = g.gather(f, &flat)?;
                g.concat(&[rel, gathered], 1)?
            }
            None => rel,
        };
        let h = self.mlp.forward(g, store, input)?;
        let out = self.mlp.out_width();
        let h = g.reshape(h, vec![k, s, out])?;
        let features = g.max_reduce(h, 1)?;
        Ok(SaOutput { centroid_indices, centroids, groups, features })
    }
}

/// Differentiable three-NN interpolation of `(known.len(), C)` features onto
/// `queries`, giving `(queries.len(), C)`.
pub fn interpolate_features<T: Real>(
    g: &mut Graph<T>,
    known: &[Point3],
    known_features: Var,
    queries: &[Point3],
) -> Result<Var, NetError> {
    let shape = g.shape(known_features).to_vec();
    if shape.len() != 2 || shape[0] != known.len() {
        return Err(NetError::Input(format!(
            "interpolation features {shape:?} do not match {} known points",
            known.len()
        )));
    }
    let weights = three_nn_weights(known, queries)?;
    let idx: Vec<usize> = weights.iter().flat_map(|w| w.indices).collect();
    let w: Vec<f64> = weights.iter().flat_map(|w| w.weights).collect();
    let c = shape[1];
    let q = queries.len();
    let gathered = g.gather(known_features, &idx)?;
    let gathered = g.reshape(gathered, vec![q, 3, c])?;
    let w = g.constant(Tensor::from_f64(vec![q, 3, 1], &w));
    let weighted = g.mul(gathered, w)?;
    Ok(g.sum_reduce(weighted, 1)?)
}

/// Upsamples sparse features onto a denser level, concatenates skip features
/// and applies a shared MLP.
#[derive(Debug, Clone)]
pub struct FeaturePropagation {
    pub mlp: SharedMlp,
}

impl FeaturePropagation {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        sparse_width: usize,
        skip_width: usize,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self, NetError> {
        let mut w = vec![sparse_width + skip_width];
        w.extend_from_slice(widths);
        Ok(Self { mlp: SharedMlp::new(store, name, &w, true, rng)? })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        sparse_points: &[Point3],
        sparse_features: Var,
        dense_points: &[Point3],
        skip_features: Option<Var>,
    ) -> Result<Var, NetError> {
        let up = interpolate_features(g, sparse_points, sparse_features, dense_points)?;
        let x = match skip_features {
            Some(s) => g.concat(&[up, s], 1)?,
            None => up,
        };
        self.mlp.forward(g, store, x)
    }
}

/// Widths of the semantic backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub in_features: usize,
    pub sa: Vec<SaSpec>,
    /// One entry per SA layer, coarsest first.
    pub fp: Vec<Vec<usize>>,
    pub classifier_hidden: Vec<usize>,
    /// Logit count, background included.
    pub num_classes: usize,
}

/// PointNet++ segmentation network: SA layers down, FP layers back up, a
/// per-point classifier, and hypercolumn features drawn from every SA level.
#[derive(Debug, Clone)]
pub struct SemanticBackbone {
    pub config: BackboneConfig,
    pub sa: Vec<SetAbstraction>,
    pub fp: Vec<FeaturePropagation>,
    pub classifier: SharedMlp,
}

#[derive(Debug, Clone)]
pub struct BackboneOutput {
    /// `(N, num_classes)`.
    pub logits: Var,
    /// SA level outputs, finest first: centroid positions and `(K_l, C_l)` features.
    pub levels: Vec<(Vec<Point3>, Var)>,
}

impl SemanticBackbone {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: BackboneConfig,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        if config.sa.is_empty() || config.fp.len() != config.sa.len() {
            return Err(NetError::Widths("backbone needs one FP layer per SA layer".into()));
        }
        let mut sa = Vec::new();
        let mut widths = vec![config.in_features];
        for (i, spec) in config.sa.iter().enumerate() {
            let layer = SetAbstraction::new(store, &format!("{name}.sa{i}"), spec.clone(), widths[i], rng)?;
            widths.push(layer.out_width());
            sa.push(layer);
        }
        // fp[0] lifts the coarsest level onto the one below it
        let mut fp = Vec::new();
        let mut sparse = *widths.last().expect("non-empty");
        for (j, w) in config.fp.iter().enumerate() {
            let dense_level = config.sa.len() - 1 - j;
            let layer =
                FeaturePropagation::new(store, &format!("{name}.fp{j}"), sparse, widths[dense_level], w, rng)?;
            sparse = layer.mlp.out_width();
            fp.push(layer);
        }
        let mut cw = vec![sparse];
        cw.extend_from_slice(&config.classifier_hidden);
        cw.push(config.num_classes);
        let classifier = SharedMlp::new(store, &format!("{name}.cls"), &cw, false, rng)?;
        Ok(Self { config, sa, fp, classifier })
    }

    pub fn hypercolumn_width(&self) -> usize {
        self.sa.iter().map(|l| l.out_width()).sum()
    }

    /// Runs the backbone on `points` with `(N, in_features)` input features.
    /// FPS starts at index 0 when `rng` is `None`, otherwise at a random index.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        points: &[Point3],
        features: Var,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<BackboneOutput, NetError> {
        if points.len() < 3 {
            return Err(NetError::Input(format!("backbone needs at least 3 points, got {}", points.len())));
        }
        let mut level_pts: Vec<Vec<Point3>> = vec![points.to_vec()];
        let mut level_feats: Vec<Var> = vec![features];
        for layer in &self.sa {
            let cur = level_pts.last().expect("non-empty");
            let start = match rng.as_deref_mut() {
                Some(r) => r.gen_range(0..cur.len()),
                None => 0,
            };
            let out = layer.forward(g, store, LevelRef { points: cur, features: level_feats.last().copied() }, start)?;
            level_pts.push(out.centroids);
            level_feats.push(out.features);
        }
        let depth = self.sa.len();
        let mut up = level_feats[depth];
        for (j, layer) in self.fp.iter().enumerate() {
            let dense = depth - 1 - j;
            let sparse = dense + 1;
            up = layer.forward(
                g,
                store,
                &level_pts[sparse],
                up,
                &level_pts[dense],
                Some(level_feats[dense]),
            )?;
        }
        let logits = self.classifier.forward(g, store, up)?;
        let levels = level_pts.into_iter().zip(level_feats).skip(1).collect();
        Ok(BackboneOutput { logits, levels })
    }

    /// Hypercolumn at `queries`: every SA level interpolated directly to the
    /// query positions and concatenated.
    pub fn hypercolumn<T: Real>(
        &self,
        g: &mut Graph<T>,
        out: &BackboneOutput,
        queries: &[Point3],
    ) -> Result<Var, NetError> {
        let parts = out
            .levels
            .iter()
            .map(|(pts, f)| interpolate_features(g, pts, *f, queries))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(g.concat(&parts, 1)?)
    }
}

/// Width of [`backbone_input`] rows.
pub const BACKBONE_INPUT_WIDTH: usize = 6;

/// Per-point backbone input: color (zeros when absent) followed by xyz.
pub fn backbone_input(cloud: &PointCloud) -> Vec<f64> {
    let mut out = Vec::with_capacity(cloud.len() * BACKBONE_INPUT_WIDTH);
    for (i, p) in cloud.points.iter().enumerate() {
        out.extend_from_slice(&cloud.color(i).unwrap_or([0.0; 3]));
        out.extend_from_slice(&p.to_array());
    }
    out
}

/// Mean softmax cross entropy of `(N, C)` logits against integer labels.
pub fn semantic_pretrain_loss<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[u32],
) -> Result<Var, NetError> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
        return Err(NetError::Input(format!("logits {shape:?} vs {} labels", labels.len())));
    }
    let c = shape[1];
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(NetError::LabelOutOfRange { label: bad, classes: c });
    }
    let mut onehot = vec![0.0; labels.len() * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l as usize] = 1.0;
    }
    let onehot = g.constant(Tensor::from_f64(shape.clone(), &onehot));
    let lsm = g.log_softmax(logits)?;
    let picked = g.mul(lsm, onehot)?;
    let total = g.sum_all(picked)?;
    Ok(g.scale(total, -1.0 / labels.len() as f64))
}

/// Row-wise argmax of a `(N, C)` tensor (first maximum wins).
pub fn argmax_rows<T: Real>(t: &Tensor<T>) -> Vec<usize> {
    let c = *t.shape().last().unwrap_or(&1);
    t.data()
        .chunks(c.max(1))
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
