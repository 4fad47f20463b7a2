use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Real, Tensor, Var};
use crate::nets::{pointnet_encode, SharedMlp};

use super::{RoiSample, RpnError};

/// Widths of the three detection heads. Hidden lists exclude input and output.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    /// Seed feature width `F`; head inputs are `3 + F` per point.
    pub in_features: usize,
    pub num_categories: usize,
    pub trunk: Vec<usize>,
    pub cls_hidden: Vec<usize>,
    pub box_hidden: Vec<usize>,
    pub mask_local: Vec<usize>,
    pub mask_global: Vec<usize>,
    pub mask_hidden: Vec<usize>,
}

impl HeadConfig {
    pub fn validate(&self) -> Result<(), RpnError> {
        let lists = [&self.trunk, &self.mask_local, &self.mask_global];
        if self.num_categories == 0 || self.in_features == 0 || lists.iter().any(|l| l.is_empty()) {
            return Err(RpnError::Config("categories, features, trunk and mask MLPs must be non-empty".into()));
        }
        Ok(())
    }
}

/// Classification, box-refinement and mask heads.
///
/// Classification and box heads share a PointNet trunk (shared MLP + max
/// pool). The mask head concatenates per-point local features with a pooled
/// global feature and predicts one logit per point and category.
#[derive(Debug, Clone)]
pub struct DetectionHeads {
    pub config: HeadConfig,
    pub trunk: SharedMlp,
    pub cls: SharedMlp,
    pub boxes: SharedMlp,
    pub mask_local: SharedMlp,
    pub mask_global: SharedMlp,
    pub mask_out: SharedMlp,
}

/// Head outputs for a batch of `B` RoIs.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    /// `(B, C + 1)`, column 0 is background.
    pub cls: Var,
    /// `(B, C · 6)`, category `c` (1-based) at columns `6(c−1)..6c`.
    pub boxes: Var,
    /// `(P, N, C)` mask logits for the RoIs that reach the mask head.
    pub masks: Option<Var>,
}

fn widths(first: usize, hidden: &[usize], last: Option<usize>) -> Vec<usize> {
    let mut w = vec![first];
    w.extend_from_slice(hidden);
    w.extend(last);
    w
}

impl DetectionHeads {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: HeadConfig,
        rng: &mut R,
    ) -> Result<Self, RpnError> {
        config.validate()?;
        let d = 3 + config.in_features;
        let c = config.num_categories;
        let trunk = SharedMlp::new(store, &format!("{name}.trunk"), &widths(d, &config.trunk, None), true, rng)?;
        let t = trunk.out_width();
        let cls = SharedMlp::new(store, &format!("{name}.cls"), &widths(t, &config.cls_hidden, Some(c + 1)), false, rng)?;
        let boxes = SharedMlp::new(store, &format!("{name}.box"), &widths(t, &config.box_hidden, Some(6 * c)), false, rng)?;
        let mask_local =
            SharedMlp::new(store, &format!("{name}.mask.local"), &widths(d, &config.mask_local, None), true, rng)?;
        let l = mask_local.out_width();
        let mask_global =
            SharedMlp::new(store, &format!("{name}.mask.global"), &widths(l, &config.mask_global, None), true, rng)?;
        let gw = mask_global.out_width();
        let mask_out =
            SharedMlp::new(store, &format!("{name}.mask.out"), &widths(l + gw, &config.mask_hidden, Some(c)), false, rng)?;
        Ok(Self { config, trunk, cls, boxes, mask_local, mask_global, mask_out })
    }

    /// `(B, C+1)` class logits and `(B, 6C)` box deltas from `(B, N, 3+F)` input.
    pub fn classify<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<(Var, Var), RpnError> {
        let pooled = pointnet_encode(g, store, &self.trunk, x)?;
        let cls = self.cls.forward(g, store, pooled)?;
        let boxes = self.boxes.forward(g, store, pooled)?;
        Ok((cls, boxes))
    }

    /// `(B, N, C)` mask logits from `(B, N, 3+F)` input.
    pub fn segment<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var, RpnError> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(RpnError::Config(format!("mask head input must be (B, N, d), got {shape:?}")));
        }
        let (b, n) = (shape[0], shape[1]);
        let local = self.mask_local.forward(g, store, x)?;
        let global = pointnet_encode(g, store, &self.mask_global, local)?;
        let gw = self.mask_global.out_width();
        let global = g.reshape(global, vec![b, 1, gw])?;
        let global = g.broadcast(global, vec![b, n, gw])?;
        let joined = g.concat(&[local, global], 2)?;
        Ok(self.mask_out.forward(g, store, joined)?)
    }

    /// All three heads on the same samples.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<HeadOutput, RpnError> {
        let (cls, boxes) = self.classify(g, store, x)?;
        let masks = self.segment(g, store, x)?;
        Ok(HeadOutput { cls, boxes, masks: Some(masks) })
    }
}

/// Stacks samples into a `(B, N, 3 + F)` tensor: normalized coordinates then features.
pub fn head_input<T: Real>(samples: &[&RoiSample]) -> Result<Tensor<T>, RpnError> {
    let first = samples.first().ok_or(RpnError::NoRois)?;
    let (n, w) = (first.indices.len(), first.width);
    let mut data = Vec::with_capacity(samples.len() * n * (3 + w));
    for s in samples {
        if s.indices.len() != n || s.width != w {
            return Err(RpnError::Config("RoI samples differ in size".into()));
        }
        for (p, f) in s.normalized.iter().zip(s.features.chunks(w.max(1))) {
            data.extend_from_slice(&p.to_array());
            data.extend_from_slice(f);
        }
    }
    Ok(Tensor::from_f64(vec![samples.len(), n, 3 + w], &data))
}

/// Supervision for one RoI of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiTarget {
    /// 0 for background, otherwise the matched gt category.
    pub category: u32,
    /// Box delta target (positives only).
    pub delta: Option<[f64; 6]>,
    /// Per-point membership of the mask-head sample (positives only).
    pub mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpnLossBreakdown {
    pub l_cls: f64,
    pub l_box: f64,
    pub l_mask: f64,
    pub total: f64,
    pub positives: usize,
    pub rois: usize,
}

/// `L = L_cls + L_box + L_mask`.
///
/// `L_cls` is the mean cross entropy over all RoIs. `L_box` is the mean over
/// positives of the summed smooth-L1 error on the gt category's six deltas.
/// `L_mask` is the mean over positives of the mean per-point binary cross
/// entropy on the gt category's mask logits; `out.masks` holds one row per
/// RoI carrying a mask target, in target order.
pub fn rpointnet_loss<T: Real>(
    g: &mut Graph<T>,
    out: &HeadOutput,
    targets: &[RoiTarget],
) -> Result<(Var, RpnLossBreakdown), RpnError> {
    if targets.is_empty() {
        return Err(RpnError::NoRois);
    }
    let b = targets.len();
    let cw = g.shape(out.cls)[1];
    let c = cw - 1;
    for t in targets {
        if t.category as usize > c {
            return Err(RpnError::Category { category: t.category, categories: c });
        }
    }

    let mut onehot = vec![0.0; b * cw];
    for (i, t) in targets.iter().enumerate() {
        onehot[i * cw + t.category as usize] = 1.0;
    }
    let onehot = g.constant(Tensor::from_f64(vec![b, cw], &onehot));
    let lsm = g.log_softmax(out.cls)?;
    let picked = g.mul(lsm, onehot)?;
    let ce = g.sum_all(picked)?;
    let l_cls = g.scale(ce, -1.0 / b as f64);

    let box_rows: Vec<(usize, u32, [f64; 6])> = targets
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.delta.filter(|_| t.category > 0).map(|d| (i, t.category, d)))
        .collect();
    let l_box = if box_rows.is_empty() {
        g.constant(Tensor::scalar(T::zero()))
    } else {
        // select the gt category's deltas with a one-hot weight and sum over categories
        let rows: Vec<usize> = box_rows.iter().map(|r| r.0).collect();
        let pred = g.gather(out.boxes, &rows)?;
        let p = rows.len();
        let pred = g.reshape(pred, vec![p, c, 6])?;
        let mut sel = vec![0.0; p * c];
        let mut tgt = vec![0.0; p * 6];
        for (k, (_, cat, d)) in box_rows.iter().enumerate() {
            sel[k * c + *cat as usize - 1] = 1.0;
            tgt[k * 6..k * 6 + 6].copy_from_slice(d);
        }
        let sel = g.constant(Tensor::from_f64(vec![p, c, 1], &sel));
        let chosen = g.mul(pred, sel)?;
        let chosen = g.sum_reduce(chosen, 1)?;
        let tgt = g.constant(Tensor::from_f64(vec![p, 6], &tgt));
        let diff = g.sub(chosen, tgt)?;
        let sl = g.smooth_l1(diff);
        let s = g.sum_all(sl)?;
        g.scale(s, 1.0 / p as f64)
    };

    let mask_rows: Vec<(u32, &Vec<bool>)> = targets
        .iter()
        .filter_map(|t| t.mask.as_ref().filter(|_| t.category > 0).map(|m| (t.category, m)))
        .collect();
    let l_mask = match (mask_rows.is_empty(), out.masks) {
        (true, _) => g.constant(Tensor::scalar(T::zero())),
        (false, None) => return Err(RpnError::Config("mask targets given without mask logits".into())),
        (false, Some(masks)) => {
            let shape = g.shape(masks).to_vec();
            let (p, n) = (shape[0], shape[1]);
            if p != mask_rows.len() || shape[2] != c || mask_rows.iter().any(|(_, m)| m.len() != n) {
                return Err(RpnError::Config(format!("mask logits {shape:?} do not match {} targets", mask_rows.len())));
            }
            let mut sel = vec![0.0; p * c];
            let mut y = vec![0.0; p * n];
            for (k, (cat, m)) in mask_rows.iter().enumerate() {
                sel[k * c + *cat as usize - 1] = 1.0;
                for (j, &v) in m.iter().enumerate() {
                    y[k * n + j] = if v { 1.0 } else { 0.0 };
                }
            }
            let sel = g.constant(Tensor::from_f64(vec![p, 1, c], &sel));
            let chosen = g.mul(masks, sel)?;
            let logits = g.sum_reduce(chosen, 2)?;
            let y = g.constant(Tensor::from_f64(vec![p, n], &y));
            // mean over points then positives equals the mean over all entries
            crate::gspn::bce_with_logits(g, logits, y)?
        }
    };

    let sum = g.add(l_cls, l_box)?;
    let total = g.add(sum, l_mask)?;
    let breakdown = RpnLossBreakdown {
        l_cls: g.value(l_cls).item().as_f64(),
        l_box: g.value(l_box).item().as_f64(),
        l_mask: g.value(l_mask).item().as_f64(),
        total: g.value(total).item().as_f64(),
        positives: box_rows.len(),
        rois: b,
    };
    Ok((total, breakdown))
}
