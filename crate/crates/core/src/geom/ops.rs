use rand::Rng;

use super::{Aabb, GeomError, Point3, PointCloud};

/// Stabilizer added to distances before inverting them in three-NN interpolation.
pub const INTERP_DELTA: f64 = 1e-8;

/// Symmetric chamfer distance with squared Euclidean distances and mean
/// aggregation on each side.
pub fn chamfer_distance(a: &[Point3], b: &[Point3]) -> Result<f64, GeomError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeomError::EmptyPointSet);
    }
    let one_side = |from: &[Point3], to: &[Point3]| -> f64 {
        from.iter()
            .map(|p| to.iter().map(|q| p.distance_squared(*q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    Ok(one_side(a, b) + one_side(b, a))
}

/// Index of the point nearest to `q` (lowest index on ties).
pub fn nearest_index(points: &[Point3], q: Point3) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = p.distance_squared(q);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Greedy max-min subset selection starting at `start`.
///
/// Ties are broken toward the lowest index, so the result is a deterministic
/// function of the inputs.
pub fn farthest_point_sample(
    points: &[Point3],
    k: usize,
    start: usize,
) -> Result<Vec<usize>, GeomError> {
    let n = points.len();
    if k > n || k == 0 {
        return Err(GeomError::TooManySamples { k, n });
    }
    if start >= n {
        return Err(GeomError::StartOutOfRange { start, n });
    }
    let mut selected = Vec::with_capacity(k);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..k {
        selected.push(current);
        let c = points[current];
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = p.distance_squared(c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

/// `k` distinct indices drawn uniformly from `0..n`, in ascending order.
pub fn random_seeds<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>, GeomError> {
    if k > n || k == 0 {
        return Err(GeomError::TooManySamples { k, n });
    }
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Radius grouping around each center.
///
/// Each group lists in-radius indices in ascending order, truncated to
/// `max_count` and padded by repeating the first hit. A center with no point
/// in range gets the globally nearest point instead.
pub fn ball_query(
    points: &[Point3],
    centers: &[Point3],
    radius: f64,
    max_count: usize,
) -> Vec<Vec<usize>> {
    let r2 = radius * radius;
    centers
        .iter()
        .map(|c| {
            let mut group: Vec<usize> = Vec::with_capacity(max_count);
            for (i, p) in points.iter().enumerate() {
                if p.distance_squared(*c) <= r2 {
                    group.push(i);
                    if group.len() == max_count {
                        break;
                    }
                }
            }
            let fill = match group.first() {
                Some(&f) => f,
                None => match nearest_index(points, *c) {
                    Some(i) => i,
                    None => return Vec::new(),
                },
            };
            group.resize(max_count, fill);
            group
        })
        .collect()
}

/// Three nearest known points of one query and their normalized weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpWeights {
    pub indices: [usize; 3],
    pub weights: [f64; 3],
}

/// Inverse-distance weights over the three nearest known points of every query.
pub fn three_nn_weights(
    known: &[Point3],
    queries: &[Point3],
) -> Result<Vec<InterpWeights>, GeomError> {
    if known.len() < 3 {
        return Err(GeomError::TooFewKnownPoints(known.len()));
    }
    Ok(queries
        .iter()
        .map(|q| {
            // (dist², index) of the three best so far, sorted ascending
            let mut best = [(f64::INFINITY, usize::MAX); 3];
            for (i, p) in known.iter().enumerate() {
                let d = p.distance_squared(*q);
                if d < best[2].0 {
                    let mut slot = 2;
                    while slot > 0 && d < best[slot - 1].0 {
                        best[slot] = best[slot - 1];
                        slot -= 1;
                    }
                    best[slot] = (d, i);
                }
            }
            let inv = best.map(|(d2, _)| 1.0 / (d2.sqrt() + INTERP_DELTA));
            let total: f64 = inv.iter().sum();
            InterpWeights {
                indices: best.map(|(_, i)| i),
                weights: inv.map(|w| w / total),
            }
        })
        .collect())
}

/// Interpolates row-major `known_features` (`known.len()` rows of `width`)
/// onto `queries`.
pub fn three_nn_interpolate(
    known: &[Point3],
    known_features: &[f64],
    width: usize,
    queries: &[Point3],
) -> Result<Vec<f64>, GeomError> {
    if known_features.len() != known.len() * width {
        return Err(GeomError::FeatureRows {
            rows: if width == 0 { 0 } else { known_features.len() / width },
            points: known.len(),
        });
    }
    let weights = three_nn_weights(known, queries)?;
    let mut out = vec![0.0; queries.len() * width];
    for (row, w) in out.chunks_mut(width.max(1)).zip(&weights) {
        for (&i, &wt) in w.indices.iter().zip(&w.weights) {
            let src = &known_features[i * width..(i + 1) * width];
            for (o, s) in row.iter_mut().zip(src) {
                *o += wt * s;
            }
        }
    }
    Ok(out)
}

/// One spherical crop of a [`ContextSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContextScale {
    pub points: Vec<Point3>,
    pub colors: Option<Vec<[f64; 3]>>,
}

/// Multi-scale spherical crops around a seed point.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    pub scales: Vec<ContextScale>,
    pub seed: Point3,
    pub radii: Vec<f64>,
}

impl ContextSet {
    pub fn points_per_scale(&self) -> usize {
        self.scales.first().map_or(0, |s| s.points.len())
    }

    /// Every point of every scale shifted by `-t`; radii are kept.
    pub fn centralize(&self, t: Point3) -> ContextSet {
        ContextSet {
            scales: self
                .scales
                .iter()
                .map(|s| ContextScale {
                    points: s.points.iter().map(|&p| p - t).collect(),
                    colors: s.colors.clone(),
                })
                .collect(),
            seed: self.seed - t,
            radii: self.radii.clone(),
        }
    }
}

/// Crops `cloud` with spheres of each radius around `seed` and resamples every
/// crop to exactly `points_per_scale` points.
///
/// Crops with enough points are subsampled without replacement; short crops
/// are padded by drawing duplicates; an empty crop becomes copies of the seed.
pub fn multi_scale_context<R: Rng + ?Sized>(
    cloud: &PointCloud,
    seed: Point3,
    radii: &[f64],
    points_per_scale: usize,
    rng: &mut R,
) -> Result<ContextSet, GeomError> {
    if radii.is_empty()
        || radii[0] <= 0.0
        || radii.windows(2).any(|w| w[1] <= w[0])
        || !radii.iter().all(|r| r.is_finite())
    {
        return Err(GeomError::BadRadii);
    }
    let d2: Vec<f64> = cloud.points.iter().map(|p| p.distance_squared(seed)).collect();
    let mut scales = Vec::with_capacity(radii.len());
    for &r in radii {
        let r2 = r * r;
        let inside: Vec<usize> = (0..cloud.len()).filter(|&i| d2[i] <= r2).collect();
        let picked: Vec<usize> = if inside.is_empty() {
            Vec::new()
        } else if inside.len() >= points_per_scale {
            let mut idx = rand::seq::index::sample(rng, inside.len(), points_per_scale).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|j| inside[j]).collect()
        } else {
            let mut v = inside.clone();
            while v.len() < points_per_scale {
                v.push(inside[rng.gen_range(0..inside.len())]);
            }
            v
        };
        let scale = if picked.is_empty() {
            ContextScale {
                points: vec![seed; points_per_scale],
                colors: cloud.colors.as_ref().map(|_| vec![[0.0; 3]; points_per_scale]),
            }
        } else {
            ContextScale {
                points: picked.iter().map(|&i| cloud.points[i]).collect(),
                colors: cloud.colors.as_ref().map(|c| picked.iter().map(|&i| c[i]).collect()),
            }
        };
        scales.push(scale);
    }
    Ok(ContextSet { scales, seed, radii: radii.to_vec() })
}

/// Greedy class-agnostic non-maximum suppression.
///
/// Candidates are visited by descending score (lower index first on ties); a
/// candidate is dropped when its IoU with any kept box exceeds
/// `iou_threshold`. Returns kept indices in selection order.
pub fn nms_3d(
    boxes: &[Aabb],
    scores: &[f64],
    iou_threshold: f64,
    max_keep: usize,
) -> Result<Vec<usize>, GeomError> {
    if boxes.len() != scores.len() {
        return Err(GeomError::LengthMismatch(boxes.len(), scores.len()));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.len() >= max_keep {
            break;
        }
        if kept.iter().all(|&k| super::aabb_iou(&boxes[i], &boxes[k]) <= iou_threshold) {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Transfers a per-RoI-point mask onto the scene by nearest-neighbor lookup.
/// Scene points outside `roi` are always 0.
pub fn project_mask_to_scene(
    roi: &Aabb,
    roi_points: &[Point3],
    roi_mask: &[bool],
    scene: &[Point3],
) -> Result<Vec<bool>, GeomError> {
    if roi_points.is_empty() {
        return Err(GeomError::EmptyPointSet);
    }
    if roi_points.len() != roi_mask.len() {
        return Err(GeomError::LengthMismatch(roi_points.len(), roi_mask.len()));
    }
    Ok(scene
        .iter()
        .map(|&p| {
            roi.contains(p) && nearest_index(roi_points, p).map_or(false, |j| roi_mask[j])
        })
        .collect())
}
