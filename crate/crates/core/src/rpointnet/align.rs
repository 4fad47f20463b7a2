use rand::seq::index::sample;
use rand::Rng;

use crate::geom::{three_nn_interpolate, Aabb, Point3};

use super::RpnError;

/// Per-seed feature rows (`f_ĉ ⊕ f_sem`) that RoI features are interpolated from.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedFeatures {
    pub points: Vec<Point3>,
    /// Row-major, `points.len()` rows of `width`.
    pub features: Vec<f64>,
    pub width: usize,
}

/// Fixed-size resampling of one box.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSample {
    pub bbox: Aabb,
    /// Scene indices of the sampled points (duplicates when the box is short).
    pub indices: Vec<usize>,
    /// Sampled points mapped into the unit cube centered at the origin.
    pub normalized: Vec<Point3>,
    /// `indices.len()` rows of `width` interpolated seed features.
    pub features: Vec<f64>,
    pub width: usize,
}

/// Samples `n_roi` scene points inside `roi` (all of them once, padded by
/// uniform duplicates when there are fewer), normalizes them per axis by
/// `(x − center) / extent` and interpolates seed features at their positions.
pub fn point_roi_align<R: Rng + ?Sized>(
    scene: &[Point3],
    seeds: &SeedFeatures,
    roi: &Aabb,
    n_roi: usize,
    rng: &mut R,
) -> Result<RoiSample, RpnError> {
    if seeds.points.len() < 3 {
        return Err(RpnError::TooFewSeeds(seeds.points.len()));
    }
    let inside: Vec<usize> = (0..scene.len()).filter(|&i| roi.contains(scene[i])).collect();
    if inside.is_empty() {
        return Err(RpnError::EmptyRoi(roi.to_array()));
    }
    let indices: Vec<usize> = if inside.len() >= n_roi {
        sample(rng, inside.len(), n_roi).into_iter().map(|k| inside[k]).collect()
    } else {
        let mut v = inside.clone();
        while v.len() < n_roi {
            v.push(inside[rng.gen_range(0..inside.len())]);
        }
        v
    };
    let center = roi.center();
    let extent = roi.extent();
    let normalized = indices
        .iter()
        .map(|&i| {
            let d = scene[i] - center;
            Point3::new(
                if extent.x > 0.0 { d.x / extent.x } else { 0.0 },
                if extent.y > 0.0 { d.y / extent.y } else { 0.0 },
                if extent.z > 0.0 { d.z / extent.z } else { 0.0 },
            )
        })
        .collect();
    let world: Vec<Point3> = indices.iter().map(|&i| scene[i]).collect();
    let features = three_nn_interpolate(&seeds.points, &seeds.features, seeds.width, &world)?;
    Ok(RoiSample { bbox: *roi, indices, normalized, features, width: seeds.width })
}
