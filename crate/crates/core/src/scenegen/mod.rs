//! Procedural labeled scenes: primitives resting on the floor of a room with
//! two walls, sampled as noisy surface points with per-point color, semantic
//! label and instance id.

mod corpus;
mod ply;
mod primitives;

pub use corpus::{
    decode_scenes, encode_scenes, read_predictions, read_proposals, read_scenes, rle_decode,
    rle_encode, write_predictions, write_proposals, write_scenes, CorpusKind, InstancePrediction,
    PredictionRecord, ProposalRecord, SceneRecord, CORPUS_MAGIC,
};
pub use ply::{encode_ply, parse_ply, read_ply, write_ply, PlyVertex};
pub use primitives::{default_catalog, Primitive, PrimitiveSpec, ShapeKind};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{Aabb, GeomError, Point3, PointCloud};

/// Placement attempts per object before giving up.
pub const PLACEMENT_ATTEMPTS: usize = 1000;
/// Noise is resampled beyond this many standard deviations.
pub const NOISE_TRUNCATION: f64 = 3.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene overconstrained: could not place object {object} after {attempts} attempts")]
    Overconstrained { object: usize, attempts: usize },
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("invalid catalog: {0}")]
    Catalog(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("corpus {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("unsupported corpus header (expected {expected:?}): {found}")]
    Version { expected: &'static str, found: String },
    #[error("corpus holds {found} records, expected {expected}")]
    Kind { expected: &'static str, found: String },
    #[error("corpus truncated: {0}")]
    Truncated(String),
    #[error("malformed corpus record: {0}")]
    Malformed(String),
    #[error("ply: {0}")]
    Ply(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Room extents `(x, y)` and wall height.
    pub room: [f64; 3],
    pub min_objects: usize,
    pub max_objects: usize,
    /// Minimum gap between object footprints and between objects and walls.
    pub min_separation: f64,
    pub points_per_scene: usize,
    pub noise_sigma: f64,
    pub background_fraction: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            room: [3.5, 3.5, 1.0],
            min_objects: 3,
            max_objects: 8,
            min_separation: 0.1,
            points_per_scene: 2048,
            noise_sigma: 0.005,
            background_fraction: 0.25,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::Spec(m.to_string()));
        if self.min_objects < 1 || self.max_objects < self.min_objects {
            return bad("object count range must satisfy 1 <= min <= max");
        }
        if self.points_per_scene < 256 {
            return bad("points per scene must be at least 256");
        }
        if !self.room.iter().all(|v| v.is_finite() && *v > 0.0) {
            return bad("room extents must be positive");
        }
        if !(self.min_separation >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("separation and noise must be non-negative");
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return bad("background fraction must lie in [0, 1)");
        }
        let fg = self.points_per_scene - self.background_points();
        if fg < self.max_objects {
            return bad("too few foreground points for the object count");
        }
        Ok(())
    }

    pub fn background_points(&self) -> usize {
        (self.points_per_scene as f64 * self.background_fraction).round() as usize
    }
}

/// Checks category ids are in `1..=num_categories` and sizes are positive.
pub fn validate_catalog(catalog: &[PrimitiveSpec], num_categories: u32) -> Result<(), SceneError> {
    if catalog.is_empty() {
        return Err(SceneError::Catalog("empty catalog".into()));
    }
    for s in catalog {
        if s.category == 0 || s.category > num_categories {
            return Err(SceneError::Catalog(format!(
                "category {} outside 1..={num_categories}",
                s.category
            )));
        }
        let sizes_ok = (0..3).all(|a| s.size_min[a] > 0.0 && s.size_min[a] <= s.size_max[a]);
        let colors_ok = (0..3)
            .all(|a| (0.0..=1.0).contains(&s.color_min[a]) && s.color_min[a] <= s.color_max[a] && s.color_max[a] <= 1.0);
        if !sizes_ok || !colors_ok {
            return Err(SceneError::Catalog(format!("bad size or color range for {}", s.kind.as_str())));
        }
    }
    Ok(())
}

/// A generated scene with its objects. Instance ids are `1..=objects.len()`
/// in placement order.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub cloud: PointCloud,
    pub objects: Vec<Primitive>,
    pub categories: Vec<u32>,
    /// Box of each instance's points, aligned with `objects`.
    pub gt_boxes: Vec<Aabb>,
    pub seed: u64,
}

impl GeneratedScene {
    pub fn into_record(self) -> SceneRecord {
        SceneRecord { seed: self.seed, cloud: self.cloud }
    }
}

fn sample_sizes<R: Rng + ?Sized>(s: &PrimitiveSpec, rng: &mut R) -> [f64; 3] {
    let mut u = |a: usize| {
        if s.size_min[a] == s.size_max[a] {
            s.size_min[a]
        } else {
            rng.gen_range(s.size_min[a]..s.size_max[a])
        }
    };
    match s.kind {
        ShapeKind::Sphere => {
            let d = u(0);
            [d, d, d]
        }
        ShapeKind::Cylinder => {
            let d = u(0);
            [d, d, u(2)]
        }
        ShapeKind::Box | ShapeKind::Ell => [u(0), u(1), u(2)],
    }
}

fn noise<R: Rng + ?Sized>(normal: &Option<Normal<f64>>, sigma: f64, rng: &mut R) -> f64 {
    let Some(n) = normal else { return 0.0 };
    loop {
        let v = n.sample(rng);
        if v.abs() <= NOISE_TRUNCATION * sigma {
            return v;
        }
    }
}

fn jitter<R: Rng + ?Sized>(c: [f64; 3], amount: f64, rng: &mut R) -> [f64; 3] {
    c.map(|v| (v + rng.gen_range(-amount..=amount)).clamp(0.0, 1.0))
}

/// Places objects by rejection sampling, then samples surface and background
/// points. Noise is Gaussian per coordinate, truncated at three sigma.
pub fn generate_scene<R: Rng + ?Sized>(
    spec: &SceneSpec,
    catalog: &[PrimitiveSpec],
    rng: &mut R,
) -> Result<GeneratedScene, SceneError> {
    spec.validate()?;
    if catalog.is_empty() {
        return Err(SceneError::Catalog("empty catalog".into()));
    }
    let [lx, ly, wall_h] = spec.room;
    let sep = spec.min_separation;
    let count = rng.gen_range(spec.min_objects..=spec.max_objects);

    let mut objects: Vec<Primitive> = Vec::with_capacity(count);
    let mut kinds: Vec<&PrimitiveSpec> = Vec::with_capacity(count);
    let mut footprints: Vec<Aabb> = Vec::with_capacity(count);
    for object in 0..count {
        let ps = &catalog[rng.gen_range(0..catalog.len())];
        let mut size = sample_sizes(ps, rng);
        let quarter_turns = rng.gen_range(0..4u8);
        if quarter_turns % 2 == 1 {
            size.swap(0, 1);
        }
        let ell_thickness = rng.gen_range(0.35..0.5);
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (hx, hy) = (size[0] / 2.0 + sep, size[1] / 2.0 + sep);
            if 2.0 * hx > lx || 2.0 * hy > ly {
                continue;
            }
            let x = if 2.0 * hx == lx { hx } else { rng.gen_range(hx..lx - hx) };
            let y = if 2.0 * hy == ly { hy } else { rng.gen_range(hy..ly - hy) };
            let prim = Primitive { kind: ps.kind, base: Point3::new(x, y, 0.0), size, quarter_turns, ell_thickness };
            // footprints grown by half the gap on each side must be disjoint
            let fp = prim.bounds().expand_by(sep / 2.0);
            if footprints.iter().all(|o| !touching(&fp, o)) {
                placed = Some((prim, fp));
                break;
            }
        }
        let (prim, fp) = placed.ok_or(SceneError::Overconstrained { object, attempts: PLACEMENT_ATTEMPTS })?;
        objects.push(prim);
        kinds.push(ps);
        footprints.push(fp);
    }

    let normal = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("finite sigma"));
    let n_bg = spec.background_points();
    let n_fg = spec.points_per_scene - n_bg;
    let mut points = Vec::with_capacity(spec.points_per_scene);
    let mut colors = Vec::with_capacity(spec.points_per_scene);
    let mut labels = Vec::with_capacity(spec.points_per_scene);
    let mut ids = Vec::with_capacity(spec.points_per_scene);

    for (k, (prim, ps)) in objects.iter().zip(&kinds).enumerate() {
        let n = n_fg / count + usize::from(k < n_fg % count);
        let base: [f64; 3] = std::array::from_fn(|a| {
            if ps.color_min[a] == ps.color_max[a] {
                ps.color_min[a]
            } else {
                rng.gen_range(ps.color_min[a]..ps.color_max[a])
            }
        });
        for _ in 0..n {
            let p = prim.sample_surface(rng);
            let d = Point3::new(
                noise(&normal, spec.noise_sigma, rng),
                noise(&normal, spec.noise_sigma, rng),
                noise(&normal, spec.noise_sigma, rng),
            );
            points.push(p + d);
            colors.push(jitter(base, 0.02, rng));
            labels.push(ps.category);
            ids.push(k as u32 + 1);
        }
    }

    let floor = lx * ly;
    let wall_x = ly * wall_h;
    let wall_y = lx * wall_h;
    let floor_color = [0.5, 0.47, 0.42];
    let wall_color = [0.72, 0.72, 0.7];
    for _ in 0..n_bg {
        let t = rng.gen_range(0.0..floor + wall_x + wall_y);
        let (p, c) = if t < floor {
            (Point3::new(rng.gen_range(0.0..lx), rng.gen_range(0.0..ly), 0.0), floor_color)
        } else if t < floor + wall_x {
            (Point3::new(0.0, rng.gen_range(0.0..ly), rng.gen_range(0.0..wall_h)), wall_color)
        } else {
            (Point3::new(rng.gen_range(0.0..lx), 0.0, rng.gen_range(0.0..wall_h)), wall_color)
        };
        let d = Point3::new(
            noise(&normal, spec.noise_sigma, rng),
            noise(&normal, spec.noise_sigma, rng),
            noise(&normal, spec.noise_sigma, rng),
        );
        points.push(p + d);
        colors.push(jitter(c, 0.04, rng));
        labels.push(0);
        ids.push(0);
    }

    let categories: Vec<u32> = kinds.iter().map(|k| k.category).collect();
    let cloud = PointCloud::new(points, Some(colors), Some(labels), Some(ids))?;
    let gt_boxes = cloud.instances().into_iter().map(|i| i.bbox).collect();
    Ok(GeneratedScene { cloud, objects, categories, gt_boxes, seed: spec.seed })
}

fn touching(a: &Aabb, b: &Aabb) -> bool {
    // closed test: footprints sharing an edge count as overlapping
    (0..2).all(|ax| a.min.get(ax) <= b.max.get(ax) && b.min.get(ax) <= a.max.get(ax))
}

/// Seed of the `counter`-th scene derived from a master seed (splitmix64).
pub fn derive_seed(master: u64, counter: u64) -> u64 {
    let mut z = master.wrapping_add(counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `count` scenes in parallel; scene `i` uses
/// `derive_seed(master, first_counter + i)` and the result is in index order.
pub fn generate_corpus(
    template: &SceneSpec,
    catalog: &[PrimitiveSpec],
    master: u64,
    first_counter: u64,
    count: usize,
) -> Result<Vec<GeneratedScene>, SceneError> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master, first_counter + i as u64);
            let spec = SceneSpec { seed, ..template.clone() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            generate_scene(&spec, catalog, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_object_spec(noise: f64) -> SceneSpec {
        SceneSpec { min_objects: 1, max_objects: 1, noise_sigma: noise, points_per_scene: 512, ..Default::default() }
    }

    #[test]
    fn noiseless_single_object_lies_on_its_surface() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = generate_scene(&one_object_spec(0.0), &default_catalog(), &mut rng).unwrap();
            let prim = &s.objects[0];
            for i in s.cloud.instance_indices(1) {
                assert!(prim.surface_distance(s.cloud.points[i]) < 1e-9);
            }
        }
    }

    #[test]
    fn boxes_bound_instances_within_noise_padding() {
        let spec = SceneSpec::default();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = generate_scene(&spec, &default_catalog(), &mut rng).unwrap();
            let pad = NOISE_TRUNCATION * spec.noise_sigma + 1e-12;
            for (k, (prim, b)) in s.objects.iter().zip(&s.gt_boxes).enumerate() {
                let idx = s.cloud.instance_indices(k as u32 + 1);
                assert!(idx.len() >= 16);
                let tight = prim.bounds();
                for a in 0..3 {
                    assert!(b.min.get(a) >= tight.min.get(a) - pad && b.max.get(a) <= tight.max.get(a) + pad);
                }
                for i in idx {
                    assert!(b.contains(s.cloud.points[i]));
                }
            }
            for i in 0..s.gt_boxes.len() {
                for j in i + 1..s.gt_boxes.len() {
                    assert_eq!(crate::geom::aabb_iou(&s.gt_boxes[i], &s.gt_boxes[j]), 0.0);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec::default();
        let a = generate_scene(&spec, &default_catalog(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = generate_scene(&spec, &default_catalog(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_room_is_overconstrained() {
        let spec = SceneSpec { room: [0.5, 0.5, 1.0], min_objects: 4, max_objects: 4, ..Default::default() };
        let err = generate_scene(&spec, &default_catalog(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(err.to_string().contains("scene overconstrained"));
    }

    #[test]
    fn spec_and_catalog_validation() {
        assert!(SceneSpec { points_per_scene: 100, ..Default::default() }.validate().is_err());
        assert!(SceneSpec { min_objects: 0, ..Default::default() }.validate().is_err());
        assert!(validate_catalog(&default_catalog(), 4).is_ok());
        assert!(validate_catalog(&default_catalog(), 3).is_err());
    }

    #[test]
    fn corpus_generation_is_ordered_and_seeded() {
        let spec = SceneSpec { points_per_scene: 256, ..Default::default() };
        let a = generate_corpus(&spec, &default_catalog(), 9, 0, 6).unwrap();
        let b = generate_corpus(&spec, &default_catalog(), 9, 0, 6).unwrap();
        assert_eq!(a, b);
        let seeds: Vec<u64> = a.iter().map(|s| s.seed).collect();
        assert_eq!(seeds, (0..6).map(|i| derive_seed(9, i)).collect::<Vec<_>>());
    }
}
