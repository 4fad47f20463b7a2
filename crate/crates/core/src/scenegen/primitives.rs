use rand::Rng;

use crate::geom::{Aabb, Point3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Box,
    Sphere,
    Cylinder,
    /// L-shaped prism: two overlapping boxes sharing a corner column.
    Ell,
}

impl ShapeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Ell => "ell",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "box" => ShapeKind::Box,
            "sphere" => ShapeKind::Sphere,
            "cylinder" => ShapeKind::Cylinder,
            "ell" => ShapeKind::Ell,
            _ => return None,
        })
    }
}

/// Catalog entry: a shape kind with its semantic category and size/color ranges.
///
/// Sizes are full extents `(x, y, z)` in meters before rotation. Spheres use
/// the x range as diameter; cylinders use x as diameter and z as height.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSpec {
    pub kind: ShapeKind,
    pub category: u32,
    pub size_min: [f64; 3],
    pub size_max: [f64; 3],
    pub color_min: [f64; 3],
    pub color_max: [f64; 3],
}

/// A placed object resting on the floor (`z = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub kind: ShapeKind,
    /// Footprint center `(x, y)` and base height 0.
    pub base: Point3,
    /// Extents after the quarter-turn rotation.
    pub size: [f64; 3],
    /// Quarter turns about the vertical axis (0..4); only the ell's layout depends on it.
    pub quarter_turns: u8,
    /// Arm thickness of an ell as a fraction of its footprint.
    pub ell_thickness: f64,
}

/// Axis-aligned face used for area-weighted surface sampling.
#[derive(Debug, Clone, Copy)]
struct Face {
    origin: Point3,
    u: Point3,
    v: Point3,
}

impl Face {
    fn area(&self) -> f64 {
        self.u.norm() * self.v.norm()
    }
}

fn box_faces(b: &Aabb) -> [Face; 5] {
    let (lo, hi) = (b.min, b.max);
    let e = b.extent();
    let x = Point3::new(e.x, 0.0, 0.0);
    let y = Point3::new(0.0, e.y, 0.0);
    let z = Point3::new(0.0, 0.0, e.z);
    [
        Face { origin: Point3::new(lo.x, lo.y, hi.z), u: x, v: y },
        Face { origin: lo, u: y, v: z },
        Face { origin: Point3::new(hi.x, lo.y, lo.z), u: y, v: z },
        Face { origin: lo, u: x, v: z },
        Face { origin: Point3::new(lo.x, hi.y, lo.z), u: x, v: z },
    ]
}

fn strictly_inside(b: &Aabb, p: Point3) -> bool {
    let tol = 1e-12;
    (0..3).all(|a| p.get(a) > b.min.get(a) + tol && p.get(a) < b.max.get(a) - tol)
}

/// Distance from `p` to the boundary of box `b` (inside or outside).
fn box_boundary_distance(b: &Aabb, p: Point3) -> f64 {
    let mut outside = 0.0f64;
    let mut inside = f64::INFINITY;
    for a in 0..3 {
        let (lo, hi, c) = (b.min.get(a), b.max.get(a), p.get(a));
        let d = if c < lo { lo - c } else if c > hi { c - hi } else { 0.0 };
        outside += d * d;
        inside = inside.min((c - lo).abs().min((hi - c).abs()));
    }
    if outside > 0.0 {
        outside.sqrt()
    } else {
        inside
    }
}

impl Primitive {
    pub fn bounds(&self) -> Aabb {
        let [sx, sy, sz] = self.size;
        Aabb::new(
            Point3::new(self.base.x - sx / 2.0, self.base.y - sy / 2.0, 0.0),
            Point3::new(self.base.x + sx / 2.0, self.base.y + sy / 2.0, sz),
        )
        .expect("positive sizes")
    }

    /// The two boxes whose union forms an ell.
    fn ell_parts(&self) -> [Aabb; 2] {
        let b = self.bounds();
        let (lo, hi) = (b.min, b.max);
        let tx = self.ell_thickness * self.size[0];
        let ty = self.ell_thickness * self.size[1];
        // the corner column sits at one of four footprint corners
        let (cx_lo, cy_lo) = match self.quarter_turns % 4 {
            0 => (true, true),
            1 => (false, true),
            2 => (false, false),
            _ => (true, false),
        };
        let arm_x = if cy_lo {
            Aabb::new(lo, Point3::new(hi.x, lo.y + ty, hi.z))
        } else {
            Aabb::new(Point3::new(lo.x, hi.y - ty, lo.z), hi)
        };
        let arm_y = if cx_lo {
            Aabb::new(lo, Point3::new(lo.x + tx, hi.y, hi.z))
        } else {
            Aabb::new(Point3::new(hi.x - tx, lo.y, lo.z), hi)
        };
        [arm_x.expect("valid"), arm_y.expect("valid")]
    }

    /// Total sampled surface area (the face resting on the floor excluded).
    pub fn surface_area(&self) -> f64 {
        match self.kind {
            ShapeKind::Box => box_faces(&self.bounds()).iter().map(Face::area).sum(),
            ShapeKind::Sphere => {
                let r = self.size[0] / 2.0;
                4.0 * std::f64::consts::PI * r * r
            }
            ShapeKind::Cylinder => {
                let r = self.size[0] / 2.0;
                std::f64::consts::PI * r * r + 2.0 * std::f64::consts::PI * r * self.size[2]
            }
            ShapeKind::Ell => {
                // not exact (interior faces are rejected while sampling), only used for reporting
                self.ell_parts().iter().map(|b| box_faces(b).iter().map(Face::area).sum::<f64>()).sum()
            }
        }
    }

    /// One point uniformly distributed over the visible surface.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> Point3 {
        match self.kind {
            ShapeKind::Box => sample_faces(&box_faces(&self.bounds()), rng),
            ShapeKind::Sphere => {
                let r = self.size[0] / 2.0;
                let z: f64 = rng.gen_range(-1.0..=1.0);
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let s = (1.0 - z * z).max(0.0).sqrt();
                Point3::new(self.base.x + r * s * phi.cos(), self.base.y + r * s * phi.sin(), r + r * z)
            }
            ShapeKind::Cylinder => {
                let r = self.size[0] / 2.0;
                let h = self.size[2];
                let top = std::f64::consts::PI * r * r;
                let side = std::f64::consts::TAU * r * h;
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                if rng.gen_range(0.0..top + side) < top {
                    let rr = r * rng.gen::<f64>().sqrt();
                    Point3::new(self.base.x + rr * phi.cos(), self.base.y + rr * phi.sin(), h)
                } else {
                    Point3::new(self.base.x + r * phi.cos(), self.base.y + r * phi.sin(), rng.gen_range(0.0..=h))
                }
            }
            ShapeKind::Ell => {
                let parts = self.ell_parts();
                let faces: Vec<(Face, usize)> = parts
                    .iter()
                    .enumerate()
                    .flat_map(|(i, b)| box_faces(b).into_iter().map(move |f| (f, i)))
                    .collect();
                let total: f64 = faces.iter().map(|(f, _)| f.area()).sum();
                loop {
                    let (f, owner) = pick_face(&faces, total, rng);
                    let p = point_on(f, rng);
                    if !strictly_inside(&parts[1 - owner], p) {
                        return p;
                    }
                }
            }
        }
    }

    /// Distance from `p` to the visible surface.
    pub fn surface_distance(&self, p: Point3) -> f64 {
        match self.kind {
            ShapeKind::Box => box_boundary_distance(&self.bounds(), p),
            ShapeKind::Sphere => {
                let r = self.size[0] / 2.0;
                (p.distance(Point3::new(self.base.x, self.base.y, r)) - r).abs()
            }
            ShapeKind::Cylinder => {
                let r = self.size[0] / 2.0;
                let h = self.size[2];
                let radial = ((p.x - self.base.x).powi(2) + (p.y - self.base.y).powi(2)).sqrt();
                let to_side = {
                    let dr = radial - r;
                    let dz = if p.z < 0.0 { -p.z } else if p.z > h { p.z - h } else { 0.0 };
                    (dr * dr + dz * dz).sqrt()
                };
                let to_top = {
                    let dr = (radial - r).max(0.0);
                    (dr * dr + (p.z - h).powi(2)).sqrt()
                };
                to_side.min(to_top)
            }
            ShapeKind::Ell => {
                let parts = self.ell_parts();
                let mut best = f64::INFINITY;
                for (i, b) in parts.iter().enumerate() {
                    if !strictly_inside(&parts[1 - i], p) {
                        best = best.min(box_boundary_distance(b, p));
                    }
                }
                best
            }
        }
    }
}

fn pick_face<R: Rng + ?Sized>(faces: &[(Face, usize)], total: f64, rng: &mut R) -> (Face, usize) {
    let mut t = rng.gen_range(0.0..total);
    for &(f, i) in faces {
        if t < f.area() {
            return (f, i);
        }
        t -= f.area();
    }
    *faces.last().expect("non-empty")
}

fn point_on<R: Rng + ?Sized>(f: Face, rng: &mut R) -> Point3 {
    let (a, b): (f64, f64) = (rng.gen(), rng.gen());
    f.origin + f.u * a + f.v * b
}

fn sample_faces<R: Rng + ?Sized>(faces: &[Face], rng: &mut R) -> Point3 {
    let tagged: Vec<(Face, usize)> = faces.iter().map(|&f| (f, 0)).collect();
    let total: f64 = faces.iter().map(Face::area).sum();
    point_on(pick_face(&tagged, total, rng).0, rng)
}

/// Four categories: boxes, spheres, cylinders and ells, each with its own hue.
pub fn default_catalog() -> Vec<PrimitiveSpec> {
    vec![
        PrimitiveSpec {
            kind: ShapeKind::Box,
            category: 1,
            size_min: [0.3, 0.3, 0.3],
            size_max: [0.6, 0.6, 0.6],
            color_min: [0.75, 0.1, 0.1],
            color_max: [0.95, 0.25, 0.25],
        },
        PrimitiveSpec {
            kind: ShapeKind::Sphere,
            category: 2,
            size_min: [0.3, 0.3, 0.3],
            size_max: [0.55, 0.55, 0.55],
            color_min: [0.1, 0.7, 0.15],
            color_max: [0.25, 0.9, 0.3],
        },
        PrimitiveSpec {
            kind: ShapeKind::Cylinder,
            category: 3,
            size_min: [0.25, 0.25, 0.3],
            size_max: [0.45, 0.45, 0.75],
            color_min: [0.1, 0.2, 0.75],
            color_max: [0.25, 0.35, 0.95],
        },
        PrimitiveSpec {
            kind: ShapeKind::Ell,
            category: 4,
            size_min: [0.4, 0.4, 0.3],
            size_max: [0.7, 0.7, 0.6],
            color_min: [0.8, 0.7, 0.1],
            color_max: [0.95, 0.9, 0.25],
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prim(kind: ShapeKind, turns: u8) -> Primitive {
        Primitive {
            kind,
            base: Point3::new(1.0, 1.5, 0.0),
            size: [0.5, 0.4, 0.6],
            quarter_turns: turns,
            ell_thickness: 0.4,
        }
    }

    #[test]
    fn samples_lie_on_surfaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [ShapeKind::Box, ShapeKind::Sphere, ShapeKind::Cylinder, ShapeKind::Ell] {
            for turns in 0..4 {
                let mut p = prim(kind, turns);
                if kind != ShapeKind::Box && kind != ShapeKind::Ell {
                    p.size[1] = p.size[0];
                }
                if kind == ShapeKind::Sphere {
                    p.size[2] = p.size[0];
                }
                let b = p.bounds().expand_by(1e-12);
                for _ in 0..500 {
                    let q = p.sample_surface(&mut rng);
                    assert!(p.surface_distance(q) < 1e-9, "{kind:?} {q:?}");
                    assert!(b.contains(q));
                    assert!(q.z > 1e-12 || kind == ShapeKind::Sphere || q.z >= 0.0);
                }
            }
        }
    }

    #[test]
    fn ell_interior_is_not_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = prim(ShapeKind::Ell, 0);
        let [a, b] = p.ell_parts();
        for _ in 0..2000 {
            let q = p.sample_surface(&mut rng);
            assert!(!(strictly_inside(&a, q) || strictly_inside(&b, q)));
        }
    }

    #[test]
    fn kinds_round_trip_names() {
        for k in [ShapeKind::Box, ShapeKind::Sphere, ShapeKind::Cylinder, ShapeKind::Ell] {
            assert_eq!(ShapeKind::parse(k.as_str()), Some(k));
        }
    }
}
