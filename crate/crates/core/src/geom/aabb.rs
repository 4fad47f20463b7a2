use super::{GeomError, Point3};

/// Axis-aligned box with `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Result<Self, GeomError> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(GeomError::InvertedBox);
        }
        Ok(Self { min, max })
    }

    /// Builds a box from a center and full per-axis extents.
    pub fn from_center_extent(center: Point3, extent: Point3) -> Result<Self, GeomError> {
        let half = extent * 0.5;
        Self::new(center - half, center + half)
    }

    /// Tightest box around `points`.
    pub fn of_points(points: &[Point3]) -> Result<Self, GeomError> {
        let (first, rest) = points.split_first().ok_or(GeomError::EmptyPointSet)?;
        let (mut lo, mut hi) = (*first, *first);
        for p in rest {
            lo = lo.component_min(*p);
            hi = hi.component_max(*p);
        }
        Self::new(lo, hi)
    }

    #[inline]
    pub fn center(&self) -> Point3 {
        (self.min + self.max) * 0.5
    }

    #[inline]
    pub fn extent(&self) -> Point3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    /// Inclusive containment test.
    #[inline]
    pub fn contains(&self, p: Point3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn intersection_volume(&self, o: &Aabb) -> f64 {
        let lo = self.min.component_max(o.min);
        let hi = self.max.component_min(o.max);
        let d = hi - lo;
        if d.x <= 0.0 || d.y <= 0.0 || d.z <= 0.0 {
            0.0
        } else {
            d.x * d.y * d.z
        }
    }

    /// Grows every side outward by `fraction` of that axis' extent.
    pub fn expand_by_fraction(&self, fraction: f64) -> Aabb {
        let pad = self.extent() * fraction;
        Aabb { min: self.min - pad, max: self.max + pad }
    }

    pub fn expand_by(&self, margin: f64) -> Aabb {
        let pad = Point3::new(margin, margin, margin);
        Aabb { min: self.min - pad, max: self.max + pad }
    }

    pub fn translate(&self, v: Point3) -> Aabb {
        Aabb { min: self.min + v, max: self.max + v }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.min.x, self.min.y, self.min.z, self.max.x, self.max.y, self.max.z]
    }

    pub fn from_array(a: [f64; 6]) -> Result<Self, GeomError> {
        Self::new(Point3::new(a[0], a[1], a[2]), Point3::new(a[3], a[4], a[5]))
    }
}

/// Tightest box containing every point of the set.
pub fn aabb_of(points: &[Point3]) -> Result<Aabb, GeomError> {
    Aabb::of_points(points)
}

/// Volumetric IoU. Boxes with zero volume score 0 against everything, themselves included.
pub fn aabb_iou(a: &Aabb, b: &Aabb) -> f64 {
    let (va, vb) = (a.volume(), b.volume());
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    let inter = a.intersection_volume(b);
    let union = va + vb - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
