use super::{Aabb, GeomError, Point3};

/// One labeled object of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u32,
    /// Semantic label of the instance's first point.
    pub category: u32,
    pub indices: Vec<usize>,
    pub bbox: Aabb,
}

/// Scene or object point set with optional per-point attributes.
///
/// Attribute vectors, when present, are aligned with `points`. Instance id 0
/// marks background.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub colors: Option<Vec<[f64; 3]>>,
    pub semantic_labels: Option<Vec<u32>>,
    pub instance_ids: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3>) -> Self {
        Self { points, ..Default::default() }
    }

    /// Builds a cloud and checks attribute alignment.
    pub fn new(
        points: Vec<Point3>,
        colors: Option<Vec<[f64; 3]>>,
        semantic_labels: Option<Vec<u32>>,
        instance_ids: Option<Vec<u32>>,
    ) -> Result<Self, GeomError> {
        let cloud = Self { points, colors, semantic_labels, instance_ids };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let n = self.points.len();
        let check = |name: &'static str, len: Option<usize>| match len {
            Some(l) if l != n => Err(GeomError::AttributeLength { name, expected: n, found: l }),
            _ => Ok(()),
        };
        check("colors", self.colors.as_ref().map(Vec::len))?;
        check("semantic_labels", self.semantic_labels.as_ref().map(Vec::len))?;
        check("instance_ids", self.instance_ids.as_ref().map(Vec::len))?;
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        if let Some(colors) = &self.colors {
            if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(GeomError::ColorRange);
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn color(&self, i: usize) -> Option<[f64; 3]> {
        self.colors.as_ref().map(|c| c[i])
    }

    pub fn instance_id(&self, i: usize) -> u32 {
        self.instance_ids.as_ref().map_or(0, |ids| ids[i])
    }

    pub fn semantic_label(&self, i: usize) -> u32 {
        self.semantic_labels.as_ref().map_or(0, |l| l[i])
    }

    /// Subset of the cloud at `indices`, carrying every attribute.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            semantic_labels: self
                .semantic_labels
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            instance_ids: self.instance_ids.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    /// Indices of points belonging to instance `id`.
    pub fn instance_indices(&self, id: u32) -> Vec<usize> {
        match &self.instance_ids {
            Some(ids) => ids.iter().enumerate().filter(|(_, &v)| v == id).map(|(i, _)| i).collect(),
            None => Vec::new(),
        }
    }

    /// Foreground instances in ascending id order; each box is the AABB of the
    /// instance's points.
    pub fn instances(&self) -> Vec<Instance> {
        let Some(ids) = &self.instance_ids else { return Vec::new() };
        let mut by_id: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for (i, &id) in ids.iter().enumerate() {
            if id != 0 {
                by_id.entry(id).or_default().push(i);
            }
        }
        by_id
            .into_iter()
            .map(|(id, indices)| {
                let pts: Vec<Point3> = indices.iter().map(|&i| self.points[i]).collect();
                Instance {
                    id,
                    category: self.semantic_label(indices[0]),
                    bbox: Aabb::of_points(&pts).expect("instance has points"),
                    indices,
                }
            })
            .collect()
    }

    pub fn translate(&self, v: Point3) -> PointCloud {
        let mut out = self.clone();
        for p in &mut out.points {
            *p += v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misaligned_attributes_rejected() {
        let err = PointCloud::new(vec![Point3::ZERO; 3], None, Some(vec![0, 1]), None).unwrap_err();
        assert!(matches!(err, GeomError::AttributeLength { name: "semantic_labels", .. }));
    }

    #[test]
    fn select_carries_attributes() {
        let c = PointCloud::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)],
            Some(vec![[0.1; 3], [0.9; 3]]),
            Some(vec![0, 2]),
            Some(vec![0, 5]),
        )
        .unwrap();
        let s = c.select(&[1]);
        assert_eq!(s.points, vec![Point3::new(1.0, 0.0, 0.0)]);
        assert_eq!(s.colors, Some(vec![[0.9; 3]]));
        assert_eq!(s.instance_ids, Some(vec![5]));
        assert_eq!(c.instance_indices(5), vec![1]);
        let inst = c.instances();
        assert_eq!(inst.len(), 1);
        assert_eq!((inst[0].id, inst[0].category, inst[0].indices.clone()), (5, 2, vec![1]));
    }
}
