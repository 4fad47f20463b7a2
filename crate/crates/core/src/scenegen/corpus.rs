//! Binary corpus container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "GSPNCORP1" | 'L' | kind u8 | count u64 | count x (offset u64, length u64) | records
//! ```
//!
//! Arrays inside a record are a `u64` element count followed by the elements.

use std::path::Path;

use crate::geom::{Aabb, Point3, PointCloud};
use crate::gspn::Proposal;

use super::SceneError;

pub const CORPUS_MAGIC: &str = "GSPNCORP1";
const ENDIAN_TAG: u8 = b'L';

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    Scenes,
    Proposals,
    Predictions,
}

impl CorpusKind {
    fn tag(self) -> u8 {
        match self {
            CorpusKind::Scenes => 0,
            CorpusKind::Proposals => 1,
            CorpusKind::Predictions => 2,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CorpusKind::Scenes => "scene",
            CorpusKind::Proposals => "proposal",
            CorpusKind::Predictions => "prediction",
        }
    }
}

/// One labeled scene. `gt_boxes` is aligned with `cloud.instances()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub seed: u64,
    pub cloud: PointCloud,
}

impl SceneRecord {
    pub fn gt_boxes(&self) -> Vec<Aabb> {
        self.cloud.instances().into_iter().map(|i| i.bbox).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalRecord {
    pub scene: u64,
    pub proposal: Proposal,
}

/// Detected instance with a mask over the scene's points.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    pub category: u32,
    pub confidence: f64,
    pub bbox: Aabb,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub scene: u64,
    pub num_points: usize,
    pub instances: Vec<InstancePrediction>,
}

/// Alternating run lengths starting with a run of `false` (possibly empty).
pub fn rle_encode(mask: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &m in mask {
        if m == current {
            len += 1;
        } else {
            runs.push(len);
            current = m;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[u32], n: usize) -> Option<Vec<bool>> {
    let mut out = Vec::with_capacity(n);
    for (i, &r) in runs.iter().enumerate() {
        out.extend(std::iter::repeat(i % 2 == 1).take(r as usize));
    }
    (out.len() == n).then_some(out)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: impl ExactSizeIterator<Item = f64>) {
        self.u64(v.len() as u64);
        v.for_each(|x| self.f64(x));
    }
    fn u32s(&mut self, v: &[u32]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.u32(x));
    }
    fn points(&mut self, pts: &[Point3]) {
        self.f64s(pts.iter().flat_map(|p| p.to_array()).collect::<Vec<_>>().into_iter());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SceneError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            SceneError::Truncated(format!("need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64, SceneError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn u32(&mut self) -> Result<u32, SceneError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn f64(&mut self) -> Result<f64, SceneError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, elem: usize) -> Result<usize, SceneError> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(SceneError::Truncated(format!("array of {n} elements at offset {}", self.pos)));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>, SceneError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn u32s(&mut self) -> Result<Vec<u32>, SceneError> {
        let n = self.len(4)?;
        (0..n).map(|_| self.u32()).collect()
    }
    fn points(&mut self) -> Result<Vec<Point3>, SceneError> {
        let v = self.f64s()?;
        if v.len() % 3 != 0 {
            return Err(SceneError::Malformed("coordinate array not a multiple of 3".into()));
        }
        Ok(v.chunks(3).map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }
    fn finished(&self) -> Result<(), SceneError> {
        if self.pos != self.buf.len() {
            return Err(SceneError::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn encode_container(kind: CorpusKind, records: &[Vec<u8>]) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(CORPUS_MAGIC.as_bytes());
    w.buf.push(ENDIAN_TAG);
    w.buf.push(kind.tag());
    w.u64(records.len() as u64);
    let mut offset = (w.buf.len() + 16 * records.len()) as u64;
    for r in records {
        w.u64(offset);
        w.u64(r.len() as u64);
        offset += r.len() as u64;
    }
    for r in records {
        w.buf.extend_from_slice(r);
    }
    w.buf
}

fn decode_container(bytes: &[u8], kind: CorpusKind) -> Result<Vec<&[u8]>, SceneError> {
    let head = CORPUS_MAGIC.len() + 2;
    if bytes.len() < head || &bytes[..CORPUS_MAGIC.len()] != CORPUS_MAGIC.as_bytes() {
        let n = bytes.len().min(CORPUS_MAGIC.len());
        return Err(SceneError::Version {
            expected: CORPUS_MAGIC,
            found: String::from_utf8_lossy(&bytes[..n]).into_owned(),
        });
    }
    if bytes[CORPUS_MAGIC.len()] != ENDIAN_TAG {
        return Err(SceneError::Version { expected: CORPUS_MAGIC, found: "unknown byte order".into() });
    }
    let tag = bytes[CORPUS_MAGIC.len() + 1];
    if tag != kind.tag() {
        let found = [CorpusKind::Scenes, CorpusKind::Proposals, CorpusKind::Predictions]
            .into_iter()
            .find(|k| k.tag() == tag)
            .map_or_else(|| format!("unknown kind {tag}"), |k| k.name().to_string());
        return Err(SceneError::Kind { expected: kind.name(), found });
    }
    let mut r = Reader { buf: bytes, pos: head };
    let count = r.len(16)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (off, len) = (r.u64()? as usize, r.u64()? as usize);
        let end = off.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| {
            SceneError::Truncated(format!("record at {off} with {len} bytes"))
        })?;
        out.push(&bytes[off..end]);
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SceneError> {
    std::fs::write(path, bytes).map_err(|source| SceneError::Io { path: path.display().to_string(), source })
}

fn read_file(path: &Path) -> Result<Vec<u8>, SceneError> {
    std::fs::read(path).map_err(|source| SceneError::Io { path: path.display().to_string(), source })
}

const HAS_COLORS: u32 = 1;
const HAS_LABELS: u32 = 2;
const HAS_IDS: u32 = 4;

fn encode_scene(s: &SceneRecord) -> Vec<u8> {
    let mut w = Writer::default();
    let c = &s.cloud;
    w.u64(s.seed);
    let flags = if c.colors.is_some() { HAS_COLORS } else { 0 }
        | if c.semantic_labels.is_some() { HAS_LABELS } else { 0 }
        | if c.instance_ids.is_some() { HAS_IDS } else { 0 };
    w.u32(flags);
    w.points(&c.points);
    let colors: Vec<f64> = c.colors.iter().flatten().flatten().copied().collect();
    w.f64s(colors.into_iter());
    w.u32s(c.semantic_labels.as_deref().unwrap_or(&[]));
    w.u32s(c.instance_ids.as_deref().unwrap_or(&[]));
    let inst = c.instances();
    w.f64s(inst.iter().flat_map(|i| i.bbox.to_array()).collect::<Vec<_>>().into_iter());
    w.u32s(&inst.iter().map(|i| i.id).collect::<Vec<_>>());
    w.u32s(&inst.iter().map(|i| i.category).collect::<Vec<_>>());
    w.buf
}

fn decode_scene(bytes: &[u8]) -> Result<SceneRecord, SceneError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let seed = r.u64()?;
    let flags = r.u32()?;
    let points = r.points()?;
    let colors = r.f64s()?;
    let labels = r.u32s()?;
    let ids = r.u32s()?;
    let boxes = r.f64s()?;
    let gt_ids = r.u32s()?;
    let gt_cats = r.u32s()?;
    r.finished()?;
    let cloud = PointCloud::new(
        points,
        (flags & HAS_COLORS != 0).then(|| colors.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()),
        (flags & HAS_LABELS != 0).then_some(labels),
        (flags & HAS_IDS != 0).then_some(ids),
    )
    .map_err(|e| SceneError::Malformed(e.to_string()))?;
    // stored boxes must agree with the labels (every instance inside its box)
    let inst = cloud.instances();
    let consistent = inst.len() == gt_ids.len()
        && boxes.len() == 6 * inst.len()
        && inst.iter().enumerate().all(|(k, i)| {
            i.id == gt_ids[k]
                && i.category == gt_cats[k]
                && i.bbox.to_array().as_slice() == &boxes[6 * k..6 * k + 6]
        });
    if !consistent {
        return Err(SceneError::Malformed("ground-truth boxes disagree with instance labels".into()));
    }
    Ok(SceneRecord { seed, cloud })
}

fn encode_proposal(p: &ProposalRecord) -> Vec<u8> {
    let mut w = Writer::default();
    let q = &p.proposal;
    w.u64(p.scene);
    w.u64(q.seed_index as u64);
    w.f64(q.objectness);
    w.points(&[q.center]);
    w.points(&q.points);
    w.f64s(q.confidence.iter().copied());
    w.f64s(q.context_feature.iter().copied());
    w.buf
}

fn decode_proposal(bytes: &[u8]) -> Result<ProposalRecord, SceneError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let scene = r.u64()?;
    let seed_index = r.u64()? as usize;
    let objectness = r.f64()?;
    let center = r.points()?;
    let points = r.points()?;
    let confidence = r.f64s()?;
    let context_feature = r.f64s()?;
    r.finished()?;
    if center.len() != 1 || points.len() != confidence.len() {
        return Err(SceneError::Malformed("proposal arrays disagree".into()));
    }
    Ok(ProposalRecord {
        scene,
        proposal: Proposal { seed_index, points, confidence, objectness, center: center[0], context_feature },
    })
}

fn encode_prediction(p: &PredictionRecord) -> Vec<u8> {
    let mut w = Writer::default();
    w.u64(p.scene);
    w.u64(p.num_points as u64);
    w.u64(p.instances.len() as u64);
    for i in &p.instances {
        w.u32(i.category);
        w.f64(i.confidence);
        for v in i.bbox.to_array() {
            w.f64(v);
        }
        w.u32s(&rle_encode(&i.mask));
    }
    w.buf
}

fn decode_prediction(bytes: &[u8]) -> Result<PredictionRecord, SceneError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let scene = r.u64()?;
    let num_points = r.u64()? as usize;
    let k = r.len(4 + 8 * 7 + 8)?;
    let mut instances = Vec::with_capacity(k);
    for _ in 0..k {
        let category = r.u32()?;
        let confidence = r.f64()?;
        let mut b = [0.0; 6];
        for v in &mut b {
            *v = r.f64()?;
        }
        let bbox = Aabb::from_array(b).map_err(|e| SceneError::Malformed(e.to_string()))?;
        let runs = r.u32s()?;
        let mask = rle_decode(&runs, num_points)
            .ok_or_else(|| SceneError::Malformed("mask runs do not cover the scene".into()))?;
        instances.push(InstancePrediction { category, confidence, bbox, mask });
    }
    r.finished()?;
    Ok(PredictionRecord { scene, num_points, instances })
}

pub fn encode_scenes(scenes: &[SceneRecord]) -> Vec<u8> {
    encode_container(CorpusKind::Scenes, &scenes.iter().map(encode_scene).collect::<Vec<_>>())
}

pub fn decode_scenes(bytes: &[u8]) -> Result<Vec<SceneRecord>, SceneError> {
    decode_container(bytes, CorpusKind::Scenes)?.into_iter().map(decode_scene).collect()
}

pub fn write_scenes(path: &Path, scenes: &[SceneRecord]) -> Result<(), SceneError> {
    write_file(path, &encode_scenes(scenes))
}

pub fn read_scenes(path: &Path) -> Result<Vec<SceneRecord>, SceneError> {
    decode_scenes(&read_file(path)?)
}

pub fn write_proposals(path: &Path, records: &[ProposalRecord]) -> Result<(), SceneError> {
    let recs: Vec<Vec<u8>> = records.iter().map(encode_proposal).collect();
    write_file(path, &encode_container(CorpusKind::Proposals, &recs))
}

pub fn read_proposals(path: &Path) -> Result<Vec<ProposalRecord>, SceneError> {
    let bytes = read_file(path)?;
    decode_container(&bytes, CorpusKind::Proposals)?.into_iter().map(decode_proposal).collect()
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), SceneError> {
    let recs: Vec<Vec<u8>> = records.iter().map(encode_prediction).collect();
    write_file(path, &encode_container(CorpusKind::Predictions, &recs))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, SceneError> {
    let bytes = read_file(path)?;
    decode_container(&bytes, CorpusKind::Predictions)?.into_iter().map(decode_prediction).collect()
}

#[cfg(test)]
mod tests {
    use super::super::{default_catalog, generate_scene, SceneSpec};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenes(n: u64) -> Vec<SceneRecord> {
        let spec = SceneSpec { points_per_scene: 300, ..Default::default() };
        (0..n)
            .map(|s| generate_scene(&spec, &default_catalog(), &mut ChaCha8Rng::seed_from_u64(s)).unwrap().into_record())
            .collect()
    }

    #[test]
    fn scenes_round_trip_bit_exact() {
        let a = scenes(3);
        let bytes = encode_scenes(&a);
        let b = decode_scenes(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(encode_scenes(&b), bytes);
    }

    #[test]
    fn empty_corpus_is_valid() {
        let bytes = encode_scenes(&[]);
        assert!(decode_scenes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn bad_header_and_truncation_are_rejected() {
        let mut bytes = encode_scenes(&scenes(1));
        let good = bytes.clone();
        bytes[8] = b'2';
        assert!(matches!(decode_scenes(&bytes), Err(SceneError::Version { .. })));
        assert!(matches!(decode_scenes(&good[..good.len() - 5]), Err(SceneError::Truncated(_))));
        assert!(matches!(decode_scenes(&good[..4]), Err(SceneError::Version { .. })));
        let preds = encode_container(CorpusKind::Predictions, &[]);
        assert!(matches!(decode_scenes(&preds), Err(SceneError::Kind { .. })));
    }

    #[test]
    fn rle_round_trip() {
        for mask in [vec![], vec![true], vec![false, false], vec![true, true, false, true, false, false]] {
            let runs = rle_encode(&mask);
            assert_eq!(runs.iter().sum::<u32>() as usize, mask.len());
            assert_eq!(rle_decode(&runs, mask.len()).unwrap(), mask);
        }
        assert!(rle_decode(&[1, 2], 4).is_none());
    }

    #[test]
    fn predictions_and_proposals_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let preds = vec![PredictionRecord {
            scene: 4,
            num_points: 5,
            instances: vec![InstancePrediction {
                category: 2,
                confidence: 0.75,
                bbox: Aabb::from_array([0.0, 0.1, 0.2, 1.0, 1.1, 1.2]).unwrap(),
                mask: vec![false, true, true, false, true],
            }],
        }];
        let path = dir.path().join("p.bin");
        write_predictions(&path, &preds).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), preds);

        let props = vec![ProposalRecord {
            scene: 1,
            proposal: Proposal {
                seed_index: 7,
                points: vec![Point3::new(0.1, 0.2, 0.3), Point3::new(1.0, 2.0, 3.0)],
                confidence: vec![0.2, 0.9],
                objectness: 0.6,
                center: Point3::new(0.5, 0.5, 0.5),
                context_feature: vec![1.0, -2.0, 0.5, 0.5, 0.5],
            },
        }];
        let path = dir.path().join("q.bin");
        write_proposals(&path, &props).unwrap();
        assert_eq!(read_proposals(&path).unwrap(), props);
    }
}
