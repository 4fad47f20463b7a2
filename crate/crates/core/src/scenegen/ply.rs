//! ASCII PLY reader and writer for labeled point clouds.
//!
//! The writer emits `x y z red green blue` and, when present, `semantic` and
//! `instance`. The reader accepts any vertex property order among those names
//! (colors as uchar 0..=255 or float 0..=1) and ignores other elements.

use std::fmt::Write as _;
use std::path::Path;

use crate::geom::{Point3, PointCloud};

use super::SceneError;

/// A vertex as written: position, 8-bit color and optional labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlyVertex {
    pub position: Point3,
    pub color: [u8; 3],
    pub labels: Option<(u32, u32)>,
}

pub fn encode_ply(vertices: &[PlyVertex]) -> String {
    let labeled = vertices.first().map_or(false, |v| v.labels.is_some());
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", vertices.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(s, "property double {p}");
    }
    for p in ["red", "green", "blue"] {
        let _ = writeln!(s, "property uchar {p}");
    }
    if labeled {
        s.push_str("property int semantic\nproperty int instance\n");
    }
    s.push_str("end_header\n");
    for v in vertices {
        let p = v.position;
        let _ = write!(s, "{:.9} {:.9} {:.9} {} {} {}", p.x, p.y, p.z, v.color[0], v.color[1], v.color[2]);
        if let (true, Some((sem, ins))) = (labeled, v.labels) {
            let _ = write!(s, " {sem} {ins}");
        }
        s.push('\n');
    }
    s
}

pub fn write_ply(path: &Path, vertices: &[PlyVertex]) -> Result<(), SceneError> {
    std::fs::write(path, encode_ply(vertices))
        .map_err(|source| SceneError::Io { path: path.display().to_string(), source })
}

pub fn read_ply(path: &Path) -> Result<PointCloud, SceneError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
    parse_ply(&text)
}

/// Parses an ASCII PLY with a vertex element into a cloud. Colors are
/// converted to [0, 1]; semantic/instance labels are kept when both exist.
pub fn parse_ply(text: &str) -> Result<PointCloud, SceneError> {
    let err = |m: String| SceneError::Ply(m);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(err("missing 'ply' magic".into()));
    }
    // (element name, count, property (name, type) list)
    let mut elements: Vec<(String, usize, Vec<(String, String)>)> = Vec::new();
    loop {
        let line = lines.next().ok_or_else(|| err("header not terminated".into()))?.trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", f, ..] => return Err(err(format!("unsupported format {f}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                let n = n.parse().map_err(|_| err(format!("bad element count {n}")))?;
                elements.push((name.to_string(), n, Vec::new()));
            }
            ["property", "list", ..] => {
                let e = elements.last_mut().ok_or_else(|| err("property before element".into()))?;
                if e.0 == "vertex" {
                    return Err(err("list properties on vertices are not supported".into()));
                }
                e.2.push(("list".into(), "list".into()));
            }
            ["property", ty, name] => {
                let e = elements.last_mut().ok_or_else(|| err("property before element".into()))?;
                e.2.push((name.to_string(), ty.to_string()));
            }
            _ => return Err(err(format!("unrecognized header line '{line}'"))),
        }
    }
    let mut body = lines.filter(|l| !l.trim().is_empty());
    let mut cloud = None;
    for (name, count, props) in &elements {
        if name != "vertex" {
            // skip rows of other elements
            for _ in 0..*count {
                body.next().ok_or_else(|| err(format!("missing {name} rows")))?;
            }
            continue;
        }
        let col = |n: &str| props.iter().position(|(p, _)| p == n);
        let (x, y, z) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(err("vertex element lacks x, y or z".into())),
        };
        let rgb = match (col("red"), col("green"), col("blue")) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        let labels = col("semantic").zip(col("instance"));
        let mut points = Vec::with_capacity(*count);
        let mut colors = Vec::with_capacity(*count);
        let mut sem = Vec::new();
        let mut ins = Vec::new();
        for row in 0..*count {
            let line = body.next().ok_or_else(|| err(format!("expected {count} vertices, found {row}")))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != props.len() {
                return Err(err(format!("vertex {row} has {} values, expected {}", vals.len(), props.len())));
            }
            let num = |i: usize| vals[i].parse::<f64>().map_err(|_| err(format!("bad number '{}'", vals[i])));
            points.push(Point3::new(num(x)?, num(y)?, num(z)?));
            if let Some(c) = rgb {
                let mut out = [0.0; 3];
                for (k, &ci) in c.iter().enumerate() {
                    let v = num(ci)?;
                    out[k] = if props[ci].1.contains("char") { v / 255.0 } else { v };
                }
                colors.push(out);
            }
            if let Some((s, i)) = labels {
                let int = |i: usize| vals[i].parse::<u32>().map_err(|_| err(format!("bad label '{}'", vals[i])));
                sem.push(int(s)?);
                ins.push(int(i)?);
            }
        }
        cloud = Some(
            PointCloud::new(
                points,
                rgb.map(|_| colors),
                labels.map(|_| sem),
                labels.map(|_| ins),
            )
            .map_err(|e| err(e.to_string()))?,
        );
    }
    cloud.ok_or_else(|| err("no vertex element".into()))
}
