//! Checkpoint file layout:
//!
//! ```text
//! gspnkit-ckpt-1\n
//! precision <f32|f64>\n
//! params <count>\n
//! <name> <dims joined by 'x', or '-' for a scalar>\n   (count lines)
//! end\n
//! <little-endian values of every parameter, in manifest order>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AutodiffError, ParamStore, Precision, Real, Tensor};

pub const CHECKPOINT_TAG: &str = "gspnkit-ckpt-1";

pub fn encode_checkpoint<T: Real>(store: &ParamStore<T>) -> Result<Vec<u8>, AutodiffError> {
    let mut out = Vec::new();
    let header_err = |e: std::io::Error| AutodiffError::Checkpoint(e.to_string());
    writeln!(out, "{CHECKPOINT_TAG}").map_err(header_err)?;
    writeln!(out, "precision {}", T::PRECISION.as_str()).map_err(header_err)?;
    writeln!(out, "params {}", store.len()).map_err(header_err)?;
    for id in store.ids() {
        let name = store.name(id);
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(AutodiffError::Checkpoint(format!("parameter name {name:?} has whitespace")));
        }
        let shape = store.value(id).shape();
        let dims = if shape.is_empty() {
            "-".to_string()
        } else {
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
        };
        writeln!(out, "{name} {dims}").map_err(header_err)?;
    }
    writeln!(out, "end").map_err(header_err)?;
    for id in store.ids() {
        for &v in store.value(id).data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

/// Parses a checkpoint, converting values to `T` when the stored precision differs.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<ParamStore<T>, AutodiffError> {
    let bad = |m: &str| AutodiffError::Checkpoint(m.to_string());
    let mut pos = 0usize;
    let mut next_line = || -> Result<&str, AutodiffError> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not utf-8"))
    };
    let tag = next_line()?;
    if tag != CHECKPOINT_TAG {
        return Err(AutodiffError::Checkpoint(format!("unsupported checkpoint version {tag:?}")));
    }
    let precision = next_line()?
        .strip_prefix("precision ")
        .and_then(Precision::parse)
        .ok_or_else(|| bad("bad precision line"))?;
    let count: usize = next_line()?
        .strip_prefix("params ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| bad("bad params line"))?;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line()?;
        let (name, dims) = line.split_once(' ').ok_or_else(|| bad("bad manifest line"))?;
        let shape: Vec<usize> = if dims == "-" {
            Vec::new()
        } else {
            dims.split('x').map(|d| d.parse().map_err(|_| bad("bad dimension"))).collect::<Result<_, _>>()?
        };
        manifest.push((name.to_string(), shape));
    }
    if next_line()? != "end" {
        return Err(bad("missing manifest terminator"));
    }
    let width = precision.byte_width();
    let mut store = ParamStore::new();
    for (name, shape) in manifest {
        let n: usize = shape.iter().product();
        let need = n * width;
        if bytes.len() < pos + need {
            return Err(bad("truncated data"));
        }
        let chunk = &bytes[pos..pos + need];
        pos += need;
        let values: Vec<T> = match precision {
            Precision::F32 => chunk.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
            Precision::F64 => chunk.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
        };
        store.add(name, Tensor::new(shape, values)?)?;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after data"));
    }
    Ok(store)
}

pub fn save_checkpoint<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<(), AutodiffError> {
    let bytes = encode_checkpoint(store)?;
    fs::write(path, bytes).map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ParamStore<T>, AutodiffError> {
    let bytes =
        fs::read(path).map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
