//! Atomic writes and the flat-float container used for probability maps and
//! model parameters.
//!
//! Container layout: one line of JSON (the header, terminated by `\n`)
//! followed by the payload as little-endian IEEE-754 `f32` values.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ProbMap;

/// Writes through a temporary sibling file and renames it over `path` only
/// after `fill` succeeded. On failure the temporary file is removed and any
/// previous content of `path` is left untouched.
pub fn atomic_write<F>(path: impl AsRef<Path>, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let path = path.as_ref();
    let tmp = temp_sibling(path);
    let result = (|| {
        let file = fs::File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        let file = w.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn write_string(path: impl AsRef<Path>, content: &str) -> Result<()> {
    atomic_write(path, |w| w.write_all(content.as_bytes()))
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

pub fn write_float_container<H: Serialize>(path: impl AsRef<Path>, header: &H, values: &[f64]) -> Result<()> {
    let mut line = serde_json::to_vec(header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    line.push(b'\n');
    atomic_write(path, |w| {
        w.write_all(&line)?;
        for &v in values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    })
}

pub fn read_float_container<H: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(H, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::Malformed { path: path.into(), reason };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("missing header line".into()))?;
    let header: H = serde_json::from_slice(&bytes[..nl]).map_err(|e| malformed(format!("header: {e}")))?;
    let payload = &bytes[nl + 1..];
    if payload.len() % 4 != 0 {
        return Err(Error::Truncated { path: path.into(), reason: format!("{} payload bytes", payload.len()) });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((header, values))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbMapHeader {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub dtype: String,
}

/// Stores a probability map pixel-major (`[pixel][class]`).
pub fn save_prob_map(map: &ProbMap, path: impl AsRef<Path>) -> Result<()> {
    let header = ProbMapHeader {
        width: map.width(),
        height: map.height(),
        num_classes: map.num_classes(),
        dtype: "f32le".into(),
    };
    write_float_container(path, &header, map.probs())
}

/// Loads a probability map; values are renormalized per pixel to undo `f32` rounding.
pub fn load_prob_map(path: impl AsRef<Path>) -> Result<ProbMap> {
    let path = path.as_ref();
    let (h, mut values): (ProbMapHeader, Vec<f64>) = read_float_container(path)?;
    if h.dtype != "f32le" {
        return Err(Error::Malformed { path: path.into(), reason: format!("dtype {}", h.dtype) });
    }
    let expected = h.width * h.height * h.num_classes;
    if values.len() != expected {
        return Err(Error::Truncated { path: path.into(), reason: format!("{} of {expected} values", values.len()) });
    }
    for px in values.chunks_exact_mut(h.num_classes.max(1)) {
        let s: f64 = px.iter().sum();
        if s > 0.0 && s.is_finite() {
            px.iter_mut().for_each(|p| *p /= s);
        }
    }
    ProbMap::new(h.width, h.height, h.num_classes, values)
        .map_err(|e| Error::Malformed { path: path.into(), reason: e.to_string() })
}
