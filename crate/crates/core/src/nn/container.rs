//! Flat parameter container.
//!
//! ```text
//! offset  size   field
//! 0       4      magic "PSVH"
//! 4       1      version (2 = parameter vector)
//! 5       4      N, u32 little-endian
//! 9       8·N    values, f64 little-endian
//! ```
//!
//! A JSON sidecar at `<path>.json` names the tensors packed in the vector.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxelgrid::GRID_MAGIC;

pub const PARAMS_VERSION: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamManifest {
    pub total: usize,
    pub tensors: Vec<TensorEntry>,
    /// Free-form metadata, e.g. the architecture that produced the weights.
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl ParamManifest {
    pub fn validate(&self) -> Result<()> {
        let mut end = 0;
        for t in &self.tensors {
            if t.offset != end || t.shape.iter().product::<usize>() != t.len {
                return Err(Error::Format(format!("tensor {:?} is not packed contiguously", t.name)));
            }
            end += t.len;
        }
        if end != self.total {
            return Err(Error::Format(format!("tensors cover {end} of {} values", self.total)));
        }
        Ok(())
    }
}

pub fn write_params<W: Write>(mut w: W, values: &[f64]) -> Result<()> {
    w.write_all(GRID_MAGIC)?;
    w.write_all(&[PARAMS_VERSION])?;
    w.write_all(&(values.len() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_params<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut header = [0u8; 9];
    r.read_exact(&mut header).map_err(|_| Error::Format("truncated parameter header".into()))?;
    if &header[..4] != GRID_MAGIC || header[4] != PARAMS_VERSION {
        return Err(Error::Format("not a parameter container".into()));
    }
    let n = u32::from_le_bytes(header[5..9].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != n * 8 {
        return Err(Error::Format(format!("expected {} payload bytes, found {}", n * 8, payload.len())));
    }
    Ok(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the container at `path` and the manifest at `<path>.json`.
pub fn save_params(path: impl AsRef<Path>, values: &[f64], manifest: &ParamManifest) -> Result<()> {
    manifest.validate()?;
    if manifest.total != values.len() {
        return Err(Error::ShapeMismatch(format!(
            "manifest describes {} values, vector has {}",
            manifest.total,
            values.len()
        )));
    }
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    write_params(&mut w, values)?;
    w.flush()?;
    std::fs::write(sidecar(path), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<(Vec<f64>, ParamManifest)> {
    let path = path.as_ref();
    let values = read_params(BufReader::new(File::open(path)?))?;
    let manifest: ParamManifest = serde_json::from_str(&std::fs::read_to_string(sidecar(path))?)?;
    manifest.validate()?;
    if manifest.total != values.len() {
        return Err(Error::Format(format!(
            "sidecar describes {} values, container holds {}",
            manifest.total,
            values.len()
        )));
    }
    Ok((values, manifest))
}
