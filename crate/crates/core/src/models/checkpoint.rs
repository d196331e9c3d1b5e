use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelSpec, TensorInfo};
use crate::error::{Error, Result};

const MAGIC: &str = "IEQC1";
/// Bumped whenever [`super::Layout`] ordering changes.
pub const LAYOUT_VERSION: u32 = 1;

/// Text header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layout_version: u32,
    pub spec: ModelSpec,
    pub parameter_count: usize,
    pub tensors: Vec<TensorInfo>,
    /// Free-form training metadata (epochs run, best validation loss, ...).
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

/// Writes `IEQC1\n`, a one-line JSON header, `\n`, then the parameter vector
/// as little-endian f64.
pub fn save_checkpoint(
    params: &ModelParams,
    metadata: serde_json::Map<String, serde_json::Value>,
    path: &Path,
) -> Result<()> {
    let header = CheckpointHeader {
        layout_version: LAYOUT_VERSION,
        spec: params.spec,
        parameter_count: params.len(),
        tensors: params.layout.tensors().to_vec(),
        metadata,
    };
    let mut buf = Vec::with_capacity(params.len() * 8 + 1024);
    buf.extend_from_slice(MAGIC.as_bytes());
    buf.push(b'\n');
    buf.extend_from_slice(serde_json::to_string(&header)?.as_bytes());
    buf.push(b'\n');
    for v in params.flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointHeader)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if line.trim_end() != MAGIC {
        return Err(Error::format(path, "missing IEQC1 magic"));
    }
    line.clear();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    if header.layout_version != LAYOUT_VERSION {
        return Err(Error::format(
            path,
            format!("layout version {} (expected {LAYOUT_VERSION})", header.layout_version),
        ));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != header.parameter_count * 8 {
        return Err(Error::format(
            path,
            format!("{} payload bytes for {} parameters", bytes.len(), header.parameter_count),
        ));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = ModelParams::unflatten(header.spec, values).map_err(|e| Error::format(path, e.to_string()))?;
    if params.layout.tensors() != header.tensors.as_slice() {
        return Err(Error::format(path, "tensor table does not match the model specification"));
    }
    Ok((params, header))
}
