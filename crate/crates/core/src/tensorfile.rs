//! Grids of per-cell vectors on disk: one JSON header line `{"h_c", "w_c",
//! "dim"}` followed by `h_c * w_c * dim` little-endian `f32` values.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridHeader {
    pub h_c: usize,
    pub w_c: usize,
    pub dim: usize,
}

pub fn write(path: &Path, h_c: usize, w_c: usize, dim: usize, values: &[f64]) -> Result<()> {
    debug_assert_eq!(values.len(), h_c * w_c * dim);
    let header = serde_json::to_string(&GridHeader { h_c, w_c, dim }).map_err(|e| Error::json(path, e))?;
    let mut bytes = Vec::with_capacity(header.len() + 1 + 4 * values.len());
    bytes.extend_from_slice(header.as_bytes());
    bytes.push(b'\n');
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(GridHeader, Vec<f64>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: GridHeader = serde_json::from_str(line.trim_end()).map_err(|e| Error::json(path, e))?;
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    let expected = header.h_c * header.w_c * header.dim;
    if raw.len() != 4 * expected {
        return Err(Error::ShapeMismatch(format!(
            "{}: header promises {expected} floats, found {} bytes",
            path.display(),
            raw.len()
        )));
    }
    let values = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((header, values))
}
