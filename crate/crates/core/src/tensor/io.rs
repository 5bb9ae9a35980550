//! Tensor file formats.
//!
//! Binary layout: four little-endian `u32` dims `(C, S, h, w)` followed by
//! `C·S·h·w` little-endian `f64` values in row-major order. Matrices are
//! written as `(rows, cols, 1, 1)` tensors. The JSON debug form is
//! `{"dims": [C, S, h, w], "data": [...]}`.

use std::path::Path;

use thiserror::Error;

use super::{Matrix, Tensor4, TensorError};

const HEADER_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("truncated header: {found} bytes, need 16")]
    TruncatedHeader { found: usize },
    #[error("expected {expected} f64 values ({bytes} bytes incl. header), found {found} bytes")]
    SizeMismatch {
        expected: usize,
        bytes: usize,
        found: usize,
    },
    #[error("invalid tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn to_bytes(t: &Tensor4) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + 8 * t.data().len());
    for d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Tensor4, FormatError> {
    if bytes.len() < HEADER_BYTES {
        return Err(FormatError::TruncatedHeader { found: bytes.len() });
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let raw: [u8; 4] = bytes[4 * i..4 * i + 4].try_into().expect("4 bytes");
        *d = u32::from_le_bytes(raw) as usize;
    }
    let expected = dims.iter().product::<usize>();
    let total = HEADER_BYTES + 8 * expected;
    if bytes.len() != total {
        return Err(FormatError::SizeMismatch {
            expected,
            bytes: total,
            found: bytes.len(),
        });
    }
    let data = bytes[HEADER_BYTES..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Tensor4::new(dims, data)?)
}

pub fn matrix_to_bytes(m: &Matrix) -> Vec<u8> {
    to_bytes(&Tensor4::from_matrix(m))
}

pub fn matrix_from_bytes(bytes: &[u8]) -> Result<Matrix, FormatError> {
    Ok(from_bytes(bytes)?.to_matrix()?)
}

pub fn to_json(t: &Tensor4) -> String {
    serde_json::to_string(t).expect("tensor serializes")
}

pub fn from_json(s: &str) -> Result<Tensor4, FormatError> {
    Ok(serde_json::from_str(s)?)
}

pub fn write_file(path: &Path, t: &Tensor4) -> Result<(), FormatError> {
    std::fs::write(path, to_bytes(t)).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_file(path: &Path) -> Result<Tensor4, FormatError> {
    let bytes = std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}
