//! Binary matrix container with a JSON header.
//!
//! Layout: an 8-byte little-endian header length `n`, `n` bytes of UTF-8
//! JSON (which must contain integer `rows` and `cols`), then `rows * cols`
//! complex entries in column-major order, each stored as two little-endian
//! `f64` values (real, imaginary).

use num_complex::Complex64;
use serde_json::Value;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::linalg::CMatrix;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("header is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed container: {0}")]
    Format(String),
}

/// Serialize `matrix` with the given header object; `rows`/`cols` are
/// added (or overwritten) automatically.
pub fn write_matrix<W: Write>(mut w: W, header: &Value, matrix: &CMatrix) -> Result<(), ContainerError> {
    let mut header = match header {
        Value::Object(m) => m.clone(),
        Value::Null => serde_json::Map::new(),
        _ => return Err(ContainerError::Format("header must be a JSON object".into())),
    };
    header.insert("rows".into(), Value::from(matrix.nrows()));
    header.insert("cols".into(), Value::from(matrix.ncols()));
    let text = serde_json::to_vec(&Value::Object(header))?;
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(&text)?;
    let mut buf = Vec::with_capacity(16 * matrix.len());
    for z in matrix.iter() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Read a container back into its header and matrix.
pub fn read_matrix<R: Read>(mut r: R) -> Result<(Value, CMatrix), ContainerError> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let n = u64::from_le_bytes(len) as usize;
    if n > (1 << 30) {
        return Err(ContainerError::Format(format!("implausible header length {n}")));
    }
    let mut text = vec![0u8; n];
    r.read_exact(&mut text)?;
    let header: Value = serde_json::from_slice(&text)?;
    let dim = |key: &str| {
        header
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| ContainerError::Format(format!("header lacks integer `{key}`")))
    };
    let (rows, cols) = (dim("rows")?, dim("cols")?);
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if data.len() != 16 * rows * cols {
        return Err(ContainerError::Format(format!("expected {} payload bytes, found {}", 16 * rows * cols, data.len())));
    }
    let entries = data.chunks_exact(16).map(|c| {
        let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
        Complex64::new(re, im)
    });
    Ok((header, CMatrix::from_iterator(rows, cols, entries)))
}

pub fn write_matrix_file(path: &Path, header: &Value, matrix: &CMatrix) -> Result<(), ContainerError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix(f, header, matrix)
}

pub fn read_matrix_file(path: &Path) -> Result<(Value, CMatrix), ContainerError> {
    read_matrix(std::io::BufReader::new(std::fs::File::open(path)?))
}
