//! `SWAPMAT1` binary matrices: 8-byte magic, u32 version, u64 rows, u64
//! columns, then row-major little-endian f64 values.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use swap_core::ewr::GradientMatrix;

use crate::error::{io_err, CliError, Result};

pub const MAGIC: &[u8; 8] = b"SWAPMAT1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

pub fn encode_matrix(values: &Array2<f64>) -> Vec<u8> {
    let (n, p) = values.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * p);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(p as u64).to_le_bytes());
    // Iterating an ndarray visits elements in logical row-major order
    // regardless of memory layout.
    for v in values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Validates magic, version and payload length before allocating.
pub fn decode_matrix(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(CliError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CliError::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CliError::BadVersion(version));
    }
    let n = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let p = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
    let expected = n
        .checked_mul(p)
        .and_then(|c| c.checked_mul(8))
        .and_then(|b| b.checked_add(HEADER_LEN as u64))
        .filter(|&b| usize::try_from(b).is_ok())
        .ok_or(CliError::SizeOverflow { n, p })?;
    if bytes.len() as u64 != expected {
        return Err(CliError::Truncated {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Array2::from_shape_vec((n as usize, p as usize), values).expect("length checked above"))
}

pub fn write_matrix(path: &Path, values: &Array2<f64>) -> Result<()> {
    fs::write(path, encode_matrix(values)).map_err(io_err(path))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    decode_matrix(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_gradients(path: &Path, g: &GradientMatrix) -> Result<()> {
    write_matrix(path, &g.values().to_owned())
}

pub fn read_gradients(path: &Path) -> Result<GradientMatrix> {
    Ok(GradientMatrix::new(read_matrix(path)?)?)
}
