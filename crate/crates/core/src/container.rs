//! The `CMME` binary embedding container.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"CMME"`                         |
//! | 4      | 2    | `u16` version, currently 1              |
//! | 6      | 1    | `u8` dtype, 0 = float32 LE              |
//! | 7      | 1    | `u8` flags, bit 0 = rows normalized     |
//! | 8      | 8    | `u64` rows                              |
//! | 16     | 8    | `u64` dim                               |
//! | 24     | 4·rows·dim | float32 values, row-major         |
//! | end-4  | 4    | CRC-32 (IEEE) of every preceding byte   |
//!
//! The normalized flag is advisory: [`decode`] re-verifies every row norm.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CMME";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const FLAG_NORMALIZED: u8 = 0b0000_0001;
pub const HEADER_LEN: usize = 24;
pub const CHECKSUM_LEN: usize = 4;

/// Row norms of a matrix flagged normalized must lie within this distance of 1.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// Dense row-major matrix of 32-bit feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Builds a matrix and checks every invariant: non-empty shape, finite
    /// values, and unit rows when `normalized` is set.
    pub fn new(rows: usize, dim: usize, values: Vec<f32>, normalized: bool) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::InvalidShape {
                rows,
                dim,
                reason: "rows and dim must both be at least 1",
            });
        }
        if rows.checked_mul(dim) != Some(values.len()) {
            return Err(Error::InvalidShape {
                rows,
                dim,
                reason: "value count does not equal rows * dim",
            });
        }
        let matrix = Self {
            rows,
            dim,
            values,
            normalized,
        };
        matrix.validate()?;
        Ok(matrix)
    }

    pub fn from_rows(rows: &[Vec<f32>], normalized: bool) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: bad.len(),
            });
        }
        Self::new(rows.len(), dim, rows.concat(), normalized)
    }

    fn validate(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: i / self.dim,
                    col: i % self.dim,
                });
            }
        }
        if self.normalized {
            for row in 0..self.rows {
                let norm = l2_norm(self.row(row));
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::NotNormalized { row, norm });
                }
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.dim)
    }

    /// Scales every row to unit L2 norm.
    ///
    /// Fails with [`Error::ZeroNorm`] naming the first all-zero row.
    pub fn normalize_rows(&self) -> Result<Self> {
        let mut values = Vec::with_capacity(self.values.len());
        for (i, row) in self.iter_rows().enumerate() {
            let norm = l2_norm(row);
            if norm == 0.0 {
                return Err(Error::ZeroNorm { row: i });
            }
            values.extend(row.iter().map(|&v| (f64::from(v) / norm) as f32));
        }
        Self::new(self.rows, self.dim, values, true)
    }

    /// Selects a subset of rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} out of range for {} rows",
                    self.rows
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.dim, values, self.normalized)
    }
}

pub(crate) fn l2_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// Serializes a matrix into container bytes.
pub fn encode(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let payload = matrix.values.len() * 4;
    let mut out = Vec::with_capacity(HEADER_LEN + payload + CHECKSUM_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(if matrix.normalized {
        FLAG_NORMALIZED
    } else {
        0
    });
    out.extend_from_slice(&(matrix.rows as u64).to_le_bytes());
    out.extend_from_slice(&(matrix.dim as u64).to_le_bytes());
    for v in &matrix.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses and validates container bytes.
pub fn decode(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedHeader { len: bytes.len() });
    }
    if bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(Error::BadMagic { found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedHeader { len: bytes.len() });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = bytes[6];
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let flags = bytes[7];
    if flags & !FLAG_NORMALIZED != 0 {
        return Err(Error::UnsupportedFlags(flags));
    }
    let rows = read_u64(&bytes[8..16]);
    let dim = read_u64(&bytes[16..24]);

    let actual = bytes.len() as u64;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add((HEADER_LEN + CHECKSUM_LEN) as u64));
    let expected = match expected {
        Some(e) => e,
        None => {
            return Err(Error::TruncatedPayload {
                expected: u64::MAX,
                actual,
            })
        }
    };
    if actual < expected {
        return Err(Error::TruncatedPayload { expected, actual });
    }
    if actual > expected {
        return Err(Error::TrailingBytes { expected, actual });
    }

    let body_end = bytes.len() - CHECKSUM_LEN;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4-byte checksum"));
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    // Both fit in usize: the payload length was already matched against an in-memory slice.
    let (rows, dim) = (rows as usize, dim as usize);
    let values = bytes[HEADER_LEN..body_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte value")))
        .collect();
    EmbeddingMatrix::new(rows, dim, values, flags & FLAG_NORMALIZED != 0)
}

fn read_u64(bytes: &[u8]) -> u64 {
    u64::from_le_bytes(bytes.try_into().expect("8-byte field"))
}

pub fn write_container(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(matrix)).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_container(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
