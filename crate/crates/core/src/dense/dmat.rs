//! `DMAT1` binary matrix files: the 5 magic bytes `DMAT1`, `u64` rows, `u64`
//! cols (both little-endian), then `rows * cols` little-endian `f32` values in
//! row-major order.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::DenseMatrix;

pub const MAGIC: &[u8; 5] = b"DMAT1";
const HEADER_LEN: usize = 5 + 8 + 8;

#[derive(Debug, Error)]
pub enum DmatError {
    #[error("not a DMAT1 file (bad magic)")]
    BadMagic,
    #[error("DMAT1 payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("DMAT1 file has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("matrix has {found} rows, expected {expected}")]
    RowMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Matrix held at file precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Dmat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Dmat {
    pub fn from_dense(m: &DenseMatrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("dmat shape is consistent")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DmatError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(DmatError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(DmatError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let rows = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
        let expected = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(4))
            .and_then(|v| v.checked_add(HEADER_LEN))
            .ok_or(DmatError::Truncated {
                expected: usize::MAX,
                found: bytes.len(),
            })?;
        if bytes.len() < expected {
            return Err(DmatError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(DmatError::TrailingBytes(bytes.len() - expected));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { rows, cols, data })
    }

    pub fn write(&self, path: &Path) -> Result<(), DmatError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DmatError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Reads and checks the row count.
    pub fn read_expecting_rows(path: &Path, rows: usize) -> Result<Self, DmatError> {
        let m = Self::read(path)?;
        if m.rows != rows {
            return Err(DmatError::RowMismatch {
                expected: rows,
                found: m.rows,
            });
        }
        Ok(m)
    }
}

pub fn write_dense(path: &Path, m: &DenseMatrix) -> Result<(), DmatError> {
    Dmat::from_dense(m).write(path)
}

pub fn read_dense(path: &Path) -> Result<DenseMatrix, DmatError> {
    Ok(Dmat::read(path)?.to_dense())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let m = Dmat {
            rows: 1,
            cols: 2,
            data: vec![1.0, -2.5],
        };
        let b = m.to_bytes();
        assert_eq!(&b[..5], b"DMAT1");
        assert_eq!(&b[5..13], &1u64.to_le_bytes());
        assert_eq!(&b[13..21], &2u64.to_le_bytes());
        assert_eq!(&b[21..25], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 29);
        assert_eq!(Dmat::from_bytes(&b).unwrap(), m);
    }

    #[test]
    fn corrupt_inputs_are_typed_errors() {
        let m = Dmat {
            rows: 2,
            cols: 2,
            data: vec![0.0; 4],
        };
        let mut b = m.to_bytes();
        assert!(matches!(
            Dmat::from_bytes(&b[..b.len() - 1]),
            Err(DmatError::Truncated { .. })
        ));
        b.push(0);
        assert!(matches!(Dmat::from_bytes(&b), Err(DmatError::TrailingBytes(1))));
        b[0] = b'X';
        assert!(matches!(Dmat::from_bytes(&b), Err(DmatError::BadMagic)));
    }
}
