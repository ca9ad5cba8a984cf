//! The `BLTC` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BLTC"  u32 version=1  u32 entry_count
//! per entry:
//!   u16 name_len  name (UTF-8)  u8 dtype (0 = f32)  u8 rank  rank x u64 dims
//!   row-major f32 payload
//! ```
//!
//! Matrices are always written with rank 2. Rank-1 entries are accepted on
//! read and loaded as a single row.

use std::collections::HashSet;
use std::io::{self, Write};

use thiserror::Error;

use crate::matrix::{DenseMatrix, MatrixError};

pub const CONTAINER_MAGIC: [u8; 4] = *b"BLTC";
pub const CONTAINER_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic {0:02x?}, expected \"BLTC\"")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload while reading {0}")]
    TruncatedPayload(&'static str),
    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),
    #[error("non-finite value in entry {name:?} at ({row}, {col})")]
    NonFiniteValue { name: String, row: usize, col: usize },
    #[error("entry name is not valid UTF-8")]
    InvalidName,
    #[error("entry name longer than 65535 bytes")]
    NameTooLong,
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("unsupported rank {0}")]
    UnsupportedRank(u8),
    #[error("dimensions overflow")]
    DimensionOverflow,
    #[error("{0} trailing bytes after last entry")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Named matrices in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorContainer {
    entries: Vec<(String, DenseMatrix)>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u32 {
        CONTAINER_VERSION
    }

    /// Appends an entry; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, m: DenseMatrix) -> Result<(), ContainerError> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(ContainerError::NameTooLong);
        }
        if self.get(&name).is_some() {
            return Err(ContainerError::DuplicateName(name));
        }
        self.entries.push((name, m));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn entries(&self) -> &[(String, DenseMatrix)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Layer names `L` for which an `L.weight` entry exists, sorted.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .entries
            .iter()
            .filter_map(|(n, _)| n.strip_suffix(".weight").map(str::to_owned))
            .collect();
        names.sort();
        names
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&CONTAINER_MAGIC)?;
        w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, m) in &self.entries {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[DTYPE_F32, 2])?;
            w.write_all(&(m.rows() as u64).to_le_bytes())?;
            w.write_all(&(m.cols() as u64).to_le_bytes())?;
            for v in m.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != CONTAINER_MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != CONTAINER_VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let count = r.u32("entry count")?;
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| ContainerError::InvalidName)?
                .to_owned();
            if !seen.insert(name.clone()) {
                return Err(ContainerError::DuplicateName(name));
            }
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(ContainerError::UnsupportedDtype(dtype));
            }
            let rank = r.u8("rank")?;
            let (rows, cols) = match rank {
                1 => (1, r.dim()?),
                2 => (r.dim()?, r.dim()?),
                other => return Err(ContainerError::UnsupportedRank(other)),
            };
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(4).map(|_| n))
                .ok_or(ContainerError::DimensionOverflow)?;
            let payload = r.take(len * 4, "payload")?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let m = DenseMatrix::new(rows, cols, data).map_err(|e| match e {
                MatrixError::NonFinite { row, col } => ContainerError::NonFiniteValue {
                    name: name.clone(),
                    row,
                    col,
                },
                _ => ContainerError::DimensionOverflow,
            })?;
            entries.push((name, m));
        }
        if r.pos != bytes.len() {
            return Err(ContainerError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { entries })
    }
}

/// Parses a container from a byte stream.
pub fn read_container(bytes: &[u8]) -> Result<TensorContainer, ContainerError> {
    TensorContainer::from_bytes(bytes)
}

/// Serializes a container deterministically.
pub fn write_container(c: &TensorContainer) -> Vec<u8> {
    c.to_bytes()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ContainerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(ContainerError::TruncatedPayload(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, ContainerError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn dim(&mut self) -> Result<usize, ContainerError> {
        let d = u64::from_le_bytes(self.take(8, "dims")?.try_into().unwrap());
        usize::try_from(d).map_err(|_| ContainerError::DimensionOverflow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorContainer {
        let mut c = TensorContainer::new();
        c.insert("a", DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap())
            .unwrap();
        c
    }

    #[test]
    fn round_trip_2x2() {
        let c = sample();
        let back = read_container(&write_container(&c)).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.get("a").unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn empty_container_is_twelve_bytes() {
        let bytes = write_container(&TensorContainer::new());
        assert_eq!(bytes, b"BLTC\x01\x00\x00\x00\x00\x00\x00\x00");
    }

    #[test]
    fn determinism() {
        assert_eq!(write_container(&sample()), write_container(&sample()));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = write_container(&sample());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_container(&bytes), Err(ContainerError::BadMagic(_))));
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = write_container(&sample());
        bytes[4] = 2;
        assert!(matches!(
            read_container(&bytes),
            Err(ContainerError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn duplicate_names_rejected_on_read_and_insert() {
        let mut c = sample();
        assert!(matches!(
            c.insert("a", DenseMatrix::zeros(1, 1)),
            Err(ContainerError::DuplicateName(_))
        ));
        // Hand-build a stream with two entries named "a".
        let one = write_container(&sample());
        let entry = &one[12..];
        let mut bytes = b"BLTC\x01\x00\x00\x00\x02\x00\x00\x00".to_vec();
        bytes.extend_from_slice(entry);
        bytes.extend_from_slice(entry);
        assert!(matches!(
            read_container(&bytes),
            Err(ContainerError::DuplicateName(n)) if n == "a"
        ));
    }

    #[test]
    fn truncation_and_trailing_garbage() {
        let bytes = write_container(&sample());
        for cut in [3, 11, 14, bytes.len() - 1] {
            assert!(
                matches!(
                    read_container(&bytes[..cut]),
                    Err(ContainerError::TruncatedPayload(_)) | Err(ContainerError::BadMagic(_))
                ),
                "cut at {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            read_container(&extra),
            Err(ContainerError::TrailingBytes(1))
        ));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let mut bytes = write_container(&sample());
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            read_container(&bytes),
            Err(ContainerError::NonFiniteValue { row: 1, col: 1, .. })
        ));
    }

    #[test]
    fn layer_names_from_weight_suffix() {
        let mut c = TensorContainer::new();
        c.insert("b.weight", DenseMatrix::zeros(1, 2)).unwrap();
        c.insert("b.calib", DenseMatrix::zeros(1, 2)).unwrap();
        c.insert("a.weight", DenseMatrix::zeros(1, 2)).unwrap();
        assert_eq!(c.layer_names(), vec!["a", "b"]);
    }
}
