//! Dataset, initial-state and origin-flag files.
//!
//! Dataset (`.ards`), little-endian:
//!
//! ```text
//! "ARDS" | version u16 | n u32 | m u32 | count u64 | flags u8
//! count x (s[n], a[m], r'[1], s'[n]) reals
//! ```
//!
//! Flag bit 0 set means 64-bit reals, clear means 32-bit. The initial-state
//! sidecar (`.ars0`) is `"ARS0" | version u16 | n u32 | count u64 | flags u8`
//! followed by `count x s[n]`. The origin sidecar written by augmentation
//! is `"ARDO" | version u16 | count u64` followed by one byte per
//! transition (0 recorded, 1 synthetic).

use std::path::Path;

use super::{atomic_write, ByteReader};
use crate::data::TransitionDataset;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"ARDS";
pub const INITIAL_STATES_MAGIC: &[u8; 4] = b"ARS0";
pub const ORIGIN_MAGIC: &[u8; 4] = b"ARDO";
pub const DATASET_VERSION: u16 = 1;

const DATASET_HEADER: usize = 4 + 2 + 4 + 4 + 8 + 1;
const INITIAL_HEADER: usize = 4 + 2 + 4 + 8 + 1;
const ORIGIN_HEADER: usize = 4 + 2 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RealWidth {
    F32,
    #[default]
    F64,
}

impl RealWidth {
    pub fn bytes(self) -> usize {
        match self {
            RealWidth::F32 => 4,
            RealWidth::F64 => 8,
        }
    }

    fn flag(self) -> u8 {
        match self {
            RealWidth::F32 => 0,
            RealWidth::F64 => 1,
        }
    }

    fn from_flags(flags: u8) -> Self {
        if flags & 1 == 1 {
            RealWidth::F64
        } else {
            RealWidth::F32
        }
    }

    fn push(self, out: &mut Vec<u8>, v: f64) {
        match self {
            RealWidth::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            RealWidth::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }

    fn decode(self, raw: &[u8]) -> Vec<f64> {
        match self {
            RealWidth::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            RealWidth::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        }
    }
}

/// Exact size in bytes of a dataset file with these dimensions.
pub fn dataset_file_len(n: usize, m: usize, count: usize, width: RealWidth) -> usize {
    DATASET_HEADER + count * (2 * n + m + 1) * width.bytes()
}

pub fn encode_dataset(ds: &TransitionDataset, width: RealWidth) -> Vec<u8> {
    let (n, m) = (ds.state_dim(), ds.action_dim());
    let mut out = Vec::with_capacity(dataset_file_len(n, m, ds.len(), width));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.push(width.flag());
    for t in ds.iter() {
        for &v in t.state.iter().chain(t.action).chain([&t.reward]).chain(t.next_state) {
            width.push(&mut out, v);
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8], origin: &Path) -> Result<TransitionDataset> {
    let mut r = ByteReader::new(bytes, origin);
    r.expect_magic(DATASET_MAGIC)?;
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(Error::format(origin, format!("unsupported dataset version {version}")));
    }
    let n = r.u32()? as usize;
    let m = r.u32()? as usize;
    let count = r.u64()? as usize;
    let width = RealWidth::from_flags(r.u8()?);
    let expected = (count as u128) * ((2 * n + m + 1) as u128) * width.bytes() as u128 + DATASET_HEADER as u128;
    if expected != bytes.len() as u128 {
        return Err(Error::format(
            origin,
            format!(
                "file length {} does not match header (n = {n}, m = {m}, count = {count}): expected {expected} bytes",
                bytes.len()
            ),
        ));
    }
    let record = 2 * n + m + 1;
    let values = width.decode(r.rest());
    let mut ds = TransitionDataset::with_capacity(n, m, count);
    for rec in values.chunks_exact(record) {
        ds.push(&rec[..n], &rec[n..n + m], rec[n + m], &rec[n + m + 1..])?;
    }
    ds.check_finite().map_err(|e| Error::format(origin, e.to_string()))?;
    Ok(ds)
}

pub fn write_dataset(path: &Path, ds: &TransitionDataset, width: RealWidth) -> Result<()> {
    atomic_write(path, &encode_dataset(ds, width))
}

pub fn read_dataset(path: &Path) -> Result<TransitionDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, path)
}

pub fn write_initial_states(path: &Path, states: &[Vec<f64>], n: usize, width: RealWidth) -> Result<()> {
    let mut out = Vec::with_capacity(INITIAL_HEADER + states.len() * n * width.bytes());
    out.extend_from_slice(INITIAL_STATES_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(states.len() as u64).to_le_bytes());
    out.push(width.flag());
    for s in states {
        if s.len() != n {
            return Err(Error::InputShape(format!("initial state has {} entries, expected {n}", s.len())));
        }
        for &v in s {
            width.push(&mut out, v);
        }
    }
    atomic_write(path, &out)
}

pub fn read_initial_states(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    r.expect_magic(INITIAL_STATES_MAGIC)?;
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(Error::format(path, format!("unsupported initial-state version {version}")));
    }
    let n = r.u32()? as usize;
    let count = r.u64()? as usize;
    let width = RealWidth::from_flags(r.u8()?);
    let expected = INITIAL_HEADER as u128 + (count as u128) * (n as u128) * width.bytes() as u128;
    if expected != bytes.len() as u128 {
        return Err(Error::format(
            path,
            format!("file length {} does not match header: expected {expected} bytes", bytes.len()),
        ));
    }
    let values = width.decode(r.rest());
    if n == 0 {
        return Ok(vec![Vec::new(); count]);
    }
    Ok(values.chunks_exact(n).map(<[f64]>::to_vec).collect())
}

pub fn write_origin_flags(path: &Path, synthetic: &[bool]) -> Result<()> {
    let mut out = Vec::with_capacity(ORIGIN_HEADER + synthetic.len());
    out.extend_from_slice(ORIGIN_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(synthetic.len() as u64).to_le_bytes());
    out.extend(synthetic.iter().map(|&s| s as u8));
    atomic_write(path, &out)
}

pub fn read_origin_flags(path: &Path) -> Result<Vec<bool>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    r.expect_magic(ORIGIN_MAGIC)?;
    let _version = r.u16()?;
    let count = r.u64()? as usize;
    let rest = r.rest();
    if rest.len() != count {
        return Err(Error::format(
            path,
            format!("expected {count} origin flags, found {}", rest.len()),
        ));
    }
    rest.iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(path, format!("invalid origin flag {other}"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(count: usize) -> TransitionDataset {
        let mut ds = TransitionDataset::new(5, 1);
        for i in 0..count {
            let x = i as f64;
            ds.push(&[x, x + 0.5, -x, 1.0, 2.0], &[0.25 * x], -x * x, &[x + 1.0, 0.0, 0.0, 0.0, 3.0])
                .unwrap();
        }
        ds
    }

    #[test]
    fn cartpole_sized_file_length() {
        let bytes = encode_dataset(&dataset(100), RealWidth::F64);
        assert_eq!(bytes.len(), 23 + 100 * (5 + 1 + 1 + 5) * 8);
        assert_eq!(bytes.len(), dataset_file_len(5, 1, 100, RealWidth::F64));
    }

    #[test]
    fn truncated_file_names_lengths() {
        let mut bytes = encode_dataset(&dataset(10), RealWidth::F64);
        let full = bytes.len();
        bytes.truncate(full - 3);
        let err = decode_dataset(&bytes, Path::new("d.ards")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&full.to_string()) && msg.contains(&(full - 3).to_string()), "{msg}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn f32_files_decode() {
        let ds = dataset(3);
        let bytes = encode_dataset(&ds, RealWidth::F32);
        assert_eq!(bytes.len(), dataset_file_len(5, 1, 3, RealWidth::F32));
        let back = decode_dataset(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn sidecars_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s0 = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        let p = dir.path().join("s0.ars0");
        write_initial_states(&p, &s0, 2, RealWidth::F64).unwrap();
        assert_eq!(read_initial_states(&p).unwrap(), s0);
        let q = dir.path().join("origin.ardo");
        write_origin_flags(&q, &[false, true, true]).unwrap();
        assert_eq!(read_origin_flags(&q).unwrap(), vec![false, true, true]);
    }

    proptest! {
        #[test]
        fn encode_decode_encode_is_byte_identical(
            rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 7), 0..12)
        ) {
            let mut ds = TransitionDataset::new(3, 0);
            for r in &rows {
                ds.push(&r[0..3], &[], r[3], &r[4..7]).unwrap();
            }
            let bytes = encode_dataset(&ds, RealWidth::F64);
            let back = decode_dataset(&bytes, Path::new("p")).unwrap();
            prop_assert_eq!(&back, &ds);
            prop_assert_eq!(encode_dataset(&back, RealWidth::F64), bytes);
        }
    }
}
