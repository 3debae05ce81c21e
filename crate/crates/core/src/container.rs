//! Little-endian binary array container with JSON sidecars.
//!
//! Layout of a `.bin` file:
//!
//! ```text
//! offset  size      field
//! 0       8         magic  b"CHMMBIN\0"
//! 8       4         version (u32, currently 1)
//! 12      1         dtype   (1 = f64, 2 = i8, 3 = u8)
//! 13      1         ndim
//! 14      2         reserved, zero
//! 16      8*ndim    shape, u64 each, outermost first
//! ...     payload   row-major elements, little-endian
//! ```
//!
//! Metadata (seeds, dimensions, transform parameters, training options)
//! lives next to the arrays as pretty-printed JSON.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CHMMBIN\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F64 = 1,
    I8 = 2,
    U8 = 3,
}

impl DType {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::F64),
            2 => Some(Self::I8),
            3 => Some(Self::U8),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Self::F64 => 8,
            Self::I8 | Self::U8 => 1,
        }
    }
}

/// A decoded array: shape plus raw little-endian payload.
#[derive(Debug, Clone, PartialEq)]
pub struct RawArray {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

fn container_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Container {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn encode(dtype: DType, shape: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * shape.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.push(shape.len() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(payload);
    out
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<RawArray> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(container_err(path, "missing CHMMBIN magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(container_err(path, format!("unsupported version {version}")));
    }
    let dtype =
        DType::from_code(bytes[12]).ok_or_else(|| container_err(path, format!("unknown dtype code {}", bytes[12])))?;
    let ndim = bytes[13] as usize;
    let shape_end = HEADER_LEN + 8 * ndim;
    if bytes.len() < shape_end {
        return Err(container_err(path, "truncated shape header"));
    }
    let shape: Vec<usize> = bytes[HEADER_LEN..shape_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let expected = shape.iter().product::<usize>() * dtype.width();
    let payload = &bytes[shape_end..];
    if payload.len() != expected {
        return Err(container_err(
            path,
            format!("payload has {} bytes, shape needs {expected}", payload.len()),
        ));
    }
    Ok(RawArray {
        dtype,
        shape,
        payload: payload.to_vec(),
    })
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn write_f64(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    assert_eq!(shape.iter().product::<usize>(), data.len());
    let payload: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
    write_atomic(path, &encode(DType::F64, shape, &payload))
}

pub fn write_i8(path: &Path, shape: &[usize], data: &[i8]) -> Result<()> {
    let payload: Vec<u8> = data.iter().map(|&x| x as u8).collect();
    write_atomic(path, &encode(DType::I8, shape, &payload))
}

pub fn write_u8(path: &Path, shape: &[usize], data: &[u8]) -> Result<()> {
    write_atomic(path, &encode(DType::U8, shape, data))
}

pub fn read(path: &Path) -> Result<RawArray> {
    let bytes = fs::read(path)?;
    decode(path, &bytes)
}

fn expect(path: &Path, raw: &RawArray, dtype: DType, ndim: usize) -> Result<()> {
    if raw.dtype != dtype || raw.shape.len() != ndim {
        return Err(container_err(
            path,
            format!(
                "expected {dtype:?} with {ndim} dims, found {:?} with shape {:?}",
                raw.dtype, raw.shape
            ),
        ));
    }
    Ok(())
}

fn f64_payload(raw: &RawArray) -> Vec<f64> {
    raw.payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn save_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let data: Vec<f64> = m.iter().copied().collect();
    write_f64(path, &[m.nrows(), m.ncols()], &data)
}

pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    let raw = read(path)?;
    expect(path, &raw, DType::F64, 2)?;
    Array2::from_shape_vec((raw.shape[0], raw.shape[1]), f64_payload(&raw))
        .map_err(|e| container_err(path, e.to_string()))
}

pub fn save_vector(path: &Path, v: &Array1<f64>) -> Result<()> {
    let data: Vec<f64> = v.iter().copied().collect();
    write_f64(path, &[v.len()], &data)
}

pub fn load_vector(path: &Path) -> Result<Array1<f64>> {
    let raw = read(path)?;
    expect(path, &raw, DType::F64, 1)?;
    Ok(Array1::from(f64_payload(&raw)))
}

/// Labels are stored as `i8` (±1).
pub fn save_labels(path: &Path, y: &Array1<f64>) -> Result<()> {
    let data: Vec<i8> = y.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect();
    write_i8(path, &[data.len()], &data)
}

pub fn load_labels(path: &Path) -> Result<Array1<f64>> {
    let raw = read(path)?;
    expect(path, &raw, DType::I8, 1)?;
    Ok(raw.payload.iter().map(|&b| b as i8 as f64).collect())
}

pub fn save_bytes(path: &Path, data: &[u8]) -> Result<()> {
    write_u8(path, &[data.len()], data)
}

pub fn load_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = read(path)?;
    expect(path, &raw, DType::U8, 1)?;
    Ok(raw.payload)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// `dir/name`, as a convenience for the multi-file entities.
pub fn entry(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode(DType::F64, &[2, 3], &[0u8; 48]);
        assert_eq!(&bytes[..8], b"CHMMBIN\0");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(bytes[12], 1);
        assert_eq!(bytes[13], 2);
        assert_eq!(&bytes[16..24], &2u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &3u64.to_le_bytes());
        assert_eq!(bytes.len(), 32 + 48);
    }

    #[test]
    fn rejects_bad_magic_and_short_payload() {
        let p = Path::new("x.bin");
        assert!(decode(p, b"NOTCHMM\0\x01\0\0\0\x01\x01\0\0").is_err());
        let mut bytes = encode(DType::F64, &[4], &[0u8; 32]);
        bytes.pop();
        assert!(decode(p, &bytes).is_err());
    }

    proptest! {
        #[test]
        fn matrix_round_trip(
            (rows, cols, data) in (1usize..6, 1usize..6)
                .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(any::<f64>(), r * c)))
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.bin");
            let m = Array2::from_shape_vec((rows, cols), data).unwrap();
            save_matrix(&path, &m).unwrap();
            let back = load_matrix(&path).unwrap();
            prop_assert_eq!(m.mapv(f64::to_bits), back.mapv(f64::to_bits));
        }
    }
}
