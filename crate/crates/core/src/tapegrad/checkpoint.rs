//! Flat binary parameter manifest.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "AMCK"
//! version  u8       1
//! count    u32      number of entries
//! entry*   name_len u32, name (UTF-8), rank u32, dims u64 × rank,
//!          value_count u64, values f64 × value_count
//! ```
//!
//! Values are always stored as `f64` regardless of the in-memory scalar.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;

use super::Tensor;

pub const MAGIC: [u8; 4] = *b"AMCK";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u8),
    #[error("corrupt checkpoint entry {name:?}: {detail}")]
    Corrupt { name: String, detail: String },
}

/// One named tensor in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub tensor: Tensor<f64>,
}

impl Entry {
    pub fn new<S: Scalar>(name: impl Into<String>, tensor: &Tensor<S>) -> Self {
        Self {
            name: name.into(),
            tensor: tensor.cast(),
        }
    }
}

pub fn write_to(mut w: impl Write, entries: &[Entry]) -> Result<(), CheckpointError> {
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for entry in entries {
        let name = entry.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = entry.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&(entry.tensor.len() as u64).to_le_bytes())?;
        for &x in entry.tensor.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_from(mut r: impl Read) -> Result<Vec<Entry>, CheckpointError> {
    let magic = read_array::<4>(&mut r)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let [version] = read_array::<1>(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Corrupt {
            name: String::new(),
            detail: e.to_string(),
        })?;
        let rank = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_array(&mut r)?) as usize);
        }
        let len = u64::from_le_bytes(read_array(&mut r)?) as usize;
        if shape.iter().product::<usize>() != len {
            return Err(CheckpointError::Corrupt {
                name,
                detail: format!("shape {shape:?} does not hold {len} values"),
            });
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt {
            name: name.clone(),
            detail: e.to_string(),
        })?;
        entries.push(Entry { name, tensor });
    }
    Ok(entries)
}

pub fn save(path: &Path, entries: &[Entry]) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_to(&mut buf, entries)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Entry>, CheckpointError> {
    let bytes = std::fs::read(path)?;
    read_from(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let entries = vec![Entry::new("w", &Tensor::<f64>::from_rows(&[&[1.5]]).unwrap())];
        let mut buf = Vec::new();
        write_to(&mut buf, &entries).unwrap();
        assert_eq!(&buf[..4], b"AMCK");
        assert_eq!(buf[4], VERSION);
        assert_eq!(u32::from_le_bytes(buf[5..9].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[9..13].try_into().unwrap()), 1);
        assert_eq!(buf[13], b'w');
        // name(1) + rank(4) + 2 dims(16) + count(8) + one f64(8)
        assert_eq!(buf.len(), 13 + 1 + 4 + 16 + 8 + 8);
        assert_eq!(f64::from_le_bytes(buf[buf.len() - 8..].try_into().unwrap()), 1.5);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_from(&b"NOPE\x01\0\0\0\0"[..]),
            Err(CheckpointError::BadMagic(_))
        ));
        assert!(matches!(
            read_from(&b"AMCK\x07\0\0\0\0"[..]),
            Err(CheckpointError::Version(7))
        ));
        let entries = vec![Entry::new("w", &Tensor::<f64>::ones(2, 2))];
        let mut buf = Vec::new();
        write_to(&mut buf, &entries).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_from(buf.as_slice()), Err(CheckpointError::Io(_))));
    }

    proptest! {
        #[test]
        fn roundtrip(rows in 1usize..4, cols in 1usize..4, seed in any::<u64>(), name in "[a-z.]{1,12}") {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| ((seed.wrapping_mul(i as u64 + 1) % 1000) as f64) / 7.0 - 50.0)
                .collect();
            let t = Tensor::matrix(rows, cols, data).unwrap();
            let entries = vec![Entry::new(name.clone(), &t), Entry::new("b", &Tensor::<f64>::zeros(1, 3))];
            let mut buf = Vec::new();
            write_to(&mut buf, &entries).unwrap();
            let back = read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back, entries);
        }
    }
}
