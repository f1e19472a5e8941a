//! Binary checkpoint format for parameter stores.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"MRSC"
//! version u16 = 1
//! count   u32
//! entry*  u16 path_len, path bytes (UTF-8), u8 rank, u32 dims[rank],
//!         f64 data (little-endian IEEE-754)
//! ```
//!
//! Entries are written in sorted path order, so saving the same store twice
//! produces identical bytes.

use crate::tensor::{ParamStore, Tensor};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"MRSC";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("checkpoint truncated or corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint path is not valid UTF-8")]
    BadPath,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn save_params<W: Write>(store: &ParamStore, mut out: W) -> Result<(), CheckpointError> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for (path, tensor) in store.iter() {
        let path_bytes = path.as_bytes();
        assert!(path_bytes.len() <= u16::MAX as usize, "path too long");
        out.write_all(&(path_bytes.len() as u16).to_le_bytes())?;
        out.write_all(path_bytes)?;
        let rank = tensor.dims().len();
        assert!(rank <= u8::MAX as usize, "rank too large");
        out.write_all(&[rank as u8])?;
        for &d in tensor.dims() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_params_to_file(store: &ParamStore, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    save_params(store, &mut w)?;
    w.flush()?;
    Ok(())
}

/// In-memory serialization, useful for bit-equality checks.
pub fn params_to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::new();
    save_params(store, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Corrupt(format!("unexpected end of file while reading {what}"))
        } else {
            CheckpointError::Io(e)
        }
    })
}

pub fn load_params<R: Read>(mut input: R) -> Result<ParamStore, CheckpointError> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut u16buf = [0u8; 2];
    read_exact(&mut input, &mut u16buf, "version")?;
    let version = u16::from_le_bytes(u16buf);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut u32buf = [0u8; 4];
    read_exact(&mut input, &mut u32buf, "entry count")?;
    let count = u32::from_le_bytes(u32buf);

    let mut store = ParamStore::new();
    for i in 0..count {
        read_exact(&mut input, &mut u16buf, "path length")?;
        let path_len = u16::from_le_bytes(u16buf) as usize;
        let mut path_bytes = vec![0u8; path_len];
        read_exact(&mut input, &mut path_bytes, "path")?;
        let path = String::from_utf8(path_bytes).map_err(|_| CheckpointError::BadPath)?;

        let mut rank_buf = [0u8; 1];
        read_exact(&mut input, &mut rank_buf, "rank")?;
        let rank = rank_buf[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            read_exact(&mut input, &mut u32buf, "dim")?;
            dims.push(u32::from_le_bytes(u32buf) as usize);
        }
        let numel: usize = dims.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut f64buf = [0u8; 8];
        for _ in 0..numel {
            read_exact(&mut input, &mut f64buf, "tensor data")?;
            data.push(f64::from_le_bytes(f64buf));
        }
        if store.contains(&path) {
            return Err(CheckpointError::Corrupt(format!(
                "duplicate path in entry {i}: {path}"
            )));
        }
        store.insert(&path, Tensor::new(dims, data));
    }
    // strict: nothing may follow the last entry
    let mut extra = [0u8; 1];
    match input.read(&mut extra)? {
        0 => Ok(store),
        _ => Err(CheckpointError::Corrupt(
            "trailing bytes after last entry".into(),
        )),
    }
}

pub fn load_params_from_file(path: &Path) -> Result<ParamStore, CheckpointError> {
    load_params(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample_store() -> ParamStore {
        let mut rng = Rng::seeded(9);
        let mut store = ParamStore::new();
        store.insert("alpha/w", Tensor::glorot(vec![3, 4], 3, 4, &mut rng));
        store.insert("beta/b", Tensor::new(vec![2], vec![-0.5, 0.25]));
        store.insert("chi_1/fc1/w", Tensor::glorot(vec![5], 5, 5, &mut rng));
        store
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = sample_store();
        let bytes = params_to_bytes(&store);
        let loaded = load_params(&bytes[..]).unwrap();
        assert_eq!(params_to_bytes(&loaded), bytes);
        for (path, t) in store.iter() {
            let l = loaded.get(path);
            assert_eq!(l.dims(), t.dims());
            assert_eq!(l.data(), t.data());
        }
    }

    #[test]
    fn empty_store_round_trips() {
        let store = ParamStore::new();
        let bytes = params_to_bytes(&store);
        let loaded = load_params(&bytes[..]).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut bytes = params_to_bytes(&sample_store());
        bytes[0] = b'X';
        assert!(matches!(
            load_params(&bytes[..]),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn bad_version_is_a_format_error() {
        let mut bytes = params_to_bytes(&sample_store());
        bytes[4] = 99;
        assert!(matches!(
            load_params(&bytes[..]),
            Err(CheckpointError::BadVersion(99))
        ));
    }

    #[test]
    fn truncation_is_a_corruption_error() {
        let bytes = params_to_bytes(&sample_store());
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            load_params(cut),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn trailing_bytes_are_a_corruption_error() {
        let mut bytes = params_to_bytes(&sample_store());
        bytes.push(0);
        assert!(matches!(
            load_params(&bytes[..]),
            Err(CheckpointError::Corrupt(_))
        ));
    }
}
