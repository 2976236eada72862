//! Flat binary checkpoint format.
//!
//! Layout, all little-endian:
//!   u32  format version (currently 1)
//!   u64  parameter count
//!   then per parameter:
//!     u64  name length, name bytes (UTF-8)
//!     u64  rank, u64 dims[rank]
//!     f64  values[prod(dims)]
//!
//! Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (name, tensor) in store.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(tensor.rank() as u64).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::BadCheckpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let count = read_u64(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::BadCheckpoint(format!("name not UTF-8: {e}")))?;
        let rank = read_u64(&mut r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut r)? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((
            name,
            Tensor::from_vec(&dims, data).map_err(|e| Error::BadCheckpoint(e.to_string()))?,
        ));
    }
    Ok(out)
}

/// Load a checkpoint into an existing store. Every stored parameter must
/// already be registered with a matching shape, and every registered
/// parameter must be present.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let entries = read(path)?;
    if entries.len() != store.len() {
        return Err(Error::BadCheckpoint(format!(
            "checkpoint has {} parameters, store expects {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, tensor) in entries {
        let current = store.get(&name)?;
        if current.shape() != tensor.shape() {
            return Err(Error::BadCheckpoint(format!(
                "parameter {name}: shape {:?} vs expected {:?}",
                tensor.shape(),
                current.shape()
            )));
        }
        store.set(&name, tensor)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
