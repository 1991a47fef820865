//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "AMPFCKPT"
//! version   u32      1
//! count     u32      number of tensors
//! repeated count times:
//!   name_len  u32, name (UTF-8)
//!   trainable u8
//!   ndim      u32, dims u64 × ndim
//!   data      f64 × product(dims)
//! ```
//!
//! A JSON manifest describing the same tensors plus free-form metadata is
//! written next to the binary by [`manifest`].

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{NumericsError, ParamStore, Result, Tensor};

pub const MAGIC: &[u8; 8] = b"AMPFCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<TensorEntry>,
    pub meta: serde_json::Value,
}

pub fn manifest(store: &ParamStore, meta: serde_json::Value) -> Manifest {
    Manifest {
        format: "ampforge-checkpoint".to_string(),
        version: VERSION,
        tensors: store
            .iter()
            .map(|(name, p)| TensorEntry {
                name: name.to_string(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect(),
        meta,
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, p) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[u8::from(p.trainable)])?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NumericsError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NumericsError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| NumericsError::Checkpoint("tensor name is not UTF-8".into()))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(name, Tensor::new(shape, data)?, flag[0] != 0)?;
    }
    Ok(store)
}
