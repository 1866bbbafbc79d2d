//! `MGC1` checkpoint files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "MGC1"
//! u32 parameter count
//! per parameter: u32 name length, UTF-8 name, 4 x u32 dims (n, c, h, w),
//!                u64 offset of its first value in the value block
//! f64 values, parameters back to back in manifest order
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const MGC1_MAGIC: &[u8; 4] = b"MGC1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Shape,
    pub offset: u64,
}

pub fn write_checkpoint<T: Scalar, W: Write>(store: &ParamStore<T>, mut w: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MGC1_MAGIC);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        for d in p.tensor.shape().dims() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&offset.to_le_bytes());
        offset += p.tensor.shape().numel() as u64;
    }
    for (_, p) in store.iter() {
        for v in p.tensor.data() {
            buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a checkpoint into `(manifest, tensors)`.
pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<Vec<(ManifestEntry, Tensor<T>)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MGC1_MAGIC {
        return Err(Error::usage(format!("not an MGC1 checkpoint (magic {magic:?})")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::usage("checkpoint parameter name is not UTF-8"))?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u32(&mut r)? as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])?;
        let offset = read_u64(&mut r)?;
        manifest.push(ManifestEntry { name, shape, offset });
    }
    let mut values = Vec::new();
    r.read_to_end(&mut values)?;
    let total: usize = manifest.iter().map(|e| e.shape.numel()).sum();
    if values.len() != total * 8 {
        return Err(Error::usage(format!(
            "checkpoint value block has {} bytes, manifest needs {}",
            values.len(),
            total * 8
        )));
    }
    manifest
        .into_iter()
        .map(|e| {
            let start = e.offset as usize * 8;
            let end = start + e.shape.numel() * 8;
            if end > values.len() {
                return Err(Error::usage(format!("parameter {} runs past the value block", e.name)));
            }
            let data = values[start..end]
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            let t = Tensor::new(e.shape, data)?;
            Ok((e, t))
        })
        .collect()
}

/// Overwrites the values of `store` from a checkpoint with an identical manifest.
pub fn load_into<T: Scalar, R: Read>(store: &mut ParamStore<T>, r: R) -> Result<()> {
    let entries = read_checkpoint::<T, R>(r)?;
    if entries.len() != store.len() {
        return Err(Error::config(format!(
            "checkpoint has {} parameters, model has {}",
            entries.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, (entry, tensor)) in ids.into_iter().zip(entries) {
        let current = store.get(id);
        if store.name(id) != entry.name || current.shape() != entry.shape {
            return Err(Error::config(format!(
                "checkpoint parameter {} ({}) does not match model parameter {} ({})",
                entry.name,
                entry.shape,
                store.name(id),
                current.shape()
            )));
        }
        *store.get_mut(id) = tensor;
    }
    Ok(())
}
