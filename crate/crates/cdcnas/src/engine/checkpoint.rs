//! Checkpoint format: named parameters with shapes and little-endian f32
//! payloads, followed by batch-norm buffers and a SHA-256 manifest hash.
//!
//! ```text
//! magic   4 bytes "CDCK"
//! version u16 = 1
//! nparam  u32
//! per parameter: name_len u16, name, partition u8, 5 x u32 extents, f32 payload
//! nbuffer u32
//! per buffer:    name_len u16, name, 5 x u32 extents, f32 payload
//! sha256  32 bytes over all preceding bytes
//! ```

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::params::{ParamStore, Partition};
use crate::tensor::{Shape5, Tensor};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CKPT_MAGIC: [u8; 4] = *b"CDCK";
pub const CKPT_VERSION: u16 = 1;

fn push_name(buf: &mut Vec<u8>, name: &str) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
}

fn push_tensor<E: Elem>(buf: &mut Vec<u8>, t: &Tensor<E>) {
    for v in t.shape().as_array() {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
}

pub fn store_to_bytes<E: Elem>(store: &ParamStore<E>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, entry) in store.iter() {
        push_name(&mut buf, &entry.name);
        buf.push(entry.partition.tag());
        push_tensor(&mut buf, &entry.value);
    }
    let buffers: Vec<_> = store.buffers().collect();
    buf.extend_from_slice(&(buffers.len() as u32).to_le_bytes());
    for (_, entry) in buffers {
        push_name(&mut buf, &entry.name);
        push_tensor(&mut buf, &entry.value);
    }
    let hash = Sha256::digest(&buf);
    buf.extend_from_slice(&hash);
    buf
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Corrupt("truncated checkpoint".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Corrupt("non-utf8 parameter name".into()))
    }

    fn tensor<E: Elem>(&mut self) -> Result<Tensor<E>> {
        let mut ext = [0usize; 5];
        for e in ext.iter_mut() {
            *e = self.u32()? as usize;
        }
        let shape = Shape5::from_array(ext);
        let payload = self.take(shape.numel() * 4)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| E::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Tensor::new(shape, values)
    }
}

/// Load checkpoint bytes into an existing store built from the same
/// architecture: every entry must match by name and shape.
pub fn load_bytes_into<E: Elem>(store: &mut ParamStore<E>, bytes: &[u8]) -> Result<()> {
    if bytes.len() < 38 {
        return Err(Error::Corrupt("truncated checkpoint".into()));
    }
    let (body, stored_hash) = bytes.split_at(bytes.len() - 32);
    let hash = Sha256::digest(body);
    if hash.as_slice() != stored_hash {
        return Err(Error::Corrupt("checkpoint hash mismatch".into()));
    }
    let mut cur = Cursor {
        data: body,
        pos: 0,
    };
    if cur.take(4)? != CKPT_MAGIC {
        return Err(Error::Corrupt("bad checkpoint magic".into()));
    }
    if cur.u16()? != CKPT_VERSION {
        return Err(Error::Corrupt("unknown checkpoint version".into()));
    }
    let nparam = cur.u32()? as usize;
    if nparam != store.len() {
        return Err(Error::Corrupt(format!(
            "checkpoint has {nparam} parameters, architecture expects {}",
            store.len()
        )));
    }
    for _ in 0..nparam {
        let name = cur.name()?;
        let partition = Partition::from_tag(cur.u8()?)?;
        let value: Tensor<E> = cur.tensor()?;
        let id = store.lookup(&name).ok_or_else(|| {
            Error::Corrupt(format!("checkpoint parameter '{name}' unknown to this architecture"))
        })?;
        if store.get(id).shape() != value.shape() || store.partition_of(id) != partition {
            return Err(Error::Corrupt(format!(
                "checkpoint parameter '{name}' shape/partition mismatch"
            )));
        }
        *store.get_mut(id) = value;
    }
    let nbuf = cur.u32()? as usize;
    let buffer_ids: Vec<_> = store.buffers().map(|(id, e)| (id, e.name.clone())).collect();
    if nbuf != buffer_ids.len() {
        return Err(Error::Corrupt("checkpoint buffer count mismatch".into()));
    }
    for _ in 0..nbuf {
        let name = cur.name()?;
        let value: Tensor<E> = cur.tensor()?;
        let (id, _) = buffer_ids
            .iter()
            .find(|(_, n)| *n == name)
            .ok_or_else(|| Error::Corrupt(format!("checkpoint buffer '{name}' unknown")))?;
        if store.buffer(*id).shape() != value.shape() {
            return Err(Error::Corrupt(format!(
                "checkpoint buffer '{name}' shape mismatch"
            )));
        }
        *store.buffer_mut(*id) = value;
    }
    if cur.pos != body.len() {
        return Err(Error::Corrupt("trailing bytes in checkpoint".into()));
    }
    Ok(())
}

pub fn save<E: Elem>(store: &ParamStore<E>, path: &Path) -> Result<()> {
    std::fs::write(path, store_to_bytes(store))?;
    Ok(())
}

pub fn load_into<E: Elem>(store: &mut ParamStore<E>, path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingArtifact(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    load_bytes_into(store, &std::fs::read(path)?)
}
