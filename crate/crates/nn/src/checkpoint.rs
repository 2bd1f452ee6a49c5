//! `NNP1` parameter checkpoints.
//!
//! Layout (little endian): magic `NNP1`, `u32` tensor count, then per tensor a `u32`
//! name length, the UTF-8 name, `u32` rank, `rank` x `u32` dims and an `f32` payload.

use std::io::{Read, Write};

use crate::error::{NnError, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NNP1";

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| NnError::Checkpoint(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf) as usize)
}

pub fn write_checkpoint<W: Write>(store: &ParameterStore, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(&mut w, store.len())?;
    for p in store.params() {
        write_u32(&mut w, p.name().len())?;
        w.write_all(p.name().as_bytes())?;
        write_u32(&mut w, p.value().rank())?;
        for &d in p.value().shape() {
            write_u32(&mut w, d)?;
        }
        let mut payload = Vec::with_capacity(p.value().scalar_count() * 4);
        for &v in p.value().data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&payload)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut r)?;
        let dims = (0..rank).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    Ok(out)
}

/// Overwrites every parameter of `store` from checkpoint entries matched by name.
pub fn load_into(store: &mut ParameterStore, entries: Vec<(String, Tensor)>) -> Result<()> {
    if entries.len() != store.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint holds {} tensors, model expects {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, tensor) in entries {
        let id = store
            .id_of(&name)
            .ok_or_else(|| NnError::Checkpoint(format!("unknown tensor `{name}`")))?;
        if store.value(id).shape() != tensor.shape() {
            return Err(NnError::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                tensor.shape(),
                store.value(id).shape()
            )));
        }
        store.params_mut()[id.index()].set_value(tensor);
    }
    Ok(())
}
