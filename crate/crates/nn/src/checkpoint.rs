//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      12 bytes  "GFSCMA-CKPT\0"
//! version    u32
//! digest     u32 length + UTF-8 bytes
//! count      u32
//! count x record:
//!   name     u32 length + UTF-8 bytes
//!   role     u8   (0 trainable, 1 running statistic, 2 snapshot)
//!   step     u64  Adam step counter
//!   ndim     u32, then ndim x u64 dimensions
//!   value, adam m, adam v   each product(dims) x f64
//! ```
//!
//! Gradients are not stored; a loaded store has zero gradients.

use std::io::{Read, Write};

use crate::error::{NnError, Result};
use crate::param::{Param, ParamRole, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 12] = b"GFSCMA-CKPT\0";
pub const VERSION: u32 = 1;

/// Writes `store` tagged with `digest`.
pub fn write_checkpoint<W: Write>(mut w: W, digest: &str, store: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_str(&mut w, digest)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        write_str(&mut w, &p.name)?;
        w.write_all(&[p.role.tag()])?;
        w.write_all(&p.step.to_le_bytes())?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for t in [&p.value, &p.m, &p.v] {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn checkpoint_bytes(digest: &str, store: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, digest, store).expect("writing to a Vec cannot fail");
    buf
}

/// Reads a checkpoint, returning its digest and parameters.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(String, ParamStore)> {
    let mut magic = [0u8; 12];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let digest = read_str(&mut r)?;
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(truncated)?;
        let role = ParamRole::from_tag(tag[0])
            .ok_or_else(|| NnError::Checkpoint(format!("unknown role {} for `{name}`", tag[0])))?;
        let step = read_u64(&mut r)?;
        let ndim = read_u32(&mut r)? as usize;
        let shape = (0..ndim)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut read_tensor = || -> Result<Tensor> {
            let data = (0..len).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            Tensor::from_vec(&shape, data)
        };
        let value = read_tensor()?;
        let m = read_tensor()?;
        let v = read_tensor()?;
        store.push_param(Param {
            name,
            role,
            grad: Tensor::zeros(&shape),
            value,
            m,
            v,
            step,
            frozen: false,
        })?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Ok((digest, store))
}

fn truncated(e: std::io::Error) -> NnError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        NnError::Checkpoint("truncated".into())
    } else {
        NnError::Io(e)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(NnError::Checkpoint(format!("string length {len} too large")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(truncated)?;
    String::from_utf8(b).map_err(|_| NnError::Checkpoint("non UTF-8 string".into()))
}
