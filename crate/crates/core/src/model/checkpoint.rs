//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "STKFRMR\x01"
//! cfg_len  u64      length of the JSON model config
//! cfg      cfg_len bytes of UTF-8 JSON
//! count    u64      number of tensors
//! count × { name_len u32, name, elems u64, elems × f32 }
//! ```
//!
//! Tensors appear in [`ModelParams::visit`] order; loading checks names
//! and sizes against a model built from the stored config.

use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STKFRMR\x01";

pub fn write<W: Write>(model: &Model<f32>, mut w: W) -> Result<()> {
    let cfg = serde_json::to_vec(&model.config)?;
    w.write_all(MAGIC)?;
    w.write_all(&(cfg.len() as u64).to_le_bytes())?;
    w.write_all(&cfg)?;
    let mut tensors: Vec<(String, Vec<f32>)> = Vec::new();
    model.params.visit(&mut |name, x| tensors.push((name.to_string(), x.to_vec())));
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, data) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(data.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(data.len() * 4);
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R, n: u64, limit: u64) -> Result<Vec<u8>> {
    if n > limit {
        return Err(Error::Checkpoint(format!("field of {n} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; n as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read<R: Read>(mut r: R) -> Result<Model<f32>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let n = read_u64(&mut r)?;
    let cfg: ModelConfig = serde_json::from_slice(&read_bytes(&mut r, n, 1 << 20)?)?;
    let mut model = Model::<f32>::new(cfg, 0)?;
    let mut expected = Vec::new();
    model.params.visit(&mut |name, x| expected.push((name.to_string(), x.len())));
    let count = read_u64(&mut r)?;
    if count != expected.len() as u64 {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(expected.len());
    for (want_name, want_len) in &expected {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        let name = String::from_utf8(read_bytes(&mut r, u32::from_le_bytes(b) as u64, 1 << 12)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let len = read_u64(&mut r)?;
        if &name != want_name || len != *want_len as u64 {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` ({len}) where `{want_name}` ({want_len}) was expected"
            )));
        }
        let raw = read_bytes(&mut r, len * 4, 1 << 34)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor `{name}` has non-finite values")));
        }
        loaded.push(data);
    }
    let mut it = loaded.into_iter();
    model.params.visit_mut(&mut |_, x| x.copy_from_slice(&it.next().expect("counted above")));
    Ok(model)
}

pub fn save(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model<f32>> {
    read(std::io::BufReader::new(std::fs::File::open(path)?))
}
