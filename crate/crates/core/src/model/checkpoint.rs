//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `TESHMDL`, version u32, D u32, L u32, K u32,
//! f u32, config length u64 + JSON config, parameter count u32, then per
//! parameter: name length u32 + UTF-8 name, rows u64, cols u64, manifold
//! tag u8 (0 euclidean, 1 poincare followed by the curvature parameter index
//! u32), and `rows·cols` f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::grad::Manifold;

const MAGIC: &[u8; 7] = b"TESHMDL";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Blob {
    model: ModelConfig,
    edge_types: Vec<String>,
    meta: serde_json::Value,
}

/// A loaded model with the free-form metadata saved next to it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: serde_json::Value,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_model<W: Write>(w: &mut W, model: &Model, meta: &serde_json::Value) -> Result<()> {
    let cfg = &model.config;
    w.write_all(MAGIC)?;
    for v in [VERSION, cfg.dim as u32, cfg.layers as u32, model.edge_types.len() as u32, cfg.window as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let blob = serde_json::to_vec(&Blob { model: cfg.clone(), edge_types: model.edge_types.clone(), meta: meta.clone() })?;
    w.write_all(&(blob.len() as u64).to_le_bytes())?;
    w.write_all(&blob)?;
    w.write_all(&(model.store.len() as u32).to_le_bytes())?;
    for (_, p) in model.store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.rows as u64).to_le_bytes())?;
        w.write_all(&(p.cols as u64).to_le_bytes())?;
        match p.manifold {
            Manifold::Euclidean => w.write_all(&[0])?,
            Manifold::Poincare { curvature } => {
                w.write_all(&[1])?;
                w.write_all(&(curvature.0 as u32).to_le_bytes())?;
            }
        }
        for v in &p.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

pub fn read_model<R: Read>(r: &mut R) -> Result<Checkpoint> {
    if &read_array::<7, _>(r)? != MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let header: Vec<usize> = (0..4).map(|_| read_u32(r).map(|v| v as usize)).collect::<Result<_>>()?;
    let blob_len = read_u64(r)? as usize;
    if blob_len > 1 << 24 {
        return Err(bad("config blob too large"));
    }
    let mut blob = vec![0u8; blob_len];
    r.read_exact(&mut blob).map_err(|e| bad(format!("truncated config: {e}")))?;
    let blob: Blob = serde_json::from_slice(&blob)?;
    let expect = [blob.model.dim, blob.model.layers, blob.edge_types.len(), blob.model.window];
    if header != expect {
        return Err(bad("header disagrees with stored configuration"));
    }
    let mut model = Model::new(blob.model, blob.edge_types)?;
    let count = read_u32(r)? as usize;
    if count != model.store.len() {
        return Err(bad(format!("expected {} parameters, found {count}", model.store.len())));
    }
    for k in 0..count {
        let p = model.store.get_mut(crate::grad::ParamId(k));
        let name_len = read_u32(r)? as usize;
        if name_len > 1024 {
            return Err(bad("parameter name too long"));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|e| bad(format!("truncated name: {e}")))?;
        let (rows, cols) = (read_u64(r)? as usize, read_u64(r)? as usize);
        if name != p.name.as_bytes() || rows != p.rows || cols != p.cols {
            return Err(bad(format!("parameter {k} does not match `{}`", p.name)));
        }
        let tag = read_array::<1, _>(r)?[0];
        let manifold = match tag {
            0 => Manifold::Euclidean,
            1 => Manifold::Poincare { curvature: crate::grad::ParamId(read_u32(r)? as usize) },
            t => return Err(bad(format!("unknown manifold tag {t}"))),
        };
        if manifold != p.manifold {
            return Err(bad(format!("manifold of `{}` differs", p.name)));
        }
        for v in p.values.iter_mut() {
            *v = f64::from_le_bytes(read_array(r)?);
            if !v.is_finite() {
                return Err(Error::NonFinite("checkpoint parameter"));
            }
        }
    }
    Ok(Checkpoint { model, meta: blob.meta })
}

pub fn save_model(path: &Path, model: &Model, meta: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model, meta)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| bad(format!("cannot open {}: {e}", path.display())))?;
    read_model(&mut BufReader::new(file))
}
