//! `PNCK` v1 model checkpoints.
//!
//! Layout (little-endian): `"PNCK"`, version `u32 = 1`, then the architecture
//! as eight `u32` (n_channels, n_samples, n_classes, embed_dim,
//! temporal_filters, temporal_kernel, pool_factor, mlp_hidden), `dropout_rate`
//! as `f64` and `seed` as `u64`, then every parameter array in declaration
//! order as `f64`.

use std::path::Path;

use super::{ArchConfig, ModelParams};
use crate::error::{Error, Result};

pub const PNCK_MAGIC: &[u8; 4] = b"PNCK";
pub const PNCK_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 8 * 4 + 16;

pub fn encode_checkpoint(model: &ModelParams) -> Result<Vec<u8>> {
    let a = model.arch();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * model.len());
    out.extend_from_slice(PNCK_MAGIC);
    out.extend_from_slice(&PNCK_VERSION.to_le_bytes());
    for (name, v) in [
        ("n_channels", a.n_channels),
        ("n_samples", a.n_samples),
        ("n_classes", a.n_classes),
        ("embed_dim", a.embed_dim),
        ("temporal_filters", a.temporal_filters),
        ("temporal_kernel", a.temporal_kernel),
        ("pool_factor", a.pool_factor),
        ("mlp_hidden", a.mlp_hidden),
    ] {
        let v = u32::try_from(v).map_err(|_| Error::config(name, "does not fit in u32"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&a.dropout_rate.to_le_bytes());
    out.extend_from_slice(&a.seed.to_le_bytes());
    for arr in model.arrays() {
        for v in arr {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "checkpoint header truncated"));
    }
    if &bytes[..4] != PNCK_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"PNCK\""));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    if u32_at(4) != PNCK_VERSION as usize {
        return Err(Error::format(4, format!("unsupported checkpoint version {}", u32_at(4))));
    }
    let arch = ArchConfig {
        n_channels: u32_at(8),
        n_samples: u32_at(12),
        n_classes: u32_at(16),
        embed_dim: u32_at(20),
        temporal_filters: u32_at(24),
        temporal_kernel: u32_at(28),
        pool_factor: u32_at(32),
        mlp_hidden: u32_at(36),
        dropout_rate: f64::from_le_bytes(bytes[40..48].try_into().expect("8 bytes")),
        seed: u64::from_le_bytes(bytes[48..56].try_into().expect("8 bytes")),
    };
    arch.validate().map_err(|e| Error::format(8, format!("invalid architecture: {e}")))?;
    let expected = HEADER_LEN + 8 * arch.param_count();
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected) as u64,
            format!("checkpoint should be {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut off = HEADER_LEN;
    let mut arrays = Vec::new();
    for n in arch.array_lens() {
        let mut arr = Vec::with_capacity(n);
        for _ in 0..n {
            let v = f64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(Error::format(off as u64, "non-finite parameter"));
            }
            arr.push(v);
            off += 8;
        }
        arrays.push(arr);
    }
    ModelParams::from_arrays(&arch, arrays)
}

pub fn save_checkpoint(model: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
