//! The CNVK v1 kernel format.
//!
//! Same framing as NNPK: the 8-byte magic `CNVK\0\0\0\x01`, a little-endian
//! `u32` manifest length, a JSON manifest `{version, n, m}`, then the `n·n·m·m`
//! kernel entries in `(p, q, c, d)` row-major order as little-endian `f32`.

use std::fs;
use std::path::Path;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::ConvKernel;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_floats, take};

const MAGIC: &[u8; 4] = b"CNVK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    n: usize,
    m: usize,
}

pub fn encode_kernel(kernel: &ConvKernel) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(&Manifest {
        version: VERSION,
        n: kernel.n(),
        m: kernel.m(),
    })?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * kernel.k.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_be_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in kernel.k.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_kernel(bytes: &[u8]) -> Result<ConvKernel> {
    let mut rest = bytes;
    let magic = take(&mut rest, 8).ok_or_else(|| Error::Format("file too short for magic".into()))?;
    if &magic[..4] != MAGIC {
        return Err(Error::Format("bad magic, not a CNVK kernel".into()));
    }
    let version = u32::from_be_bytes([magic[4], magic[5], magic[6], magic[7]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported CNVK version {version}")));
    }
    let len = take(&mut rest, 4).ok_or_else(|| Error::Format("truncated manifest length".into()))?;
    let len = u32::from_le_bytes([len[0], len[1], len[2], len[3]]) as usize;
    let json = take(&mut rest, len).ok_or_else(|| Error::Format("truncated manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("invalid manifest: {e}")))?;
    if manifest.version != VERSION {
        return Err(Error::Format(format!("unsupported manifest version {}", manifest.version)));
    }
    let (n, m) = (manifest.n, manifest.m);
    if n == 0 || m == 0 {
        return Err(Error::Format(format!("invalid kernel size n={n} m={m}")));
    }
    let values = read_floats(&mut rest, n * n * m * m)
        .ok_or_else(|| Error::Format(format!("payload shorter than {n}×{n}×{m}×{m} entries")))?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after the kernel", rest.len())));
    }
    let k = Array4::from_shape_vec((n, n, m, m), values).expect("length checked");
    ConvKernel::new(k).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_kernel(kernel: &ConvKernel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_kernel(kernel)?)?;
    Ok(())
}

pub fn load_kernel(path: impl AsRef<Path>) -> Result<ConvKernel> {
    decode_kernel(&fs::read(path)?)
}
