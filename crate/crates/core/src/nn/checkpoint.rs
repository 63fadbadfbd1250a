//! The NNPK v1 checkpoint format.
//!
//! Layout: the 8-byte magic `NNPK\0\0\0\x01`, a little-endian `u32` byte
//! length followed by a UTF-8 JSON manifest, then for each layer the weight
//! matrix in row-major order and the bias vector, as little-endian `f32`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::model::{Activation, Layer, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NNPK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub activation: String,
    pub layer_dims: Vec<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub notes: String,
}

/// A model together with the metadata stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub seed: Option<u64>,
    pub notes: String,
}

impl Checkpoint {
    pub fn new(model: ModelParams) -> Self {
        Checkpoint {
            model,
            seed: None,
            notes: String::new(),
        }
    }
}

/// Serializes a checkpoint. Parameters are stored in single precision.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let manifest = Manifest {
        version: VERSION,
        activation: ckpt.model.activation.name().to_string(),
        layer_dims: ckpt.model.dims(),
        seed: ckpt.seed,
        notes: ckpt.notes.clone(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("manifest too large".into()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * ckpt.model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_be_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for v in ckpt.model.flatten() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
    if bytes.len() < n {
        return None;
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Some(head)
}

pub(crate) fn read_floats(bytes: &mut &[u8], n: usize) -> Option<Vec<f64>> {
    let raw = take(bytes, 4 * n)?;
    Some(
        raw.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    )
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut rest = bytes;
    let magic = take(&mut rest, 8).ok_or_else(|| Error::Format("file too short for magic".into()))?;
    if &magic[..4] != MAGIC {
        return Err(Error::Format("bad magic, not an NNPK checkpoint".into()));
    }
    let version = u32::from_be_bytes([magic[4], magic[5], magic[6], magic[7]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported NNPK version {version}")));
    }
    let len = take(&mut rest, 4).ok_or_else(|| Error::Format("truncated manifest length".into()))?;
    let len = u32::from_le_bytes([len[0], len[1], len[2], len[3]]) as usize;
    let json = take(&mut rest, len).ok_or_else(|| Error::Format("truncated manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("invalid manifest: {e}")))?;
    if manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let activation = Activation::parse(&manifest.activation)
        .ok_or_else(|| Error::Format(format!("unknown activation {:?}", manifest.activation)))?;
    let dims = &manifest.layer_dims;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Format(format!("invalid layer_dims {dims:?}")));
    }

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (l, w) in dims.windows(2).enumerate() {
        let (rows, cols) = (w[1], w[0]);
        let missing = |part: &str| Error::Shape {
            layer: l + 1,
            message: format!("payload ends before the {part} ({rows}x{cols} declared)"),
        };
        let weight = read_floats(&mut rest, rows * cols).ok_or_else(|| missing("weights"))?;
        let bias = read_floats(&mut rest, rows).ok_or_else(|| missing("bias"))?;
        layers.push(Layer {
            weight: Array2::from_shape_vec((rows, cols), weight).expect("length checked"),
            bias: Array1::from(bias),
        });
    }
    if !rest.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the declared layers",
            rest.len()
        )));
    }
    let model = ModelParams::new(layers, activation).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Checkpoint {
        model,
        seed: manifest.seed,
        notes: manifest.notes,
    })
}

/// Writes `model` in NNPK v1 format with empty metadata.
pub fn save_checkpoint(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::new(model.clone()).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    Ok(Checkpoint::load(path)?.model)
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, encode_checkpoint(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        decode_checkpoint(&fs::read(path)?)
    }
}
