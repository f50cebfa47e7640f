//! Binary model container.
//!
//! Layout (little-endian): magic `HSNN`, `u32` version, `u8` kind
//! (0 = ANN, 1 = SNN), `u32` layer count, then per layer a `u32` rank and
//! `rank` `u32` extents, then per layer the `f32` weights followed, for SNN
//! models only, by the `f32` threshold and leak.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::ann::AnnParams;
use crate::neuron::LayerParams;
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"HSNN";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("cannot access model file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model file at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelFile {
    Ann(AnnParams<f32>),
    Snn(Vec<LayerParams<f32>>),
}

impl ModelFile {
    fn weights(&self) -> Vec<&Tensor<f32>> {
        match self {
            ModelFile::Ann(a) => a.weights.iter().collect(),
            ModelFile::Snn(p) => p.iter().map(|l| &l.weights).collect(),
        }
    }
}

pub fn encode_model(model: &ModelFile) -> Vec<u8> {
    let weights = model.weights();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(matches!(model, ModelFile::Snn(_)) as u8);
    out.extend_from_slice(&(weights.len() as u32).to_le_bytes());
    for w in &weights {
        out.extend_from_slice(&(w.shape().len() as u32).to_le_bytes());
        for &d in w.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (l, w) in weights.iter().enumerate() {
        for v in w.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let ModelFile::Snn(p) = model {
            out.extend_from_slice(&p[l].threshold.to_le_bytes());
            out.extend_from_slice(&p[l].leak.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelIoError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(ModelIoError::Format {
            offset: self.bytes.len(),
            message: format!("truncated, needed {n} more bytes at {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelIoError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32, ModelIoError> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn fail(&self, offset: usize, message: impl Into<String>) -> ModelIoError {
        ModelIoError::Format { offset, message: message.into() }
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelFile, ModelIoError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(r.fail(0, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(4, format!("unsupported version {version}")));
    }
    let kind = r.take(1)?[0];
    if kind > 1 {
        return Err(r.fail(8, format!("unknown model kind {kind}")));
    }
    let layers = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(layers.min(1024));
    for _ in 0..layers {
        let at = r.pos;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(r.fail(at, format!("invalid rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        shapes.push(shape);
    }
    let mut weights = Vec::with_capacity(layers);
    let mut scalars = Vec::with_capacity(layers);
    for shape in shapes {
        let at = r.pos;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        weights.push(Tensor::new(shape, data).map_err(|e| r.fail(at, e.to_string()))?);
        if kind == 1 {
            scalars.push((r.f32()?, r.f32()?));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, "trailing bytes"));
    }
    Ok(if kind == 0 {
        ModelFile::Ann(AnnParams { weights })
    } else {
        ModelFile::Snn(
            weights
                .into_iter()
                .zip(scalars)
                .map(|(weights, (threshold, leak))| LayerParams { weights, threshold, leak })
                .collect(),
        )
    })
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<(), ModelIoError> {
    fs::write(path, encode_model(model)).map_err(|source| ModelIoError::Io { path: path.display().to_string(), source })
}

pub fn load_model(path: &Path) -> Result<ModelFile, ModelIoError> {
    let bytes = fs::read(path).map_err(|source| ModelIoError::Io { path: path.display().to_string(), source })?;
    decode_model(&bytes)
}
