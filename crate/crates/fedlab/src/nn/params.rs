//! Flat parameter vectors with a named layout, plus checkpoint I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

/// One named tensor in a parameter layout: `(name, shape)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        ParamEntry { name: name.into(), shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A named tensor with its values, as produced by [`FlatParams::unflatten`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<Real>,
}

/// All trainable parameters of a model as one contiguous vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatParams {
    values: Vec<Real>,
}

impl FlatParams {
    pub fn from_vec(values: Vec<Real>) -> Self {
        FlatParams { values }
    }

    pub fn zeros(len: usize) -> Self {
        FlatParams { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Real] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Real] {
        &mut self.values
    }

    /// Splits the vector into named tensors according to `layout`.
    pub fn unflatten(&self, layout: &[ParamEntry]) -> Result<Vec<ParamTensor>> {
        let expected: usize = layout.iter().map(|e| e.len()).sum();
        if expected != self.values.len() {
            return Err(Error::shape(format!(
                "layout wants {expected} values, vector holds {}",
                self.values.len()
            )));
        }
        let mut out = Vec::with_capacity(layout.len());
        let mut offset = 0;
        for entry in layout {
            let n = entry.len();
            out.push(ParamTensor {
                name: entry.name.clone(),
                shape: entry.shape.clone(),
                values: self.values[offset..offset + n].to_vec(),
            });
            offset += n;
        }
        Ok(out)
    }

    /// Concatenates named tensors back into one flat vector.
    pub fn flatten(tensors: &[ParamTensor]) -> Result<Self> {
        let mut values = Vec::new();
        for t in tensors {
            let want: usize = t.shape.iter().product();
            if want != t.values.len() {
                return Err(Error::shape(format!(
                    "tensor {} declares shape {:?} but holds {} values",
                    t.name,
                    t.shape,
                    t.values.len()
                )));
            }
            values.extend_from_slice(&t.values);
        }
        Ok(FlatParams { values })
    }

    /// Squared Euclidean distance to another vector of the same length.
    pub fn dist2(&self, other: &FlatParams) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::shape(format!(
                "distance between vectors of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = *a as f64 - *b as f64;
                d * d
            })
            .sum())
    }

    /// Replaces `self` with `origin + scale * (self - origin)`.
    pub fn rescale_around(&mut self, origin: &FlatParams, scale: f64) -> Result<()> {
        if self.len() != origin.len() {
            return Err(Error::shape(format!(
                "rescale between vectors of length {} and {}",
                self.len(),
                origin.len()
            )));
        }
        for (v, o) in self.values.iter_mut().zip(origin.values()) {
            *v = (*o as f64 + scale * (*v as f64 - *o as f64)) as Real;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    count: usize,
    layout: Vec<ParamEntry>,
}

const CHECKPOINT_VERSION: u32 = 1;

/// Writes parameters as a JSON layout header followed by raw little-endian
/// f64 values. The header is preceded by its byte length as a LE u64.
pub fn save_checkpoint(path: &Path, params: &FlatParams, layout: &[ParamEntry]) -> Result<()> {
    let expected: usize = layout.iter().map(|e| e.len()).sum();
    if expected != params.len() {
        return Err(Error::shape(format!(
            "layout wants {expected} values, vector holds {}",
            params.len()
        )));
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        count: params.len(),
        layout: layout.to_vec(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::format(format!("checkpoint header encode: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for v in params.values() {
        w.write_all(&(*v as f64).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(FlatParams, Vec<ParamEntry>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut len_buf = [0u8; 8];
    r.read_exact(&mut len_buf)
        .map_err(|_| Error::format("checkpoint truncated before header length"))?;
    let header_len = u64::from_le_bytes(len_buf) as usize;
    if header_len > 1 << 20 {
        return Err(Error::format(format!(
            "checkpoint header length {header_len} is implausible"
        )));
    }
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::format("checkpoint truncated inside header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::format(format!("checkpoint header decode: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let expected: usize = header.layout.iter().map(|e| e.len()).sum();
    if expected != header.count {
        return Err(Error::format(format!(
            "checkpoint header inconsistent: layout wants {expected}, count says {}",
            header.count
        )));
    }
    let mut values = Vec::with_capacity(header.count);
    let mut buf = [0u8; 8];
    for _ in 0..header.count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::format("checkpoint truncated inside value stream"))?;
        values.push(f64::from_le_bytes(buf) as Real);
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::format("checkpoint has trailing bytes"));
    }
    Ok((FlatParams::from_vec(values), header.layout))
}
