//! The `LDT1` binary tensor format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "LDT1"
//! dtype   u8       1 = f32, 2 = i32, 3 = u8 boolean (0/1)
//! ndim    u8
//! dims    ndim × u64
//! payload row-major elements
//! ```
//!
//! Trailing bytes after the payload are rejected.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::fuzzy::ProbBatch;

pub const MAGIC: &[u8; 4] = b"LDT1";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"LDT1\"")]
    BadMagic { found: Vec<u8> },
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("truncated tensor: {what} needs {needed} bytes, {available} available")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("boolean payload byte {value} at element {index} is not 0 or 1")]
    BadBool { index: usize, value: u8 },
    #[error("expected a {expected} tensor, found {found}")]
    WrongDtype {
        expected: &'static str,
        found: &'static str,
    },
    #[error("probability tensor: {0}")]
    Probabilities(#[from] crate::fuzzy::FuzzyError),
}

impl TensorError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        TensorError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    Bool(Vec<bool>),
}

impl TensorData {
    pub fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::I32(_) => 2,
            TensorData::Bool(_) => 3,
        }
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "float32",
            TensorData::I32(_) => "int32",
            TensorData::Bool(_) => "bool",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        let numel = numel(&dims)?;
        if numel != data.len() {
            return Err(TensorError::DimMismatch(format!(
                "dims {dims:?} hold {numel} elements, data has {}",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(TensorError::DimMismatch(format!("{} dims exceed 255", dims.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn encode(&self) -> Vec<u8> {
        let elem = match self.data {
            TensorData::Bool(_) => 1,
            _ => 4,
        };
        let mut out = Vec::with_capacity(6 + 8 * self.dims.len() + elem * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.data.code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Bool(v) => out.extend(v.iter().map(|&b| b as u8)),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != MAGIC {
            return Err(TensorError::BadMagic {
                found: magic.to_vec(),
            });
        }
        let code = cur.take(1, "dtype")?[0];
        let ndim = cur.take(1, "ndim")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let raw = u64::from_le_bytes(cur.take(8, "dims")?.try_into().unwrap());
            let d = usize::try_from(raw)
                .map_err(|_| TensorError::DimMismatch(format!("dimension {raw} too large")))?;
            dims.push(d);
        }
        let n = numel(&dims)?;
        let elem = match code {
            1 | 2 => 4,
            3 => 1,
            other => return Err(TensorError::UnknownDtype(other)),
        };
        let payload_len = n
            .checked_mul(elem)
            .ok_or_else(|| TensorError::DimMismatch(format!("dims {dims:?} overflow")))?;
        let payload = cur.take(payload_len, "payload")?;
        if cur.pos != bytes.len() {
            return Err(TensorError::DimMismatch(format!(
                "{} trailing bytes after payload of dims {dims:?}",
                bytes.len() - cur.pos
            )));
        }
        let data = match code {
            1 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            2 => TensorData::I32(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => TensorData::Bool(
                payload
                    .iter()
                    .enumerate()
                    .map(|(index, &value)| match value {
                        0 => Ok(false),
                        1 => Ok(true),
                        _ => Err(TensorError::BadBool { index, value }),
                    })
                    .collect::<Result<_, _>>()?,
            ),
        };
        Ok(Tensor { dims, data })
    }
}

fn numel(dims: &[usize]) -> Result<usize, TensorError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::DimMismatch(format!("dims {dims:?} overflow")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], TensorError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(TensorError::Truncated {
                what,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TensorError::io(path, e))?;
    Tensor::decode(&bytes)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<(), TensorError> {
    let path = path.as_ref();
    fs::write(path, t.encode()).map_err(|e| TensorError::io(path, e))
}

/// A float32 `(rows, concepts)` tensor as a clamped probability batch.
pub fn prob_batch_from_tensor(t: &Tensor) -> Result<ProbBatch, TensorError> {
    let values = match &t.data {
        TensorData::F32(v) => v,
        other => {
            return Err(TensorError::WrongDtype {
                expected: "float32",
                found: other.dtype_name(),
            })
        }
    };
    if t.dims.len() != 2 {
        return Err(TensorError::DimMismatch(format!(
            "probabilities need 2 dims (rows, concepts), found {:?}",
            t.dims
        )));
    }
    Ok(ProbBatch::from_f32(values, t.dims[0], t.dims[1])?)
}

pub fn read_prob_batch(path: impl AsRef<Path>) -> Result<ProbBatch, TensorError> {
    prob_batch_from_tensor(&read_tensor(path)?)
}

/// Writes leaf labels as a 1-D int32 tensor (`-1` = ignore).
pub fn write_labels(path: impl AsRef<Path>, labels: &[i32]) -> Result<(), TensorError> {
    write_tensor(
        path,
        &Tensor::new(vec![labels.len()], TensorData::I32(labels.to_vec()))?,
    )
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<i32>, TensorError> {
    let t = read_tensor(path)?;
    match t.data {
        TensorData::I32(v) if t.dims.len() == 1 => Ok(v),
        TensorData::I32(_) => Err(TensorError::DimMismatch(format!(
            "labels need 1 dim, found {:?}",
            t.dims
        ))),
        other => Err(TensorError::WrongDtype {
            expected: "int32",
            found: other.dtype_name(),
        }),
    }
}
