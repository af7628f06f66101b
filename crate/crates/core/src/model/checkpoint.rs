//! Binary checkpoint layout (little-endian):
//!
//! ```text
//! "FGCK" | version u32 | config_len u32 | config JSON
//! then per parameter until EOF:
//! name_len u32 | name | rows u32 | cols u32 | rows·cols values
//! ```
//!
//! Values are stored at the precision recorded in the config block, so a
//! load reproduces the saved model bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{Sample, TrainConfig};
use super::{EdgeModel, ModelConfig, Prediction};
use crate::corpus::Document;
use crate::encoder::{EmbeddingMatrix, FeatureSource};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, ScoredDocument};
use crate::tensor::{Precision, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub precision: Precision,
    pub in_dim: usize,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub best_validation_prauc: Option<f64>,
    #[serde(default)]
    pub epoch: Option<usize>,
    /// Feature source the model was trained on.
    #[serde(default)]
    pub features: Option<FeatureSource>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub model: EdgeModel<T>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::Truncated(format!("checkpoint ends inside {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl<T: Scalar> Checkpoint<T> {
    /// Wraps a model that was not produced by training.
    pub fn untrained(model: EdgeModel<T>) -> Self {
        let meta = CheckpointMeta {
            precision: T::PRECISION,
            in_dim: model.in_dim,
            model: model.config.clone(),
            train: None,
            best_validation_prauc: None,
            epoch: None,
            features: None,
        };
        Checkpoint { meta, model }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.meta)?;
        push_u32(&mut out, json.len())?;
        out.extend_from_slice(&json);
        for (name, value) in self.model.params.iter() {
            push_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            push_u32(&mut out, value.rows())?;
            push_u32(&mut out, value.cols())?;
            for &v in value.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, body) = read_header(bytes)?;
        if meta.precision != T::PRECISION {
            return Err(Error::Format(format!(
                "checkpoint stores {:?} values, requested {:?}",
                meta.precision,
                T::PRECISION
            )));
        }
        let mut model = EdgeModel::<T>::new(meta.model.clone(), meta.in_dim, 0)?;
        let mut reader = Reader { bytes: body, pos: 0 };
        let mut seen = 0;
        while !reader.done() {
            let len = reader.u32("parameter name length")?;
            let name = std::str::from_utf8(reader.take(len, "parameter name")?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let rows = reader.u32("parameter shape")?;
            let cols = reader.u32("parameter shape")?;
            let width = T::PRECISION.bytes();
            let raw = reader.take(rows * cols * width, "parameter values")?;
            let data = raw.chunks_exact(width).map(T::read_le).collect();
            model.params.assign(&name, Tensor::from_vec(rows, cols, data)?)?;
            seen += 1;
        }
        if seen != model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {seen} of {} parameters",
                model.params.len()
            )));
        }
        Ok(Checkpoint { meta, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn read_header(bytes: &[u8]) -> Result<(CheckpointMeta, &[u8])> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("config length")?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(len, "config")?)?;
    Ok((meta, &bytes[r.pos..]))
}

/// A checkpoint at whichever precision it was saved with.
#[derive(Clone, Debug)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

macro_rules! dispatch {
    ($self:expr, $c:ident => $body:expr) => {
        match $self {
            AnyCheckpoint::F32($c) => $body,
            AnyCheckpoint::F64($c) => $body,
        }
    };
}

impl AnyCheckpoint {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, _) = read_header(bytes)?;
        Ok(match meta.precision {
            Precision::F32 => AnyCheckpoint::F32(Checkpoint::from_bytes(bytes)?),
            Precision::F64 => AnyCheckpoint::F64(Checkpoint::from_bytes(bytes)?),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        dispatch!(self, c => c.save(path))
    }

    pub fn meta(&self) -> &CheckpointMeta {
        dispatch!(self, c => &c.meta)
    }

    pub fn meta_mut(&mut self) -> &mut CheckpointMeta {
        dispatch!(self, c => &mut c.meta)
    }

    pub fn in_dim(&self) -> usize {
        self.meta().in_dim
    }

    pub fn predict(&self, doc: &Document, features: &EmbeddingMatrix) -> Result<Prediction> {
        dispatch!(self, c => c.model.predict(doc, features))
    }

    pub fn score_document(&self, doc: &Document, features: &EmbeddingMatrix) -> Result<ScoredDocument> {
        dispatch!(self, c => c.model.score_document(doc, features))
    }

    pub fn evaluate(&self, samples: &[Sample], per_doc: bool) -> Result<EvalReport> {
        dispatch!(self, c => c.model.evaluate(samples, per_doc))
    }
}

impl From<Checkpoint<f32>> for AnyCheckpoint {
    fn from(c: Checkpoint<f32>) -> Self {
        AnyCheckpoint::F32(c)
    }
}

impl From<Checkpoint<f64>> for AnyCheckpoint {
    fn from(c: Checkpoint<f64>) -> Self {
        AnyCheckpoint::F64(c)
    }
}
