//! Per-sentence feature vectors: a deterministic hashing encoder and the
//! binary embedding file format shared with external exporters.
//!
//! File layout, little-endian:
//!
//! ```text
//! "FGEM" | version u32 = 1 | n u32 | d u32 | n·d f32 row-major
//!        | trailer_len u32 | trailer (UTF-8 JSON)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"FGEM";
pub const EMBEDDING_VERSION: u32 = 1;
pub const EMBEDDING_EXTENSION: &str = "fgem";
const HEADER_LEN: usize = 16;

/// `n × d` sentence features, rows in document order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::Shape {
                op: "embedding matrix",
                left: (n, d),
                right: (values.len(), 1),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite embedding value at row {}, column {}",
                k / d.max(1),
                k % d.max(1)
            )));
        }
        Ok(EmbeddingMatrix { n, d, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.values.iter().map(|&v| T::of(v as f64)).collect();
        Tensor::from_vec(self.n, self.d, data).expect("shape checked at construction")
    }

    /// Stacks rows of several matrices with the same width.
    pub fn concat(parts: &[EmbeddingMatrix]) -> Result<Self> {
        let d = parts.first().map_or(0, |m| m.d);
        let mut values = Vec::new();
        let mut n = 0;
        for m in parts {
            if m.d != d {
                return Err(Error::Shape {
                    op: "concat embeddings",
                    left: (n, d),
                    right: (m.n, m.d),
                });
            }
            n += m.n;
            values.extend_from_slice(&m.values);
        }
        EmbeddingMatrix::new(n, d, values)
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Hashes token unigrams and bigrams into `d` signed buckets and
/// L2-normalizes each row. Rows depend only on their own sentence.
pub fn hash_encode<S: AsRef<str>>(sentences: &[S], d: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if d < 8 {
        return Err(Error::Config(format!("hash dimension {d} is below the minimum of 8")));
    }
    let mut values = vec![0f32; sentences.len() * d];
    for (row, sentence) in values.chunks_mut(d).zip(sentences) {
        let tokens = tokenize(sentence.as_ref());
        let mut acc = vec![0f64; d];
        let mut add = |feature: &str| {
            let h = xxh3_64_with_seed(feature.as_bytes(), seed);
            let bucket = (h % d as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign;
        };
        for t in &tokens {
            add(t);
        }
        for pair in tokens.windows(2) {
            add(&format!("{} {}", pair[0], pair[1]));
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (out, v) in row.iter_mut().zip(&acc) {
                *out = (v / norm) as f32;
            }
        }
    }
    EmbeddingMatrix::new(sentences.len(), d, values)
}

/// Metadata stored after the payload. `extra` keeps any fields written by
/// other producers (model id, pooling, truncation counts).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTrailer {
    pub doc_id: String,
    pub provider: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

pub fn encode_embeddings(matrix: &EmbeddingMatrix, trailer: &EmbeddingTrailer) -> Result<Vec<u8>> {
    if matrix.n == 0 {
        return Err(Error::validation("refusing to write an empty embedding matrix"));
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::validation(format!("{what} {v} exceeds u32")))
    };
    let trailer = serde_json::to_vec(trailer)?;
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.values.len() * 4 + 4 + trailer.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(matrix.n, "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(matrix.d, "dimension")?.to_le_bytes());
    for v in &matrix.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&to_u32(trailer.len(), "trailer length")?.to_le_bytes());
    out.extend_from_slice(&trailer);
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<(EmbeddingMatrix, EmbeddingTrailer)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::Format("bad magic, expected FGEM".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!("unsupported embedding version {version}")));
    }
    let (n, d) = (word(8) as usize, word(12) as usize);
    if n == 0 {
        return Err(Error::validation("empty embedding file"));
    }
    let payload_end = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("declared size {n}x{d} overflows")))?;
    if bytes.len() < payload_end + 4 {
        return Err(Error::Truncated(format!(
            "header declares {n}x{d} floats but the file holds {} bytes",
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes[HEADER_LEN..payload_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let trailer_len = word(payload_end) as usize;
    let trailer_bytes = &bytes[payload_end + 4..];
    if trailer_bytes.len() != trailer_len {
        return Err(Error::Truncated(format!(
            "trailer declares {trailer_len} bytes, found {}",
            trailer_bytes.len()
        )));
    }
    let trailer: EmbeddingTrailer = serde_json::from_slice(trailer_bytes)?;
    Ok((EmbeddingMatrix::new(n, d, values)?, trailer))
}

/// Writes and fsyncs an embedding file.
pub fn write_embeddings(matrix: &EmbeddingMatrix, trailer: &EmbeddingTrailer, path: &Path) -> Result<()> {
    let bytes = encode_embeddings(matrix, trailer)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    file.sync_all().map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<(EmbeddingMatrix, EmbeddingTrailer)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

/// Where sentence features come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FeatureSource {
    Hash { dim: usize, seed: u64 },
    /// One `<doc_id>.fgem` file per document.
    Files { dir: PathBuf },
}

impl Default for FeatureSource {
    fn default() -> Self {
        FeatureSource::Hash { dim: 256, seed: 0 }
    }
}

impl FeatureSource {
    /// Parses `hash`, `hash:<dim>` or `file:<dir>`.
    pub fn parse(text: &str, default_hash_dim: usize, hash_seed: u64) -> Result<Self> {
        if text == "hash" {
            return Ok(FeatureSource::Hash {
                dim: default_hash_dim,
                seed: hash_seed,
            });
        }
        if let Some(dim) = text.strip_prefix("hash:") {
            let dim = dim
                .parse()
                .map_err(|_| Error::Config(format!("bad hash dimension '{dim}'")))?;
            return Ok(FeatureSource::Hash { dim, seed: hash_seed });
        }
        if let Some(dir) = text.strip_prefix("file:") {
            return Ok(FeatureSource::Files { dir: dir.into() });
        }
        Err(Error::Config(format!(
            "unknown feature source '{text}', expected hash or file:<dir>"
        )))
    }

    /// Feature rows for `doc`, checked against its sentence count.
    pub fn features_for(&self, doc: &Document) -> Result<EmbeddingMatrix> {
        let matrix = match self {
            FeatureSource::Hash { dim, seed } => hash_encode(&doc.texts(), *dim, *seed)?,
            FeatureSource::Files { dir } => {
                let path = dir.join(format!("{}.{EMBEDDING_EXTENSION}", doc.id()));
                let (matrix, trailer) = load_embeddings(&path)?;
                if trailer.doc_id != doc.id() {
                    return Err(Error::validation(format!(
                        "{}: trailer names document '{}'",
                        path.display(),
                        trailer.doc_id
                    )));
                }
                matrix
            }
        };
        if matrix.n() != doc.len() {
            return Err(Error::validation(format!(
                "document '{}' has {} sentences but {} feature rows",
                doc.id(),
                doc.len(),
                matrix.n()
            )));
        }
        Ok(matrix)
    }
}
