//! Pairwise edge classifier on top of the GNN stack, its training loop,
//! checkpoints, and the sentence-type classifier.

mod checkpoint;
mod optim;
mod stc;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::encoder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, ScoredDocument};
use crate::gnn::{GnnConfig, GnnStack};
use crate::graph::{build_structure, enumerate_candidates, window_pairs, Edge, FlowGraph, Structure, WindowPolicy};
use crate::tensor::{Bound, ParamId, ParamStore, Precision, Scalar, Tape, Tensor, Var};

pub use checkpoint::{AnyCheckpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{AdamW, AdamWConfig, LinearWarmup};
pub use stc::{stc_labels, stc_train_eval, StcConfig, StcHead, StcReport, StcRun, STC_CLASSES};
pub use train::{balanced_weights, train, ClassWeights, EpochRecord, Sample, TrainConfig, TrainOutcome};

/// Architecture and graph construction settings, stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Candidate pairs scored per document.
    pub window: WindowPolicy,
    pub structure: Structure,
    /// Window for the document graph's arcs; defaults to `window`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub structure_window: Option<WindowPolicy>,
    pub gnn: GnnConfig,
    pub head_dropout: f64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: WindowPolicy::All,
            structure: Structure::SemiComplete,
            structure_window: None,
            gnn: GnnConfig::default(),
            head_dropout: 0.4,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.gnn.validate()?;
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::Config(format!("head dropout {} outside [0, 1)", self.head_dropout)));
        }
        Ok(())
    }

    pub fn graph_for(&self, n: usize) -> Result<FlowGraph> {
        build_structure(n, self.structure, self.structure_window.unwrap_or(self.window))
    }
}

/// Two projections over concatenated node pairs: `2d → d → 2`.
#[derive(Clone, Debug)]
pub struct PairHead {
    pub proj1: ParamId,
    pub bias1: ParamId,
    pub proj2: ParamId,
    pub bias2: ParamId,
    pub d_node: usize,
    pub dropout: f64,
}

impl PairHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, d_node: usize, dropout: f64, rng: &mut R) -> Self {
        PairHead {
            proj1: store.add_glorot("head.proj1", 2 * d_node, d_node, rng),
            bias1: store.add("head.bias1", Tensor::zeros(1, d_node)),
            proj2: store.add_glorot("head.proj2", d_node, 2, rng),
            bias2: store.add("head.bias2", Tensor::zeros(1, 2)),
            d_node,
            dropout,
        }
    }

    /// One row of two logits per pair.
    pub fn logits<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        nodes: Var,
        pairs: &[Edge],
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let n = tape.try_value(nodes)?.rows();
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n) {
            return Err(Error::validation(format!("pair ({i}, {j}) out of range for {n} nodes")));
        }
        let (src, dst): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        // [h_i ; h_j]·W = h_i·W_top + h_j·W_bottom, so project the n nodes
        // once and gather afterwards instead of projecting every pair.
        let w = params.var(self.proj1);
        let w_src = tape.slice_rows(w, 0, self.d_node)?;
        let w_dst = tape.slice_rows(w, self.d_node, self.d_node)?;
        let from_src = tape.matmul(nodes, w_src)?;
        let from_dst = tape.matmul(nodes, w_dst)?;
        let xi = tape.gather_rows(from_src, &src)?;
        let xj = tape.gather_rows(from_dst, &dst)?;
        let x = tape.add(xi, xj)?;
        let x = tape.add_row(x, params.var(self.bias1))?;
        let x = tape.dropout(x, self.dropout, training, rng)?;
        let x = tape.gelu(x)?;
        let x = tape.matmul(x, params.var(self.proj2))?;
        tape.add_row(x, params.var(self.bias2))
    }
}

/// `P(edge)` from a row of two logits.
pub fn edge_probability<T: Scalar>(logits: &[T]) -> f64 {
    let (a, b) = (logits[0].as_f64(), logits[1].as_f64());
    1.0 / (1.0 + (a - b).exp())
}

/// Predicted flow graph of one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub n: usize,
    pub edges: Vec<Edge>,
    pub pairs: Vec<Edge>,
    pub probabilities: Vec<f64>,
}

pub const EDGE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct EdgeModel<T> {
    pub config: ModelConfig,
    pub in_dim: usize,
    pub params: ParamStore<T>,
    pub stack: GnnStack,
    pub head: PairHead,
}

impl<T: Scalar> EdgeModel<T> {
    pub fn new(config: ModelConfig, in_dim: usize, seed: u64) -> Result<Self> {
        Self::with_rng(config, in_dim, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng<R: Rng + ?Sized>(config: ModelConfig, in_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if config.precision != T::PRECISION {
            return Err(Error::Config(format!(
                "model configured for {:?} built at {:?}",
                config.precision,
                T::PRECISION
            )));
        }
        let mut params = ParamStore::new();
        let stack = GnnStack::new(&mut params, &config.gnn, in_dim, rng)?;
        let head = PairHead::new(&mut params, stack.out_dim, config.head_dropout, rng);
        Ok(EdgeModel {
            config,
            in_dim,
            params,
            stack,
            head,
        })
    }

    pub fn check_features(&self, id: &str, features: &EmbeddingMatrix) -> Result<()> {
        if features.d() != self.in_dim {
            return Err(Error::validation(format!(
                "document '{id}': feature dimension {} does not match the model's {}",
                features.d(),
                self.in_dim
            )));
        }
        Ok(())
    }

    /// Records the full forward pass and returns the `|pairs| × 2` logits.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        features: &Tensor<T>,
        graph: &FlowGraph,
        pairs: &[Edge],
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let x = tape.constant(features.clone());
        let nodes = self.stack.forward(tape, params, x, graph, training, rng)?;
        self.head.logits(tape, params, nodes, pairs, training, rng)
    }

    /// Inference-mode `P(edge)` for each pair.
    pub fn score(&self, features: &Tensor<T>, graph: &FlowGraph, pairs: &[Edge]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let params = self.params.bind_frozen(&mut tape);
        // Dropout is inactive at inference, so the generator is never drawn from.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = self.forward(&mut tape, &params, features, graph, pairs, false, &mut rng)?;
        let logits = tape.value(logits);
        Ok((0..logits.rows()).map(|r| edge_probability(logits.row(r))).collect())
    }

    /// Scores in-window pairs plus out-of-window gold edges against the
    /// document's gold graph.
    pub fn score_document(&self, doc: &Document, features: &EmbeddingMatrix) -> Result<ScoredDocument> {
        self.check_features(doc.id(), features)?;
        let candidates = enumerate_candidates(doc, self.config.window)?;
        let graph = self.config.graph_for(doc.len())?;
        let scores = self.score(&features.to_tensor(), &graph, &candidates.pairs)?;
        Ok(ScoredDocument {
            id: doc.id().to_string(),
            pairs: candidates.pairs,
            labels: candidates.labels,
            scores,
        })
    }

    /// Pooled metrics over `samples`, scored in parallel across documents.
    pub fn evaluate(&self, samples: &[Sample], per_doc: bool) -> Result<EvalReport> {
        if samples.is_empty() {
            return Err(Error::Empty("evaluation split"));
        }
        let scored = samples
            .par_iter()
            .map(|s| self.score_document(&s.doc, &s.features))
            .collect::<Result<Vec<_>>>()?;
        eval::summarize(&scored, per_doc)
    }

    /// Emits edge `(i, j)` for every in-window pair with `P(edge) ≥ 0.5`. Gold
    /// edges are not consulted.
    pub fn predict(&self, doc: &Document, features: &EmbeddingMatrix) -> Result<Prediction> {
        self.check_features(doc.id(), features)?;
        if features.n() != doc.len() {
            return Err(Error::validation(format!(
                "document '{}' has {} sentences but {} feature rows",
                doc.id(),
                doc.len(),
                features.n()
            )));
        }
        let n = doc.len();
        let pairs = window_pairs(n, self.config.window);
        let graph = self.config.graph_for(n)?;
        let probabilities = self.score(&features.to_tensor(), &graph, &pairs)?;
        let edges = pairs
            .iter()
            .zip(&probabilities)
            .filter(|(_, &p)| p >= EDGE_THRESHOLD)
            .map(|(&e, _)| e)
            .collect();
        Ok(Prediction {
            id: doc.id().to_string(),
            n,
            edges,
            pairs,
            probabilities,
        })
    }
}
