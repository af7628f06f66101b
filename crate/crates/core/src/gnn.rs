//! Neighbour-aware sentence representations.
//!
//! Messages flow along the directed document graph: node `i` aggregates its
//! in-neighbours (earlier sentences) plus itself. `symmetrize` switches to
//! undirected aggregation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FlowGraph;
use crate::tensor::{Bound, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnKind {
    None,
    #[default]
    Gcn,
    Gat,
}

impl std::str::FromStr for GnnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GnnKind::None),
            "gcn" => Ok(GnnKind::Gcn),
            "gat" => Ok(GnnKind::Gat),
            other => Err(Error::Config(format!("unknown gnn kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub kind: GnnKind,
    /// 0, 1 or 2.
    pub layers: usize,
    /// Output width of layer 1 and layer 2.
    pub hidden: [usize; 2],
    /// GAT heads per layer. Layer 1 concatenates, layer 2 averages.
    pub gat_heads: [usize; 2],
    pub leaky_slope: f64,
    /// Dropout after the layer-1 activation.
    pub dropout: f64,
    pub bias: bool,
    pub symmetrize: bool,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            kind: GnnKind::Gcn,
            layers: 1,
            hidden: [128, 64],
            gat_heads: [4, 1],
            leaky_slope: 0.2,
            dropout: 0.4,
            bias: true,
            symmetrize: false,
        }
    }
}

impl GnnConfig {
    pub fn depth(&self) -> usize {
        match self.kind {
            GnnKind::None => 0,
            _ => self.layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers > 2 {
            return Err(Error::Config(format!("{} GNN layers; at most 2 supported", self.layers)));
        }
        if self.kind == GnnKind::None && self.layers > 0 {
            return Err(Error::Config("gnn kind 'none' conflicts with a non-zero layer count".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.hidden.contains(&0) || self.gat_heads.contains(&0) {
            return Err(Error::Config("hidden sizes and head counts must be positive".into()));
        }
        if self.kind == GnnKind::Gat && !self.hidden[0].is_multiple_of(self.gat_heads[0]) {
            return Err(Error::Config(format!(
                "layer-1 width {} is not divisible by {} heads",
                self.hidden[0], self.gat_heads[0]
            )));
        }
        Ok(())
    }
}

/// Aggregation neighbourhood of every node, excluding the node itself.
pub fn neighborhoods(graph: &FlowGraph, symmetrize: bool) -> Vec<Vec<usize>> {
    (0..graph.n())
        .map(|v| {
            let mut nb = graph.in_neighbors(v).to_vec();
            if symmetrize {
                nb.extend_from_slice(graph.out_neighbors(v));
                nb.sort_unstable();
            }
            nb
        })
        .collect()
}

/// `Â[i][j] = 1/sqrt(d(i)·d(j))` for `j ∈ N(i) ∪ {i}`, with `d(v) = 1 + |N(v)|`.
pub fn gcn_adjacency<T: Scalar>(graph: &FlowGraph, symmetrize: bool) -> Tensor<T> {
    let n = graph.n();
    let nb = neighborhoods(graph, symmetrize);
    let deg: Vec<f64> = nb.iter().map(|v| 1.0 + v.len() as f64).collect();
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        a.set(i, i, T::of(1.0 / deg[i]));
        for &j in &nb[i] {
            a.set(i, j, T::of(1.0 / (deg[i] * deg[j]).sqrt()));
        }
    }
    a
}

/// Row-major `n × n` mask of `N(i) ∪ {i}`.
pub fn attention_mask(graph: &FlowGraph, symmetrize: bool) -> Vec<bool> {
    let n = graph.n();
    let mut mask = vec![false; n * n];
    for (i, nb) in neighborhoods(graph, symmetrize).iter().enumerate() {
        mask[i * n + i] = true;
        for &j in nb {
            mask[i * n + j] = true;
        }
    }
    mask
}

fn check_rows<T: Scalar>(tape: &Tape<T>, h: Var, graph: &FlowGraph) -> Result<()> {
    let rows = tape.try_value(h)?.rows();
    if rows != graph.n() {
        return Err(Error::validation(format!(
            "feature matrix has {rows} rows but the graph has {} nodes",
            graph.n()
        )));
    }
    Ok(())
}

/// Degree-normalized graph convolution.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub theta: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl GcnLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let theta = store.add_glorot(format!("{prefix}.theta"), d_in, d_out, rng);
        let bias = bias.then(|| store.add(format!("{prefix}.bias"), Tensor::zeros(1, d_out)));
        GcnLayer {
            theta,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        h: Var,
        graph: &FlowGraph,
        symmetrize: bool,
    ) -> Result<Var> {
        check_rows(tape, h, graph)?;
        let adj = tape.constant(gcn_adjacency(graph, symmetrize));
        let projected = tape.matmul(h, params.var(self.theta))?;
        let out = tape.matmul(adj, projected)?;
        match self.bias {
            Some(b) => tape.add_row(out, params.var(b)),
            None => Ok(out),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GatHead {
    pub theta: ParamId,
    /// `2·d_head × 1`; the first half scores the receiving node, the second
    /// half the sending node.
    pub attention: ParamId,
}

/// Multi-head graph attention.
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub d_in: usize,
    pub d_head: usize,
    pub concat: bool,
    pub slope: f64,
    pub bias: Option<ParamId>,
}

impl GatLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_in: usize,
        d_head: usize,
        heads: usize,
        concat: bool,
        slope: f64,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let heads = (0..heads)
            .map(|k| GatHead {
                theta: store.add_glorot(format!("{prefix}.head{k}.theta"), d_in, d_head, rng),
                attention: store.add_glorot(format!("{prefix}.head{k}.attention"), 2 * d_head, 1, rng),
            })
            .collect::<Vec<_>>();
        let d_out = if concat { heads.len() * d_head } else { d_head };
        let bias = bias.then(|| store.add(format!("{prefix}.bias"), Tensor::zeros(1, d_out)));
        GatLayer {
            heads,
            d_in,
            d_head,
            concat,
            slope,
            bias,
        }
    }

    pub fn d_out(&self) -> usize {
        if self.concat {
            self.heads.len() * self.d_head
        } else {
            self.d_head
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        h: Var,
        graph: &FlowGraph,
        symmetrize: bool,
    ) -> Result<Var> {
        self.forward_with_attention(tape, params, h, graph, symmetrize)
            .map(|(out, _)| out)
    }

    /// Also returns each head's `n × n` attention matrix.
    pub fn forward_with_attention<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        h: Var,
        graph: &FlowGraph,
        symmetrize: bool,
    ) -> Result<(Var, Vec<Var>)> {
        check_rows(tape, h, graph)?;
        let mask = attention_mask(graph, symmetrize);
        let mut outputs = Vec::with_capacity(self.heads.len());
        let mut weights = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let z = tape.matmul(h, params.var(head.theta))?;
            let attn = params.var(head.attention);
            let a_recv = tape.slice_rows(attn, 0, self.d_head)?;
            let a_send = tape.slice_rows(attn, self.d_head, self.d_head)?;
            let recv = tape.matmul(z, a_recv)?;
            let send = tape.matmul(z, a_send)?;
            let logits = tape.outer_add(recv, send)?;
            let logits = tape.leaky_relu(logits, T::of(self.slope))?;
            let alpha = tape.masked_softmax_rows(logits, &mask)?;
            outputs.push(tape.matmul(alpha, z)?);
            weights.push(alpha);
        }
        let mut out = if self.concat || outputs.len() == 1 {
            if outputs.len() == 1 {
                outputs[0]
            } else {
                tape.concat_cols(&outputs)?
            }
        } else {
            let mut acc = outputs[0];
            for &o in &outputs[1..] {
                acc = tape.add(acc, o)?;
            }
            tape.scale(acc, T::of(1.0 / outputs.len() as f64))?
        };
        if let Some(b) = self.bias {
            out = tape.add_row(out, params.var(b))?;
        }
        Ok((out, weights))
    }
}

#[derive(Clone, Debug)]
pub enum GnnLayer {
    Gcn(GcnLayer),
    Gat(GatLayer),
}

impl GnnLayer {
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        h: Var,
        graph: &FlowGraph,
        symmetrize: bool,
    ) -> Result<Var> {
        match self {
            GnnLayer::Gcn(l) => l.forward(tape, params, h, graph, symmetrize),
            GnnLayer::Gat(l) => l.forward(tape, params, h, graph, symmetrize),
        }
    }
}

/// Zero, one or two graph layers. Layer 1 is followed by GELU and dropout,
/// layer 2 by GELU.
#[derive(Clone, Debug)]
pub struct GnnStack {
    pub config: GnnConfig,
    pub layers: Vec<GnnLayer>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl GnnStack {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: &GnnConfig,
        in_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut dim = in_dim;
        for l in 0..config.depth() {
            let prefix = format!("gnn.layer{}", l + 1);
            let width = config.hidden[l];
            let layer = match config.kind {
                GnnKind::Gcn => GnnLayer::Gcn(GcnLayer::new(store, &prefix, dim, width, config.bias, rng)),
                GnnKind::Gat => {
                    let heads = config.gat_heads[l];
                    let concat = l == 0;
                    let d_head = if concat { width / heads } else { width };
                    GnnLayer::Gat(GatLayer::new(
                        store,
                        &prefix,
                        dim,
                        d_head,
                        heads,
                        concat,
                        config.leaky_slope,
                        config.bias,
                        rng,
                    ))
                }
                GnnKind::None => unreachable!("depth is 0"),
            };
            layers.push(layer);
            dim = width;
        }
        Ok(GnnStack {
            config: config.clone(),
            layers,
            in_dim,
            out_dim: dim,
        })
    }

    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        features: Var,
        graph: &FlowGraph,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let cols = tape.try_value(features)?.cols();
        if cols != self.in_dim {
            return Err(Error::validation(format!(
                "features have {cols} columns, the model expects {}",
                self.in_dim
            )));
        }
        let mut h = features;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, params, h, graph, self.config.symmetrize)?;
            h = tape.gelu(h)?;
            if l == 0 {
                h = tape.dropout(h, self.config.dropout, training, rng)?;
            }
        }
        Ok(h)
    }
}
