//! Shared oracles for integration and acceptance tests.

#![allow(dead_code)]

use flowgraph::corpus::Document;
use flowgraph::encoder::hash_encode;
use flowgraph::gnn::{GatLayer, GcnLayer};
use flowgraph::graph::FlowGraph;
use flowgraph::model::{PairHead, Sample};
use flowgraph::tensor::{Bound, ParamStore, Tape, Tensor, Var};
use flowgraph::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Floor on the denominator of the relative error, so entries that are zero
/// in both gradients compare as equal.
pub const REL_FLOOR: f64 = 1e-6;

pub fn random_tensor<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

pub fn random_graph<R: Rng>(n: usize, rng: &mut R) -> FlowGraph {
    let edges: Vec<_> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let keep: Vec<_> = edges.into_iter().filter(|_| rng.random_bool(0.5)).collect();
    FlowGraph::from_edges(n, keep).unwrap()
}

/// Reduces a matrix output to a scalar through fixed random weights so the
/// whole Jacobian is exercised.
pub fn project(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn loss_value<F>(store: &ParamStore<f64>, f: &F) -> f64
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let loss = f(&mut tape, &bound).unwrap();
    tape.value(loss).get(0, 0)
}

/// Largest relative disagreement between the tape's gradient and central
/// finite differences over every entry of every tensor in `store`.
pub fn gradient_error<F>(store: &ParamStore<f64>, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let loss = f(&mut tape, &bound).unwrap();
    tape.backward(loss).unwrap();
    let analytic = store.grads(&tape, &bound);

    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for (k, id) in store.ids().enumerate() {
        for e in 0..store.get(id).len() {
            let original = store.get(id).data()[e];
            probe.get_mut(id).data_mut()[e] = original + FD_STEP;
            let up = loss_value(&probe, &f);
            probe.get_mut(id).data_mut()[e] = original - FD_STEP;
            let down = loss_value(&probe, &f);
            probe.get_mut(id).data_mut()[e] = original;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[k].data()[e];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

/// One random gradient-check instance per component; returns the worst
/// relative error for each.
pub struct GradientCase {
    pub name: &'static str,
    pub error: f64,
}

pub fn gradient_cases(seed: u64) -> Vec<GradientCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let d_in = rng.random_range(1..=16);
    let d_out = rng.random_range(1..=16);
    let mut out = Vec::new();

    // GCN layer: input features, weights and bias.
    {
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(n, d_in, &mut rng));
        let layer = GcnLayer::new(&mut store, "gcn", d_in, d_out, true, &mut rng);
        let b = layer.bias.unwrap();
        *store.get_mut(b) = random_tensor(1, d_out, &mut rng);
        let graph = random_graph(n, &mut rng);
        let symmetrize = rng.random_bool(0.5);
        let r = random_tensor(n, d_out, &mut rng);
        let error = gradient_error(&store, |tape, p| {
            let h = layer.forward(tape, p, p.var(x), &graph, symmetrize)?;
            project(tape, h, &r)
        });
        out.push(GradientCase { name: "gcn", error });
    }

    // GAT layer: multi-head, concatenated or averaged.
    {
        let heads = rng.random_range(1..=3);
        let d_head = rng.random_range(1..=6);
        let concat = rng.random_bool(0.5);
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(n, d_in, &mut rng));
        let layer = GatLayer::new(&mut store, "gat", d_in, d_head, heads, concat, 0.2, true, &mut rng);
        *store.get_mut(layer.bias.unwrap()) = random_tensor(1, layer.d_out(), &mut rng);
        let graph = random_graph(n, &mut rng);
        let symmetrize = rng.random_bool(0.5);
        let r = random_tensor(n, layer.d_out(), &mut rng);
        let error = gradient_error(&store, |tape, p| {
            let h = layer.forward(tape, p, p.var(x), &graph, symmetrize)?;
            project(tape, h, &r)
        });
        out.push(GradientCase { name: "gat", error });
    }

    // Pair head with an active, fixed dropout mask.
    {
        let nodes = n.max(2);
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(nodes, d_in, &mut rng));
        let head = PairHead::new(&mut store, d_in, 0.4, &mut rng);
        *store.get_mut(head.bias1) = random_tensor(1, d_in, &mut rng);
        *store.get_mut(head.bias2) = random_tensor(1, 2, &mut rng);
        let pairs: Vec<_> = (0..rng.random_range(1..=6))
            .map(|_| (rng.random_range(0..nodes), rng.random_range(0..nodes)))
            .collect();
        let r = random_tensor(pairs.len(), 2, &mut rng);
        let mask_seed = rng.random::<u64>();
        let error = gradient_error(&store, |tape, p| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
            let z = head.logits(tape, p, p.var(x), &pairs, true, &mut mask_rng)?;
            project(tape, z, &r)
        });
        out.push(GradientCase { name: "pair_head", error });
    }

    // GELU.
    {
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(n, d_in, &mut rng).map(|v| 3.0 * v));
        let r = random_tensor(n, d_in, &mut rng);
        let error = gradient_error(&store, |tape, p| {
            let h = tape.gelu(p.var(x))?;
            project(tape, h, &r)
        });
        out.push(GradientCase { name: "gelu", error });
    }

    // Row softmax, plain and masked.
    {
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(n, d_in, &mut rng).map(|v| 2.0 * v));
        let mut mask: Vec<bool> = (0..n * d_in).map(|_| rng.random_bool(0.7)).collect();
        for row in 0..n {
            mask[row * d_in] = true;
        }
        let r = random_tensor(n, d_in, &mut rng);
        let r2 = random_tensor(n, d_in, &mut rng);
        let error = gradient_error(&store, |tape, p| {
            let s = tape.softmax_rows(p.var(x))?;
            let a = project(tape, s, &r)?;
            let m = tape.masked_softmax_rows(p.var(x), &mask)?;
            let b = project(tape, m, &r2)?;
            tape.add(a, b)
        });
        out.push(GradientCase { name: "softmax", error });
    }

    // Weighted cross-entropy.
    {
        let m = rng.random_range(1..=8);
        let mut store = ParamStore::new();
        let x = store.add("logits", random_tensor(m, 2, &mut rng).map(|v| 3.0 * v));
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..2)).collect();
        let weights = [rng.random_range(0.1..5.0), rng.random_range(0.1..5.0)];
        let error = gradient_error(&store, |tape, p| tape.weighted_cross_entropy(p.var(x), &labels, &weights));
        out.push(GradientCase { name: "weighted_ce", error });
    }
    out
}

/// Hash-encoded samples for `docs`.
pub fn samples(docs: &[Document], dim: usize) -> Vec<Sample> {
    docs.iter()
        .map(|d| Sample {
            doc: d.clone(),
            features: hash_encode(&d.texts(), dim, 0).unwrap(),
        })
        .collect()
}
