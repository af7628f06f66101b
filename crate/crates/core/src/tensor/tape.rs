use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{gelu_grad_scalar, gelu_scalar, Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sum(usize),
    Gelu(usize),
    LeakyRelu(usize, T),
    SoftmaxRows(usize),
    MaskedSoftmaxRows(usize),
    Dropout(usize, Vec<T>),
    GatherRows(usize, Vec<usize>),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    OuterAdd(usize, usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        weights: Vec<T>,
        probs: Tensor<T>,
        total_weight: T,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Gelu(..) => "gelu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::MaskedSoftmaxRows(..) => "masked_softmax_rows",
            Op::Dropout(..) => "dropout",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::OuterAdd(..) => "outer_add",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records operations in execution order so that [`Tape::backward`] can
/// replay them in exact reverse.
///
/// Gradients accumulate into each node's slot across repeated `backward`
/// calls until [`Tape::zero_grad`] is called.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Tape(format!(
                "tensor #{} does not belong to tape {}",
                v.index, self.id
            )));
        }
        Ok(v.index)
    }

    /// Records a leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Panics if `v` was recorded on another tape.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.try_value(v).expect("foreign tensor")
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.index(v)?].value)
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        let i = self.index(v).ok()?;
        self.nodes[i].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.index(v).is_ok_and(|i| self.nodes[i].requires_grad)
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let out = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        self.push(out, Op::MatMul(ia, ib), &[ia, ib])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        self.same_shape("add", ia, ib)?;
        let mut out = self.nodes[ia].value.clone();
        out.add_assign(&self.nodes[ib].value);
        self.push(out, Op::Add(ia, ib), &[ia, ib])
    }

    /// Adds a `1×c` row to every row of an `r×c` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(row)?);
        let (x, b) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: x.shape(),
                right: b.shape(),
            });
        }
        let mut out = x.clone();
        let cols = x.cols();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v + b.data()[k % cols];
        }
        self.push(out, Op::AddRow(ia, ib), &[ia, ib])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        self.same_shape("mul", ia, ib)?;
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        self.push(out, Op::Mul(ia, ib), &[ia, ib])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let ia = self.index(a)?;
        let out = self.nodes[ia].value.map(|v| v * c);
        self.push(out, Op::Scale(ia, c), &[ia])
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let out = Tensor::scalar(self.nodes[ia].value.sum());
        self.push(out, Op::Sum(ia), &[ia])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let out = self.nodes[ia].value.map(|v| T::of(gelu_scalar(v.as_f64())));
        self.push(out, Op::Gelu(ia), &[ia])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        let ia = self.index(a)?;
        let out = self.nodes[ia]
            .value
            .map(|v| if v < T::zero() { v * slope } else { v });
        self.push(out, Op::LeakyRelu(ia, slope), &[ia])
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let out = softmax_rows_masked(&self.nodes[ia].value, None);
        self.push(out, Op::SoftmaxRows(ia), &[ia])
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries come out as exactly zero. `mask` is row-major with the same
    /// shape as `a`.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let ia = self.index(a)?;
        let x = &self.nodes[ia].value;
        if mask.len() != x.len() {
            return Err(Error::Shape {
                op: "masked_softmax_rows",
                left: x.shape(),
                right: (mask.len(), 1),
            });
        }
        let out = softmax_rows_masked(x, Some(mask));
        self.push(out, Op::MaskedSoftmaxRows(ia), &[ia])
    }

    /// Inverted dropout. Identity when `training` is false or `p` is zero.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        let ia = self.index(a)?;
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep_scale = T::of(1.0 / (1.0 - p));
        let x = &self.nodes[ia].value;
        let mask: Vec<T> = (0..x.len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        self.push(out, Op::Dropout(ia, mask), &[ia])
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ia = self.index(a)?;
        let x = &self.nodes[ia].value;
        let cols = x.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= x.rows() {
                return Err(Error::validation(format!(
                    "row index {r} out of range for {} rows",
                    x.rows()
                )));
            }
            data.extend_from_slice(x.row(r));
        }
        let out = Tensor::from_vec(rows.len(), cols, data)?;
        self.push(out, Op::GatherRows(ia, rows.to_vec()), &[ia])
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.index(a)?;
        let x = &self.nodes[ia].value;
        if start + len > x.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                left: x.shape(),
                right: (start + len, x.cols()),
            });
        }
        let cols = x.cols();
        let data = x.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_vec(len, cols, data)?;
        self.push(out, Op::SliceRows(ia, start), &[ia])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.index(v)).collect::<Result<Vec<_>>>()?;
        let first = idx.first().ok_or(Error::Empty("concat_cols input"))?;
        let rows = self.nodes[*first].value.rows();
        let mut cols = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            if s.0 != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.nodes[*first].value.shape(),
                    right: s,
                });
            }
            cols += s.1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &idx {
                data.extend_from_slice(self.nodes[i].value.row(r));
            }
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push(out, Op::ConcatCols(idx.clone()), &idx)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.index(v)).collect::<Result<Vec<_>>>()?;
        let first = idx.first().ok_or(Error::Empty("concat_rows input"))?;
        let cols = self.nodes[*first].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &idx {
            let v = &self.nodes[i].value;
            if v.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.nodes[*first].value.shape(),
                    right: v.shape(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push(out, Op::ConcatRows(idx.clone()), &idx)
    }

    /// `out[i][j] = a[i] + b[j]` for column vectors `a` (n×1) and `b` (m×1).
    pub fn outer_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if x.cols() != 1 || y.cols() != 1 {
            return Err(Error::Shape {
                op: "outer_add",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let (n, m) = (x.rows(), y.rows());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                data.push(x.data()[i] + y.data()[j]);
            }
        }
        let out = Tensor::from_vec(n, m, data)?;
        self.push(out, Op::OuterAdd(ia, ib), &[ia, ib])
    }

    /// Class-weighted cross-entropy over rows of `logits`, normalized by the
    /// summed weight of the target classes:
    ///
    /// `L = Σ_k w[c_k]·(logsumexp(x_k) − x_k[c_k]) / Σ_k w[c_k]`.
    ///
    /// With all weights equal this is the mean cross-entropy.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        weights: &[T],
    ) -> Result<Var> {
        let il = self.index(logits)?;
        let x = &self.nodes[il].value;
        let (m, k) = x.shape();
        if m == 0 {
            return Err(Error::Empty("cross-entropy batch"));
        }
        if labels.len() != m {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: x.shape(),
                right: (labels.len(), 1),
            });
        }
        if weights.len() != k {
            return Err(Error::Config(format!(
                "{} class weights for {k} classes",
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > T::zero())) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
            return Err(Error::validation(format!(
                "label {bad} outside classes 0..{k}"
            )));
        }
        let probs = softmax_rows_masked(x, None);
        let mut numerator = T::zero();
        let mut total_weight = T::zero();
        for (r, &c) in labels.iter().enumerate() {
            let row = x.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            numerator = numerator + weights[c] * (lse - row[c]);
            total_weight = total_weight + weights[c];
        }
        let out = Tensor::scalar(numerator / total_weight);
        self.push(
            out,
            Op::CrossEntropy {
                logits: il,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                probs,
                total_weight,
            },
            &[il],
        )
    }

    /// Propagates gradients from the scalar `loss` to every node that
    /// requires them, adding into existing gradient slots.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.index(loss)?;
        let shape = self.nodes[root].value.shape();
        if shape != (1, 1) {
            return Err(Error::Tape(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::scalar(T::one()));

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if cfg!(debug_assertions) && !g.is_finite() {
                return Err(Error::NonFinite {
                    op: self.nodes[i].op.name(),
                });
            }
            self.propagate(i, &g, &mut grads)?;
            match &mut self.nodes[i].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let mut send = |target: usize, delta: Tensor<T>| {
            if !nodes[target].requires_grad {
                return;
            }
            match &mut grads[target] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let value = |k: usize| &nodes[k].value;

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if nodes[*a].requires_grad {
                    send(*a, g.matmul_t(value(*b))?);
                }
                if nodes[*b].requires_grad {
                    send(*b, value(*a).t_matmul(g)?);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                send(*a, g.clone());
                let cols = g.cols();
                let mut db = Tensor::zeros(1, cols);
                let acc = db.data_mut();
                for (k, &v) in g.data().iter().enumerate() {
                    acc[k % cols] = acc[k % cols] + v;
                }
                send(*b, db);
            }
            Op::Mul(a, b) => {
                let (x, y) = (value(*a), value(*b));
                send(*a, zip_with(g, y, |p, q| p * q));
                send(*b, zip_with(g, x, |p, q| p * q));
            }
            Op::Scale(a, c) => send(*a, g.map(|v| v * *c)),
            Op::Sum(a) => {
                let (r, c) = value(*a).shape();
                send(*a, Tensor::filled(r, c, g.data()[0]));
            }
            Op::Gelu(a) => send(
                *a,
                zip_with(g, value(*a), |d, x| d * T::of(gelu_grad_scalar(x.as_f64()))),
            ),
            Op::LeakyRelu(a, slope) => send(
                *a,
                zip_with(g, value(*a), |d, x| if x < T::zero() { d * *slope } else { d }),
            ),
            Op::SoftmaxRows(a) | Op::MaskedSoftmaxRows(a) => {
                let y = &nodes[i].value;
                let cols = y.cols();
                let mut dx = Tensor::zeros(y.rows(), cols);
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for c in 0..cols {
                        dx.data_mut()[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                send(*a, dx);
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
                send(*a, Tensor::from_vec(g.rows(), g.cols(), data)?);
            }
            Op::GatherRows(a, rows) => {
                let src = value(*a);
                let cols = src.cols();
                let mut dx = Tensor::zeros(src.rows(), cols);
                for (k, &r) in rows.iter().enumerate() {
                    let target = &mut dx.data_mut()[r * cols..(r + 1) * cols];
                    for (t, &d) in target.iter_mut().zip(g.row(k)) {
                        *t = *t + d;
                    }
                }
                send(*a, dx);
            }
            Op::SliceRows(a, start) => {
                let src = value(*a);
                let cols = src.cols();
                let mut dx = Tensor::zeros(src.rows(), cols);
                dx.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                send(*a, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = value(p).shape();
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        dx.data_mut()[r * cols..(r + 1) * cols]
                            .copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    send(p, dx);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = value(p).shape();
                    let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    offset += rows;
                    send(p, Tensor::from_vec(rows, cols, data)?);
                }
            }
            Op::OuterAdd(a, b) => {
                let (n, m) = g.shape();
                let mut da = Tensor::zeros(n, 1);
                let mut db = Tensor::zeros(m, 1);
                {
                    let (acc_a, acc_b) = (da.data_mut(), db.data_mut());
                    for r in 0..n {
                        for c in 0..m {
                            let d = g.get(r, c);
                            acc_a[r] = acc_a[r] + d;
                            acc_b[c] = acc_b[c] + d;
                        }
                    }
                }
                send(*a, da);
                send(*b, db);
            }
            Op::CrossEntropy {
                logits,
                labels,
                weights,
                probs,
                total_weight,
            } => {
                let upstream = g.data()[0];
                let k = probs.cols();
                let mut dx = probs.clone();
                for (r, &c) in labels.iter().enumerate() {
                    let scale = upstream * weights[c] / *total_weight;
                    let row = &mut dx.data_mut()[r * k..(r + 1) * k];
                    row[c] = row[c] - T::one();
                    for v in row.iter_mut() {
                        *v = *v * scale;
                    }
                }
                send(*logits, dx);
            }
        }
        Ok(())
    }
}

fn zip_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn softmax_rows_masked<T: Scalar>(x: &Tensor<T>, mask: Option<&[bool]>) -> Tensor<T> {
    let (rows, cols) = x.shape();
    let mut out = Tensor::zeros(rows, cols);
    let keep = |k: usize| mask.is_none_or(|m| m[k]);
    for r in 0..rows {
        let base = r * cols;
        let max = (0..cols)
            .filter(|&c| keep(base + c))
            .map(|c| x.data()[base + c])
            .fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            continue;
        }
        let mut total = T::zero();
        for c in 0..cols {
            if keep(base + c) {
                let e = (x.data()[base + c] - max).exp();
                out.data_mut()[base + c] = e;
                total = total + e;
            }
        }
        for v in &mut out.data_mut()[base..base + cols] {
            *v = *v / total;
        }
    }
    out
}
