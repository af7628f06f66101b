use rand::Rng;

use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameter tensors that outlive any single tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform Glorot initialization over `(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        self.add(name, Tensor::from_vec(rows, cols, data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    /// Replaces the value of `name`, keeping its shape.
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Format(format!("unknown parameter '{name}'")))?;
        let current = self.get(id);
        if current.shape() != value.shape() {
            return Err(Error::Shape {
                op: "assign",
                left: current.shape(),
                right: value.shape(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Records every parameter on `tape` as a gradient-receiving leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.values.iter().map(|v| tape.param(v.clone())).collect())
    }

    /// Records every parameter as a constant, for inference.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.values.iter().map(|v| tape.constant(v.clone())).collect())
    }

    /// Gradients of a bound parameter set, zero-filled where the parameter
    /// did not take part in the loss.
    pub fn grads(&self, tape: &Tape<T>, bound: &Bound) -> Vec<Tensor<T>> {
        self.values
            .iter()
            .zip(&bound.0)
            .map(|(v, &var)| {
                tape.grad(var)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(v.rows(), v.cols()))
            })
            .collect()
    }
}

/// Tape handles of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}
