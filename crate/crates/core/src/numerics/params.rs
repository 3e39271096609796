use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{HgnError, Result};

/// Named trainable tensors with their gradient buffers, in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(HgnError::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.position(name)
            .map(|i| &self.values[i])
            .ok_or_else(|| HgnError::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self
            .position(name)
            .ok_or_else(|| HgnError::InvalidArgument(format!("unknown parameter {name}")))?;
        Ok(&mut self.values[i])
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.position(name)
            .map(|i| &self.grads[i])
            .ok_or_else(|| HgnError::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Tensor], &mut [Tensor]) {
        (&mut self.values, &mut self.grads)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_coords(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Puts every parameter on the graph as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bindings {
        let vars = self.values.iter().map(|v| g.param(v.clone())).collect();
        Bindings {
            vars,
            index: self.index.clone(),
        }
    }

    /// Adds the graph's leaf gradients into the store's gradient buffers.
    pub fn accumulate_grads(&mut self, g: &Graph, bindings: &Bindings) {
        for (grad, &var) in self.grads.iter_mut().zip(&bindings.vars) {
            if let Some(gv) = g.grad(var) {
                for (a, b) in grad.data_mut().iter_mut().zip(gv.data()) {
                    *a += b;
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in &mut self.grads {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }

    /// Overwrites values from a named list; names and shapes must match exactly.
    pub fn load_named(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.len() {
            return Err(HgnError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.len(),
                named.len()
            )));
        }
        for (name, t) in named {
            let slot = self
                .get_mut(&name)
                .map_err(|_| HgnError::Checkpoint(format!("unexpected tensor {name}")))?;
            if slot.shape() != t.shape() {
                return Err(HgnError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(())
    }
}

/// Graph handles for every parameter of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| HgnError::InvalidArgument(format!("unbound parameter {name}")))
    }
}

/// Glorot-uniform matrix.
pub fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive extents")
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}
