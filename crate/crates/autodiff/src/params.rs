//! Named parameter registry. Registration order is stable and defines the
//! serialization order used by checkpoint files.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape};
use crate::tensor::Tensor;

#[derive(Debug)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
    velocity: Tensor,
}

#[derive(Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

/// Mutable view of one parameter used by the optimizer step.
pub struct ParamView<'a> {
    pub name: &'a str,
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
    pub velocity: &'a mut [f64],
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        let velocity = Tensor::zeros(value.shape().to_vec());
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value: value.with_grad(),
            grad,
            velocity,
        });
        Ok(())
    }

    fn entry(&self, name: &str) -> Result<&Entry> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.grad)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = *self.index.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        Ok(&mut self.entries[i].value)
    }

    /// Parameter names in registration order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Adds the tape gradients of every parameter bound on `tape` into the
    /// matching accumulator, routed by binding name.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) -> Result<()> {
        for (id, name) in tape.param_bindings() {
            let Some(g) = grads.wrt(*id) else { continue };
            let i = *self.index.get(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
            let acc = self.entries[i].grad.data_mut();
            if acc.len() != g.len() {
                return Err(Error::ShapeMismatch {
                    op: "accumulate",
                    detail: format!("param {name}: {} vs {}", acc.len(), g.len()),
                });
            }
            for (a, &v) in acc.iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        Ok(())
    }

    pub fn views_mut(&mut self) -> impl Iterator<Item = ParamView<'_>> {
        self.entries.iter_mut().map(|e| ParamView {
            name: e.name.as_str(),
            value: e.value.data_mut(),
            grad: e.grad.data_mut(),
            velocity: e.velocity.data_mut(),
        })
    }
}
