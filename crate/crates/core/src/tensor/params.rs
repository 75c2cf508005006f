use super::{Grads, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
    trainable: bool,
}

/// Named parameters and non-trainable buffers (batch-norm running stats),
/// with a gradient accumulator per entry.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Entry {
            name: name.into(),
            value,
            grad,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].trainable)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::shape(
                "param",
                format!("{}: expected {:?}, got {:?}", e.name, e.value.shape(), value.shape()),
            ));
        }
        e.value = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].grad
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(T::zero());
        }
    }

    /// Places a parameter on the tape as a gradient-receiving leaf.
    pub fn var(&self, tape: &mut Tape<T>, id: ParamId) -> Var {
        tape.param_leaf(id, self.entries[id.0].value.clone())
    }

    /// Adds the gradients of every parameter used on `tape` into the accumulators.
    pub fn accumulate(&mut self, tape: &Tape<T>, grads: &Grads<T>) {
        for &(id, var) in tape.param_vars() {
            if let Some(g) = grads.get(var) {
                self.entries[id.0].grad.add_assign(g);
            }
        }
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    /// Overwrites every entry from `(name, tensor)` pairs. Every entry must be
    /// present with a matching shape; extra names are ignored.
    pub fn load_named<'a>(&mut self, items: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Result<()>
    where
        T: 'a,
    {
        let map: std::collections::HashMap<&str, &Tensor<T>> = items.into_iter().collect();
        for e in &mut self.entries {
            let t = map
                .get(e.name.as_str())
                .ok_or_else(|| Error::corrupt("checkpoint", format!("missing tensor {}", e.name)))?;
            if t.shape() != e.value.shape() {
                return Err(Error::corrupt(
                    "checkpoint",
                    format!("tensor {} has shape {:?}, model expects {:?}", e.name, t.shape(), e.value.shape()),
                ));
            }
            e.value = (*t).clone();
        }
        Ok(())
    }
}
