use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Gradients, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = self.values.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
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

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total scalar count over the given ids.
    pub fn count(&self, ids: impl IntoIterator<Item = ParamId>) -> usize {
        ids.into_iter().map(|id| self.values[id.0].len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|t| t.cast()).collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Replaces values by name; every stored parameter must be present with a matching shape.
    pub fn load_named(&mut self, tensors: &HashMap<String, Tensor<T>>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != self.values[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = t.clone();
        }
        Ok(())
    }
}

/// Parameter initializers.
pub mod init {
    use super::*;

    pub fn normal<T: Real>(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape.to_vec(), |_| T::lit(dist.sample(rng)))
    }

    /// Normal with std `1/sqrt(fan_in)` for a `[fan_in × fan_out]` weight.
    pub fn fan_in<T: Real>(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
        normal(rng, &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt())
    }

    pub fn uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(lo..hi)))
    }
}

/// Binds parameters of a store onto a tape lazily, so only parameters that a
/// forward pass touches become leaves.
pub struct Graph<'a, T: Real> {
    pub tape: &'a Tape<T>,
    store: &'a ParamStore<T>,
    bound: RefCell<Vec<Option<Var>>>,
    frozen: bool,
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new(tape: &'a Tape<T>, store: &'a ParamStore<T>) -> Self {
        Graph {
            tape,
            store,
            bound: RefCell::new(vec![None; store.len()]),
            frozen: false,
        }
    }

    /// Binds parameters as constants: nothing records a backward rule.
    pub fn frozen(tape: &'a Tape<T>, store: &'a ParamStore<T>) -> Self {
        Graph {
            frozen: true,
            ..Graph::new(tape, store)
        }
    }

    pub fn param(&self, id: ParamId) -> Var {
        let mut bound = self.bound.borrow_mut();
        *bound[id.0].get_or_insert_with(|| {
            let value = self.store.get(id).clone();
            if self.frozen {
                self.tape.constant(value)
            } else {
                self.tape.leaf(value)
            }
        })
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Gradients aligned with store ids; `None` for parameters the forward pass never used.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.bound
            .borrow()
            .iter()
            .enumerate()
            .map(|(i, v)| v.map(|v| grads.get_or_zeros(v, self.store.get(ParamId(i)))))
            .collect()
    }
}
