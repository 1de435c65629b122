//! Named parameter tensors and their binding to a tape.

use std::ops::Index;

use rand::Rng;

use phenocast_tensor::{Tape, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of learned tensors keyed by canonical names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        tensor.set_requires_grad(true);
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Glorot-uniform matrix `fan_in × fan_out`.
    pub fn add_weight<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let t = Tensor::from_fn(vec![fan_in, fan_out], |_| rng.random_range(-limit..limit));
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: &str, len: usize) -> ParamId {
        self.add(name, Tensor::zeros(vec![len]))
    }

    pub fn add_ones(&mut self, name: &str, len: usize) -> ParamId {
        self.add(name, Tensor::ones(vec![len]))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// `(name, shape)` for every tensor, in store order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Records every tensor as a leaf of `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        Bindings(self.tensors.iter().map(|t| tape.leaf(t)).collect())
    }

    /// Copies leaf gradients from `tape` into the tensors' gradient buffers.
    pub fn collect_grads(&mut self, tape: &Tape, bindings: &Bindings) -> Result<()> {
        for (t, &v) in self.tensors.iter_mut().zip(&bindings.0) {
            tape.accumulate_into(v, t)?;
        }
        Ok(())
    }

    /// Replaces all values with those of `other`, which must share the manifest.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        let ours = self.manifest();
        let theirs = other.manifest();
        if ours != theirs {
            let mut bad: Vec<String> = ours
                .iter()
                .filter(|m| !theirs.contains(m))
                .chain(theirs.iter().filter(|m| !ours.contains(m)))
                .map(|(n, s)| format!("{n}{s:?}"))
                .collect();
            bad.dedup();
            return Err(Error::Checkpoint {
                message: "parameter manifest mismatch".into(),
                tensors: bad,
            });
        }
        for (t, o) in self.tensors.iter_mut().zip(&other.tensors) {
            t.data_mut().copy_from_slice(o.data());
        }
        Ok(())
    }
}

/// Tape handles for every parameter of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bindings {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Affine layer `x·W + b` with `W: in × out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            weight: store.add_weight(&format!("{name}.weight"), fan_in, fan_out, rng),
            bias: store.add_zeros(&format!("{name}.bias"), fan_out),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<Var> {
        let y = tape.matmul(x, b[self.weight])?;
        Ok(tape.add_row(y, b[self.bias])?)
    }

    /// Direct evaluation on a row vector without a tape.
    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let w = store.get(self.weight);
        let mut y = store.get(self.bias).data().to_vec();
        for (i, xi) in x.iter().enumerate() {
            for (j, yj) in y.iter_mut().enumerate() {
                *yj += xi * w.at(i, j);
            }
        }
        y
    }
}
