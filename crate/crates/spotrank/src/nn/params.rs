//! The trainable parameter store: named tensors plus per-parameter Adam
//! state. Exactly one training loop mutates a store; evaluation works on
//! read-only snapshots.

use rand::Rng;

use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle into a [`ModelParams`] store, resolved once by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// All trainable parameters of the model, with optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ModelParams {
    names: Vec<String>,
    values: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor initialized uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn register<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::from_vec(rows, cols, data))
    }

    /// Registers an explicit tensor (checkpoint loading, tests).
    pub fn insert(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter {name:?}"
        );
        let (rows, cols) = value.shape();
        self.names.push(name.to_string());
        self.values.push(value);
        self.first_moment.push(Tensor::zeros(rows, cols));
        self.second_moment.push(Tensor::zeros(rows, cols));
        ParamId(self.names.len() - 1)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(ParamId)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Zeroed gradient buffers matching this store's layout.
    pub fn new_gradients(&self) -> Gradients {
        Gradients {
            tensors: self
                .values
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    pub(super) fn optimizer_state_mut(
        &mut self,
    ) -> (&mut Vec<Tensor>, &mut Vec<Tensor>, &mut Vec<Tensor>, &mut u64) {
        (
            &mut self.values,
            &mut self.first_moment,
            &mut self.second_moment,
            &mut self.step,
        )
    }

    pub(super) fn optimizer_state(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first_moment, &self.second_moment)
    }

    pub(crate) fn restore_state(
        names: Vec<String>,
        values: Vec<Tensor>,
        first_moment: Vec<Tensor>,
        second_moment: Vec<Tensor>,
        step: u64,
    ) -> Self {
        ModelParams {
            names,
            values,
            first_moment,
            second_moment,
            step,
        }
    }
}

/// Gradient buffers aligned with a [`ModelParams`] store.
#[derive(Debug, Clone)]
pub struct Gradients {
    tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub(super) fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
}
