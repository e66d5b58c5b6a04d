//! Numerical substrate: tensors, the parameter store, L2 normalization,
//! cosine similarity, Adam, gradient checking, and checkpoint I/O.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{fnv1a64, Checkpoint};
pub use gradcheck::{finite_difference_check, CheckReport};
pub use optim::{adam_step, OptimizerConfig};
pub use params::{Gradients, ModelParams, ParamId};
pub use tensor::Tensor;

use crate::{Error, Result};

/// Output dimensionality of both encoders.
pub const EMBED_DIM: usize = 64;

/// A unit-norm embedding. Only [`l2_normalize`] constructs these, so the
/// norm invariant holds everywhere by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    v: [f64; EMBED_DIM],
}

impl EmbeddingVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.v
    }
}

/// Normalizes a raw 64-vector to unit Euclidean norm.
///
/// Returns the embedding together with the pre-normalization norm, which the
/// reverse pass needs. Errors on the zero vector.
pub fn l2_normalize(raw: &[f64]) -> Result<(EmbeddingVector, f64)> {
    assert_eq!(raw.len(), EMBED_DIM, "embeddings are {EMBED_DIM}-dimensional");
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut v = [0.0; EMBED_DIM];
    for (out, &x) in v.iter_mut().zip(raw) {
        *out = x / norm;
    }
    Ok((EmbeddingVector { v }, norm))
}

/// Reverse pass of [`l2_normalize`]: given the unit output `y`, the original
/// norm, and the gradient `dy` at the output, accumulates the gradient at the
/// raw input into `dx`.
pub fn l2_normalize_backward(y: &[f64], norm: f64, dy: &[f64], dx: &mut [f64]) {
    let proj: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((out, &yi), &di) in dx.iter_mut().zip(y).zip(dy) {
        *out += (di - yi * proj) / norm;
    }
}

/// Dot product of two unit vectors, i.e. their cosine similarity.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    tensor::dot(a.as_slice(), b.as_slice())
}
