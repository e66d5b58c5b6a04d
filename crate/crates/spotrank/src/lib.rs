//! Word spotting trained with differentiable ranking metrics.
//!
//! This crate trains a word-string encoder and a word-image (proxy) encoder
//! jointly by optimizing smooth surrogates of Average Precision and nDCG,
//! then evaluates query-by-string (QbS) and query-by-example (QbE) retrieval
//! with the exact metrics and edit-distance-graded relevance.
//!
//! Module map:
//!
//! - [`metrics`] — exact ranking metrics, Levenshtein distance, relevance
//!   functions: the ground truth everything else approximates.
//! - [`smooth`] — sigmoid-smoothed ranking, Smooth-AP / Smooth-nDCG, the
//!   batch losses, and their closed-form gradients.
//! - [`nn`] — numerical substrate: tensors, parameter store, Adam, the
//!   finite-difference gradient checker, checkpoint I/O.
//! - [`encoders`] — the string encoder (char embedding + BiGRU + linear head)
//!   and the synthetic visual-proxy encoder, with hand-derived backward passes.
//! - [`train`] — in-batch retrieval losses, weighted sampling, the epoch loop.
//! - [`harness`] — dataset generation/IO, QbS/QbE retrieval, evaluation
//!   reports, and everything the CLI is built on.

pub mod encoders;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod smooth;
pub mod train;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("query has no positive items")]
    EmptyPositives,
    #[error("every gallery item has zero relevance (IDCG = 0)")]
    ZeroIdeal,
    #[error("empty query set")]
    EmptyQuerySet,
    #[error("index {index} outside subset of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("n = {n} out of range for gallery of size {len}")]
    NOutOfRange { n: usize, len: usize },
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("graded-table relevance must be non-increasing in edit distance")]
    NonMonotoneTable,
    #[error("tau must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("shape mismatch for {name}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("character {0:?} is not in the alphabet")]
    UnknownCharacter(char),
    #[error("string must be non-empty")]
    EmptyString,
    #[error("feature sequence must be non-empty")]
    EmptySequence,
    #[error("dataset split {0:?} is empty")]
    EmptySplit(&'static str),
    #[error("cannot draw {requested} distinct words of length {min_len}..={max_len}")]
    InfeasibleLexicon {
        requested: usize,
        min_len: usize,
        max_len: usize,
    },
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("sample {0:?} not found in dataset")]
    MissingSample(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
