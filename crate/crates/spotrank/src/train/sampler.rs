//! Class-balanced batch sampling with feature-noise augmentation.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, BatchSample, TrainConfig};
use crate::encoders::render_features;
use crate::harness::Dataset;
use crate::{Error, Result};

/// Draws one epoch of batches from the train split.
///
/// Draws are with replacement and class-balanced: a word class is picked
/// uniformly, then one of its samples uniformly, which weights every sample
/// inversely to its class frequency. Each draw re-renders the word's
/// features with fresh noise of scale `cfg.noise_sigma` (the augmentation
/// analog of random affine transforms). `samples_per_epoch` draws are
/// grouped into `samples_per_epoch / batch_size` full batches; a partial
/// trailing batch is dropped.
pub fn weighted_sample_epoch(
    dataset: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Batch>> {
    if dataset.train_indices().is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in dataset.train_indices() {
        by_class
            .entry(dataset.samples[i].transcription.as_str())
            .or_default()
            .push(i);
    }
    let classes: Vec<(&str, Vec<usize>)> = by_class.into_iter().collect();

    let n_batches = cfg.samples_per_epoch / cfg.batch_size;
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut samples = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let (word, members) = &classes[rng.random_range(0..classes.len())];
            let _member = members[rng.random_range(0..members.len())];
            let render_seed: u64 = rng.random();
            samples.push(BatchSample {
                transcription: (*word).to_string(),
                features: render_features(&dataset.alphabet, word, cfg.noise_sigma, render_seed)?,
            });
        }
        batches.push(Batch { samples });
    }
    Ok(batches)
}
