//! Synthetic dataset generation and the on-disk dataset format.
//!
//! A dataset file is line-delimited UTF-8, one record per sample, with
//! tab-separated fields in this order:
//!
//! ```text
//! id <TAB> transcription <TAB> split <TAB> render_seed <TAB> noise_sigma
//! ```
//!
//! Features are not stored: they are re-derived from `(render_seed,
//! noise_sigma)` on load, which keeps files small and bit-reproducible. The
//! alphabet is the sorted union of transcription characters; transcriptions
//! are lower-cased at ingestion.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{render_features, Alphabet, Split, WordSample};
use crate::nn::fnv1a64;
use crate::{Error, Result};

/// Fraction of each word's samples assigned to the train split.
const TRAIN_FRACTION: f64 = 0.7;

/// Generation parameters for the synthetic benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub lexicon_size: usize,
    pub samples_per_word: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            lexicon_size: 100,
            samples_per_word: 20,
            min_word_len: 3,
            max_word_len: 8,
            noise_sigma: 0.3,
            seed: 7,
        }
    }
}

/// A word-sample collection with train/test splits and its alphabet.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub lexicon: Vec<String>,
    pub samples: Vec<WordSample>,
    pub alphabet: Alphabet,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    pub fn sample_by_id(&self, id: &str) -> Result<&WordSample> {
        self.samples
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::MissingSample(id.to_string()))
    }

    /// Builds a dataset from existing samples, deriving the lexicon and
    /// alphabet from the transcriptions.
    pub fn from_samples(samples: Vec<WordSample>) -> Self {
        let lexicon: Vec<String> = samples
            .iter()
            .map(|s| s.transcription.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let alphabet = Alphabet::from_words(lexicon.iter().map(String::as_str));
        Self::from_parts(lexicon, samples, alphabet)
    }

    fn from_parts(lexicon: Vec<String>, samples: Vec<WordSample>, alphabet: Alphabet) -> Self {
        let train = indices_of(&samples, Split::Train);
        let test = indices_of(&samples, Split::Test);
        Dataset {
            lexicon,
            samples,
            alphabet,
            train,
            test,
        }
    }

    /// Generates the seeded synthetic benchmark.
    ///
    /// Words are random and distinct over `a..z`. About half of them are
    /// drawn as single-edit variants of earlier words so the lexicon
    /// contains edit-close clusters; a graded relevance function has nothing
    /// to rank when every pair of words is far apart. Each word's samples
    /// are split 70/30 (at least one per split), so every class appears in
    /// both splits.
    pub fn generate(cfg: &DatasetConfig) -> Result<Dataset> {
        if cfg.lexicon_size < 2 {
            return Err(Error::InvalidConfig("lexicon_size must be >= 2".into()));
        }
        if cfg.samples_per_word < 2 {
            return Err(Error::InvalidConfig("samples_per_word must be >= 2".into()));
        }
        if cfg.min_word_len == 0 || cfg.min_word_len > cfg.max_word_len {
            return Err(Error::InvalidConfig("bad word length range".into()));
        }
        if cfg.noise_sigma < 0.0 || cfg.noise_sigma.is_nan() {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        let capacity: f64 = (cfg.min_word_len..=cfg.max_word_len)
            .map(|l| 26f64.powi(l as i32))
            .sum();
        if (cfg.lexicon_size as f64) > capacity {
            return Err(Error::InfeasibleLexicon {
                requested: cfg.lexicon_size,
                min_len: cfg.min_word_len,
                max_len: cfg.max_word_len,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let lexicon = draw_lexicon(cfg, &mut rng)?;
        let alphabet = Alphabet::from_words(lexicon.iter().map(String::as_str));

        let train_per_word = ((cfg.samples_per_word as f64 * TRAIN_FRACTION).round() as usize)
            .clamp(1, cfg.samples_per_word - 1);
        let mut samples = Vec::with_capacity(cfg.lexicon_size * cfg.samples_per_word);
        for (w, word) in lexicon.iter().enumerate() {
            for s in 0..cfg.samples_per_word {
                let render_seed: u64 = rng.random();
                let split = if s < train_per_word {
                    Split::Train
                } else {
                    Split::Test
                };
                samples.push(WordSample {
                    id: format!("w{w:04}-s{s:02}"),
                    transcription: word.clone(),
                    features: render_features(&alphabet, word, cfg.noise_sigma, render_seed)?,
                    split,
                    render_seed,
                    noise_sigma: cfg.noise_sigma,
                });
            }
        }
        Ok(Dataset::from_parts(lexicon, samples, alphabet))
    }

    /// Serializes to the documented line format.
    pub fn to_record_string(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                s.id,
                s.transcription,
                s.split.as_str(),
                s.render_seed,
                s.noise_sigma
            )
            .expect("string write");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_record_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        let malformed = |line: usize, reason: &str| Error::MalformedFile {
            path: path.display().to_string(),
            reason: format!("line {}: {reason}", line + 1),
        };

        let mut records: Vec<(String, String, Split, u64, f64)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(malformed(n, "expected 5 tab-separated fields"));
            }
            let split = Split::parse(fields[2]).ok_or_else(|| malformed(n, "bad split"))?;
            let seed: u64 = fields[3].parse().map_err(|_| malformed(n, "bad seed"))?;
            let sigma: f64 = fields[4].parse().map_err(|_| malformed(n, "bad sigma"))?;
            records.push((
                fields[0].to_string(),
                fields[1].to_lowercase(),
                split,
                seed,
                sigma,
            ));
        }
        if records.is_empty() {
            return Err(Error::EmptySplit("train"));
        }

        let lexicon: Vec<String> = records
            .iter()
            .map(|r| r.1.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let alphabet = Alphabet::from_words(lexicon.iter().map(String::as_str));
        let samples = records
            .into_iter()
            .map(|(id, transcription, split, render_seed, noise_sigma)| {
                Ok(WordSample {
                    features: render_features(&alphabet, &transcription, noise_sigma, render_seed)?,
                    id,
                    transcription,
                    split,
                    render_seed,
                    noise_sigma,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset::from_parts(lexicon, samples, alphabet))
    }

    /// Fingerprint of the serialized records.
    pub fn content_hash(&self) -> u64 {
        fnv1a64(self.to_record_string().as_bytes())
    }
}

fn indices_of(samples: &[WordSample], split: Split) -> Vec<usize> {
    samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == split)
        .map(|(i, _)| i)
        .collect()
}

fn random_word(cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(cfg.min_word_len..=cfg.max_word_len);
    (0..len)
        .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
        .collect()
}

/// One random substitution, insertion, or deletion, respecting the length
/// bounds. Returns `None` when the edit is not applicable.
fn random_edit(word: &str, cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> Option<String> {
    let mut chars: Vec<char> = word.chars().collect();
    match rng.random_range(0..3u8) {
        0 => {
            let i = rng.random_range(0..chars.len());
            chars[i] = char::from(b'a' + rng.random_range(0..26u8));
        }
        1 => {
            if chars.len() >= cfg.max_word_len {
                return None;
            }
            let i = rng.random_range(0..=chars.len());
            chars.insert(i, char::from(b'a' + rng.random_range(0..26u8)));
        }
        _ => {
            if chars.len() <= cfg.min_word_len {
                return None;
            }
            let i = rng.random_range(0..chars.len());
            chars.remove(i);
        }
    }
    Some(chars.into_iter().collect())
}

fn draw_lexicon(cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
    let mut words: Vec<String> = Vec::with_capacity(cfg.lexicon_size);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut attempts = 0usize;
    let max_attempts = 1000 * cfg.lexicon_size;
    while words.len() < cfg.lexicon_size {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InfeasibleLexicon {
                requested: cfg.lexicon_size,
                min_len: cfg.min_word_len,
                max_len: cfg.max_word_len,
            });
        }
        let candidate = if !words.is_empty() && rng.random_bool(0.65) {
            let base = &words[rng.random_range(0..words.len())];
            match random_edit(base, cfg, rng) {
                Some(w) => w,
                None => continue,
            }
        } else {
            random_word(cfg, rng)
        };
        if seen.insert(candidate.clone()) {
            words.push(candidate);
        }
    }
    Ok(words)
}
