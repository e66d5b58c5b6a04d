//! The finite-difference verification suite behind `spotrank gradcheck`
//! and the gradient-correctness acceptance criterion.
//!
//! Analytic gradients are compared against central differences for the two
//! batch losses (on random score matrices), for each encoder chain, and for
//! the full combined objective. The L1 alignment term deliberately stops
//! gradients at the string embeddings, so its check differentiates against
//! frozen string references.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::encoders::{render_features, Alphabet, Model};
use crate::metrics::{QueryContext, RelevanceSpec};
use crate::nn::gradcheck::{
    all_coordinates, finite_difference_check, sample_coordinates, DEFAULT_ATOL,
};
use crate::nn::{EmbeddingVector, ModelParams, Tensor, EMBED_DIM};
use crate::smooth::{loss_ap, loss_ndcg, LossOutput, SimilarityMatrix, SmoothConfig};
use crate::train::{Batch, BatchSample, TrainConfig, TermWeights};
use crate::Result;

/// One suite line: worst relative error across all probed batches.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteOutcome {
    fn new(name: impl Into<String>, max_rel_error: f64, tolerance: f64) -> Self {
        SuiteOutcome {
            name: name.into(),
            max_rel_error,
            tolerance,
            passed: max_rel_error <= tolerance,
        }
    }
}

const TOLERANCE: f64 = 1e-3;
const TAUS: [f64; 2] = [0.1, 1.0];
const QUERIES: usize = 8;
const GALLERY: usize = 16;

fn random_contexts(rng: &mut ChaCha8Rng) -> Vec<QueryContext> {
    let pool = ["ab", "abc", "cd", "ce", "abd", "ffff"];
    let mut gallery: Vec<String> = (0..GALLERY)
        .map(|_| pool[rng.random_range(0..pool.len())].to_string())
        .collect();
    gallery[0] = "ab".to_string();
    (0..QUERIES)
        .map(|_| QueryContext::new("ab", gallery.clone()))
        .collect()
}

fn random_matrix(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..QUERIES * GALLERY)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect()
}

/// Checks one batch loss by treating the similarity matrix as the parameter
/// vector.
fn check_loss<F>(batches: usize, seed: u64, loss: F) -> f64
where
    F: Fn(&SimilarityMatrix, &[QueryContext], &SmoothConfig) -> Result<LossOutput>,
{
    let mut worst = 0.0f64;
    for b in 0..batches {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (b as u64));
        let ctxs = random_contexts(&mut rng);
        let data = random_matrix(&mut rng);
        for tau in TAUS {
            let cfg = SmoothConfig::new(tau, RelevanceSpec::graded_linear(4)).unwrap();
            let sim = SimilarityMatrix::new(QUERIES, GALLERY, data.clone()).unwrap();
            let out = loss(&sim, &ctxs, &cfg).unwrap();

            let mut params = ModelParams::new();
            params.insert("sim", Tensor::from_vec(QUERIES, GALLERY, data.clone()));
            let mut grads = params.new_gradients();
            let id = params.id("sim").unwrap();
            grads
                .tensor_mut(id)
                .data_mut()
                .copy_from_slice(out.gradient.data());

            let mut f = |p: &ModelParams| {
                let sim =
                    SimilarityMatrix::new(QUERIES, GALLERY, p.get(id).data().to_vec()).unwrap();
                loss(&sim, &ctxs, &cfg).unwrap().value
            };
            let coords = all_coordinates(&params);
            let report =
                finite_difference_check(&mut f, &mut params, &grads, 1e-5, &coords, DEFAULT_ATOL);
            worst = worst.max(report.max_rel_error);
        }
    }
    worst
}

fn gradcheck_batch(alphabet: &Alphabet, rng: &mut ChaCha8Rng) -> Batch {
    let pool = ["ab", "ab", "cd", "ce"];
    Batch {
        samples: pool
            .iter()
            .map(|w| BatchSample {
                transcription: w.to_string(),
                features: render_features(alphabet, w, 0.2, rng.random()).unwrap(),
            })
            .collect(),
    }
}

/// Full combined chain with `alpha = 0` (the ranking terms are an ordinary
/// differentiable function of every parameter).
fn check_ranking_chain(batches: usize, seed: u64, coords_per_tensor: usize) -> f64 {
    let alphabet = Alphabet::from_string("abcde");
    let mut worst = 0.0f64;
    for b in 0..batches {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x1000 + b as u64));
        let (model, mut params) = Model::init(alphabet.clone(), rng.random());
        let batch = gradcheck_batch(&alphabet, &mut rng);
        for tau in TAUS {
            let cfg = TrainConfig {
                tau,
                alpha: 0.0,
                batch_size: batch.samples.len(),
                ..TrainConfig::default()
            };
            let (_, grads) =
                crate::train::combined_loss(&model, &params, &batch, &cfg).unwrap();
            let coords = sample_coordinates(&params, coords_per_tensor, &mut rng);
            let mut f = |p: &ModelParams| {
                crate::train::combined_loss(&model, p, &batch, &cfg)
                    .unwrap()
                    .0
                    .total
            };
            let report =
                finite_difference_check(&mut f, &mut params, &grads, 1e-6, &coords, DEFAULT_ATOL);
            worst = worst.max(report.max_rel_error);
        }
    }
    worst
}

/// The L1 alignment gradient against frozen string embeddings (visual
/// parameters only; the stop-gradient makes string coordinates undefined by
/// design).
fn check_l1_term(batches: usize, seed: u64) -> f64 {
    let alphabet = Alphabet::from_string("abcde");
    let mut worst = 0.0f64;
    for b in 0..batches {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x2000 + b as u64));
        let (model, mut params) = Model::init(alphabet.clone(), rng.random());
        let batch = gradcheck_batch(&alphabet, &mut rng);
        let cfg = TrainConfig {
            alpha: 0.5,
            term_weights: TermWeights {
                ap_img: 0.0,
                ndcg_img: 0.0,
                ndcg_str: 0.0,
                ap_cross: 0.0,
                ndcg_cross: 0.0,
            },
            batch_size: batch.samples.len(),
            ..TrainConfig::default()
        };
        let (_, grads) = crate::train::combined_loss(&model, &params, &batch, &cfg).unwrap();

        let frozen: Vec<EmbeddingVector> = batch
            .samples
            .iter()
            .map(|s| {
                model
                    .strings
                    .encode(&params, &alphabet, &s.transcription)
                    .unwrap()
            })
            .collect();
        let feats: Vec<Vec<Vec<f64>>> =
            batch.samples.iter().map(|s| s.features.clone()).collect();
        let mut f = |p: &ModelParams| {
            let n = feats.len() as f64;
            let mut sum = 0.0;
            for (fs, s) in feats.iter().zip(&frozen) {
                let img = model.visual.encode(p, fs).unwrap();
                sum += img
                    .as_slice()
                    .iter()
                    .zip(s.as_slice())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
            }
            cfg.alpha * sum / n
        };
        let coords: Vec<_> = sample_coordinates(&params, 8, &mut rng)
            .into_iter()
            .filter(|(id, _)| params.name(*id).starts_with("vis."))
            .collect();
        let report =
            finite_difference_check(&mut f, &mut params, &grads, 1e-6, &coords, DEFAULT_ATOL);
        worst = worst.max(report.max_rel_error);
    }
    worst
}

/// Encoder chains through a fixed linear functional of the embedding.
fn check_encoders(seed: u64) -> (f64, f64) {
    let alphabet = Alphabet::from_string("abcde");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3000);
    let (model, mut params) = Model::init(alphabet.clone(), rng.random());
    let coeffs: Vec<f64> = (0..EMBED_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();

    let word = "badce";
    let trace = model.strings.forward(&params, &alphabet, word).unwrap();
    let mut grads = params.new_gradients();
    model.strings.backward(&params, &trace, &coeffs, &mut grads);
    let coords = sample_coordinates(&params, 10, &mut rng);
    let c2 = coeffs.clone();
    let alpha2 = alphabet.clone();
    let m2 = model.clone();
    let mut f = move |p: &ModelParams| {
        let e = m2.strings.encode(p, &alpha2, word).unwrap();
        e.as_slice().iter().zip(&c2).map(|(a, b)| a * b).sum()
    };
    let string_err =
        finite_difference_check(&mut f, &mut params, &grads, 1e-5, &coords, DEFAULT_ATOL)
            .max_rel_error;

    let feats = render_features(&alphabet, "cade", 0.2, 5).unwrap();
    let trace = model.visual.forward(&params, &feats).unwrap();
    let mut grads = params.new_gradients();
    model
        .visual
        .backward(&params, &feats, &trace, &coeffs, &mut grads);
    let coords = sample_coordinates(&params, 10, &mut rng);
    let mut f = |p: &ModelParams| {
        let e = model.visual.encode(p, &feats).unwrap();
        e.as_slice().iter().zip(&coeffs).map(|(a, b)| a * b).sum()
    };
    let visual_err =
        finite_difference_check(&mut f, &mut params, &grads, 1e-5, &coords, DEFAULT_ATOL)
            .max_rel_error;
    (string_err, visual_err)
}

/// The checker itself must reject a wrong gradient.
fn check_calibration() -> f64 {
    let mut params = ModelParams::new();
    params.insert("w", Tensor::from_vec(1, 3, vec![0.4, -0.9, 1.3]));
    let id = params.id("w").unwrap();
    let mut grads = params.new_gradients();
    for (g, x) in grads
        .tensor_mut(id)
        .data_mut()
        .iter_mut()
        .zip([0.4, -0.9, 1.3])
    {
        *g = 4.0 * x; // doubled on purpose
    }
    let mut f = |p: &ModelParams| p.get(id).data().iter().map(|x| x * x).sum();
    let coords = all_coordinates(&params);
    finite_difference_check(&mut f, &mut params, &grads, 1e-5, &coords, DEFAULT_ATOL).max_rel_error
}

/// Runs the whole suite; `batches` controls how many random instances each
/// stochastic check draws.
pub fn run_suite(batches: usize, seed: u64) -> Vec<SuiteOutcome> {
    let mut outcomes = Vec::new();
    outcomes.push(SuiteOutcome::new(
        format!("loss_ap gradient ({batches} batches, tau 0.1/1.0)"),
        check_loss(batches, seed, loss_ap),
        TOLERANCE,
    ));
    outcomes.push(SuiteOutcome::new(
        format!("loss_ndcg gradient ({batches} batches, tau 0.1/1.0)"),
        check_loss(batches, seed, loss_ndcg),
        TOLERANCE,
    ));
    let (string_err, visual_err) = check_encoders(seed);
    outcomes.push(SuiteOutcome::new(
        "string encoder chain",
        string_err,
        TOLERANCE,
    ));
    outcomes.push(SuiteOutcome::new(
        "visual encoder chain",
        visual_err,
        TOLERANCE,
    ));
    outcomes.push(SuiteOutcome::new(
        format!("combined ranking chain ({batches} batches, 4-sample, tau 0.1/1.0)"),
        check_ranking_chain(batches, seed, 2),
        TOLERANCE,
    ));
    outcomes.push(SuiteOutcome::new(
        "L1 alignment term (visual side, frozen strings)",
        check_l1_term(batches.clamp(1, 10), seed),
        TOLERANCE,
    ));
    let calibration = check_calibration();
    let mut calib = SuiteOutcome::new(
        "checker calibration (doubled gradient must fail)",
        calibration,
        TOLERANCE,
    );
    calib.passed = calibration > 0.5; // the wrong gradient must be caught
    outcomes.push(calib);
    outcomes
}
