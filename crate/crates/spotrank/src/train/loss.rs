//! The combined in-batch objective and its gradient over all parameters.

use super::{Batch, TrainConfig};
use crate::encoders::Model;
use crate::metrics::{idcg, QueryContext, RelevanceSpec};
use crate::nn::{EmbeddingVector, Gradients, ModelParams, EMBED_DIM};
use crate::smooth::{loss_ap, loss_ndcg, LossOutput, SimilarityMatrix, SmoothConfig};
use crate::{Error, Result};

/// Per-term values (unweighted) plus the weighted total.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub ap_img: f64,
    pub ndcg_img: f64,
    pub ndcg_str: f64,
    pub ap_cross: f64,
    pub ndcg_cross: f64,
    /// Mean L1 distance between paired embeddings (before `alpha`).
    pub l1: f64,
    /// Queries dropped from AP terms for lacking an in-batch positive.
    pub dropped_ap: usize,
    /// Queries dropped from nDCG terms for having zero ideal gain.
    pub dropped_ndcg: usize,
}

/// Which side of a similarity matrix an embedding set plays.
enum Side {
    ImgImg,
    StrStr,
    StrImg,
}

/// Evaluates the mode's loss terms on one batch and backpropagates through
/// both encoders, returning the breakdown and the gradient over all
/// parameters.
///
/// Within-modal terms exclude the query itself from its gallery (a self
/// match is always rank 1 and carries no signal); the cross-modal gallery
/// keeps the query's own image, which is its guaranteed positive. AP-term
/// queries without an in-batch positive and nDCG-term queries with zero
/// ideal gain are dropped and counted.
pub fn combined_loss(
    model: &Model,
    params: &ModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let n = batch.samples.len();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "a batch needs at least 2 samples".into(),
        ));
    }

    // Forward both encoders over the batch.
    let str_traces = batch
        .samples
        .iter()
        .map(|s| model.strings.forward(params, &model.alphabet, &s.transcription))
        .collect::<Result<Vec<_>>>()?;
    let vis_traces = batch
        .samples
        .iter()
        .map(|s| model.visual.forward(params, &s.features))
        .collect::<Result<Vec<_>>>()?;
    let e_str: Vec<&EmbeddingVector> = str_traces.iter().map(|t| t.embedding()).collect();
    let e_img: Vec<&EmbeddingVector> = vis_traces.iter().map(|t| t.embedding()).collect();

    let transcriptions: Vec<String> = batch
        .samples
        .iter()
        .map(|s| s.transcription.clone())
        .collect();
    let relevance = RelevanceSpec::graded_linear(cfg.gamma);
    let smooth_cfg = SmoothConfig::new(cfg.tau, relevance.clone())?;

    // Query contexts: self-excluded for within-modal ranking, full gallery
    // for cross-modal.
    let excl_ctxs: Vec<QueryContext> = (0..n)
        .map(|i| {
            let retrieved: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            QueryContext::with_retrieved(transcriptions[i].clone(), transcriptions.clone(), retrieved)
        })
        .collect::<Result<Vec<_>>>()?;
    let full_ctxs: Vec<QueryContext> = (0..n)
        .map(|i| QueryContext::new(transcriptions[i].clone(), transcriptions.clone()))
        .collect();

    let sim_img = similarity_matrix(&e_img, &e_img)?;
    let sim_str = similarity_matrix(&e_str, &e_str)?;
    let sim_cross = similarity_matrix(&e_str, &e_img)?;

    let w = cfg.effective_weights();
    let mut breakdown = LossBreakdown::default();
    let mut d_img = vec![vec![0.0; EMBED_DIM]; n];
    let mut d_str = vec![vec![0.0; EMBED_DIM]; n];

    // AP wants a positive in the gallery; nDCG wants nonzero ideal gain.
    let with_positive: Vec<usize> = (0..n)
        .filter(|&i| !excl_ctxs[i].positives().is_empty())
        .collect();
    let with_gain: Vec<usize> = (0..n)
        .filter(|&i| idcg(&excl_ctxs[i], &relevance) > 0.0)
        .collect();

    struct Term<'a> {
        weight: f64,
        sim: &'a SimilarityMatrix,
        ctxs: &'a [QueryContext],
        rows: Option<&'a [usize]>,
        kind: LossKind,
        side: Side,
        value: &'a mut f64,
    }
    enum LossKind {
        Ap,
        Ndcg,
    }

    let mut ap_img_v = 0.0;
    let mut ndcg_img_v = 0.0;
    let mut ndcg_str_v = 0.0;
    let mut ap_cross_v = 0.0;
    let mut ndcg_cross_v = 0.0;
    let terms = [
        Term {
            weight: w.ap_img,
            sim: &sim_img,
            ctxs: &excl_ctxs,
            rows: Some(&with_positive),
            kind: LossKind::Ap,
            side: Side::ImgImg,
            value: &mut ap_img_v,
        },
        Term {
            weight: w.ndcg_img,
            sim: &sim_img,
            ctxs: &excl_ctxs,
            rows: Some(&with_gain),
            kind: LossKind::Ndcg,
            side: Side::ImgImg,
            value: &mut ndcg_img_v,
        },
        Term {
            weight: w.ndcg_str,
            sim: &sim_str,
            ctxs: &excl_ctxs,
            rows: Some(&with_gain),
            kind: LossKind::Ndcg,
            side: Side::StrStr,
            value: &mut ndcg_str_v,
        },
        Term {
            weight: w.ap_cross,
            sim: &sim_cross,
            ctxs: &full_ctxs,
            rows: None,
            kind: LossKind::Ap,
            side: Side::StrImg,
            value: &mut ap_cross_v,
        },
        Term {
            weight: w.ndcg_cross,
            sim: &sim_cross,
            ctxs: &full_ctxs,
            rows: None,
            kind: LossKind::Ndcg,
            side: Side::StrImg,
            value: &mut ndcg_cross_v,
        },
    ];

    for term in terms {
        if term.weight == 0.0 {
            continue;
        }
        let (sub_sim, sub_ctxs, row_map): (SimilarityMatrix, Vec<QueryContext>, Vec<usize>) =
            match term.rows {
                None => (
                    term.sim.clone(),
                    term.ctxs.to_vec(),
                    (0..n).collect(),
                ),
                Some(rows) => {
                    match &term.kind {
                        LossKind::Ap => breakdown.dropped_ap += n - rows.len(),
                        LossKind::Ndcg => breakdown.dropped_ndcg += n - rows.len(),
                    }
                    if rows.is_empty() {
                        continue; // nothing to rank this batch
                    }
                    let mut data = Vec::with_capacity(rows.len() * n);
                    for &q in rows {
                        data.extend_from_slice(term.sim.row(q));
                    }
                    (
                        SimilarityMatrix::new(rows.len(), n, data)?,
                        rows.iter().map(|&q| term.ctxs[q].clone()).collect(),
                        rows.to_vec(),
                    )
                }
            };

        let out: LossOutput = match term.kind {
            LossKind::Ap => loss_ap(&sub_sim, &sub_ctxs, &smooth_cfg)?,
            LossKind::Ndcg => loss_ndcg(&sub_sim, &sub_ctxs, &smooth_cfg)?,
        };
        *term.value = out.value;

        // Chain the similarity gradient into the embedding gradients:
        // s_qj = a_q . b_j.
        for (row, &q) in row_map.iter().enumerate() {
            for j in 0..n {
                let g = term.weight * out.gradient.get(row, j);
                if g == 0.0 {
                    continue;
                }
                match term.side {
                    Side::ImgImg => {
                        axpy(&mut d_img[q], g, e_img[j].as_slice());
                        axpy(&mut d_img[j], g, e_img[q].as_slice());
                    }
                    Side::StrStr => {
                        axpy(&mut d_str[q], g, e_str[j].as_slice());
                        axpy(&mut d_str[j], g, e_str[q].as_slice());
                    }
                    Side::StrImg => {
                        axpy(&mut d_str[q], g, e_img[j].as_slice());
                        axpy(&mut d_img[j], g, e_str[q].as_slice());
                    }
                }
            }
        }
    }
    breakdown.ap_img = ap_img_v;
    breakdown.ndcg_img = ndcg_img_v;
    breakdown.ndcg_str = ndcg_str_v;
    breakdown.ap_cross = ap_cross_v;
    breakdown.ndcg_cross = ndcg_cross_v;

    breakdown.l1 = l1_alignment(&e_img, &e_str, cfg.alpha, &mut d_img);

    breakdown.total = w.ap_img * breakdown.ap_img
        + w.ndcg_img * breakdown.ndcg_img
        + w.ndcg_str * breakdown.ndcg_str
        + w.ap_cross * breakdown.ap_cross
        + w.ndcg_cross * breakdown.ndcg_cross
        + cfg.alpha * breakdown.l1;

    // Backward through both encoders.
    let mut grads = params.new_gradients();
    for i in 0..n {
        model
            .strings
            .backward(params, &str_traces[i], &d_str[i], &mut grads);
        model.visual.backward(
            params,
            &batch.samples[i].features,
            &vis_traces[i],
            &d_img[i],
            &mut grads,
        );
    }
    Ok((breakdown, grads))
}

/// Mean L1 distance between paired embeddings. The gradient goes to the
/// image side only.
fn l1_alignment(
    e_img: &[&EmbeddingVector],
    e_str: &[&EmbeddingVector],
    alpha: f64,
    d_img: &mut [Vec<f64>],
) -> f64 {
    let n = e_img.len();
    let scale = alpha / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        for (k, (&a, &b)) in e_img[i]
            .as_slice()
            .iter()
            .zip(e_str[i].as_slice())
            .enumerate()
        {
            let diff = a - b;
            sum += diff.abs();
            if alpha > 0.0 {
                d_img[i][k] += scale * sign(diff);
            }
        }
    }
    sum / n as f64
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn similarity_matrix(
    queries: &[&EmbeddingVector],
    gallery: &[&EmbeddingVector],
) -> Result<SimilarityMatrix> {
    let mut data = Vec::with_capacity(queries.len() * gallery.len());
    for q in queries {
        for g in gallery {
            data.push(crate::nn::cosine_similarity(q, g));
        }
    }
    SimilarityMatrix::new(queries.len(), gallery.len(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{render_features, Alphabet};
    use crate::nn::gradcheck::{finite_difference_check, sample_coordinates, DEFAULT_ATOL};
    use crate::train::LossMode;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn make_batch(alphabet: &Alphabet, words: &[&str], sigma: f64, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Batch {
            samples: words
                .iter()
                .map(|w| super::super::BatchSample {
                    transcription: w.to_string(),
                    features: render_features(alphabet, w, sigma, rng.random()).unwrap(),
                })
                .collect(),
        }
    }

    fn setup(words: &[&str], cfg_seed: u64) -> (Model, ModelParams, Batch) {
        let alphabet = Alphabet::from_string("abcde");
        let (model, params) = Model::init(alphabet.clone(), cfg_seed);
        let batch = make_batch(&alphabet, words, 0.2, cfg_seed + 100);
        (model, params, batch)
    }

    #[test]
    fn alpha_zero_total_is_sum_of_ranking_terms() {
        let (model, params, batch) = setup(&["ab", "ab", "cd", "ce"], 3);
        let cfg = TrainConfig {
            alpha: 0.0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (b, _) = combined_loss(&model, &params, &batch, &cfg).unwrap();
        let sum = b.ap_img + b.ndcg_img + b.ndcg_str + b.ap_cross + b.ndcg_cross;
        assert!((b.total - sum).abs() < 1e-12);
        assert!(b.l1 > 0.0); // still reported, just unweighted
    }

    #[test]
    fn disabling_terms_is_exact_decomposition() {
        let (model, params, batch) = setup(&["ab", "ab", "cd", "ce"], 5);
        let base = TrainConfig {
            alpha: 0.0,
            ..TrainConfig::default()
        };
        let (full, _) = combined_loss(&model, &params, &batch, &base).unwrap();
        let mut partial_sum = 0.0;
        for pick in 0..5 {
            let mut weights = crate::train::TermWeights {
                ap_img: 0.0,
                ndcg_img: 0.0,
                ndcg_str: 0.0,
                ap_cross: 0.0,
                ndcg_cross: 0.0,
            };
            match pick {
                0 => weights.ap_img = 1.0,
                1 => weights.ndcg_img = 1.0,
                2 => weights.ndcg_str = 1.0,
                3 => weights.ap_cross = 1.0,
                _ => weights.ndcg_cross = 1.0,
            }
            let cfg = TrainConfig {
                term_weights: weights,
                ..base.clone()
            };
            let (one, _) = combined_loss(&model, &params, &batch, &cfg).unwrap();
            partial_sum += one.total;
        }
        assert!((full.total - partial_sum).abs() < 1e-12);
    }

    #[test]
    fn l1_term_is_zero_for_identical_embeddings() {
        let alphabet = Alphabet::from_string("ab");
        let (model, params) = Model::init(alphabet.clone(), 1);
        let e = model
            .strings
            .encode(&params, &alphabet, "ab")
            .unwrap();
        let refs: Vec<&EmbeddingVector> = vec![&e, &e];
        let mut d = vec![vec![0.0; EMBED_DIM]; 2];
        let value = l1_alignment(&refs, &refs, 0.5, &mut d);
        assert_eq!(value, 0.0);
        assert!(d.iter().all(|row| row.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn l1_gradient_reaches_only_the_visual_encoder() {
        let (model, params, batch) = setup(&["ab", "cd", "ce"], 7);
        let cfg = TrainConfig {
            alpha: 1.0,
            term_weights: crate::train::TermWeights {
                ap_img: 0.0,
                ndcg_img: 0.0,
                ndcg_str: 0.0,
                ap_cross: 0.0,
                ndcg_cross: 0.0,
            },
            ..TrainConfig::default()
        };
        let (b, grads) = combined_loss(&model, &params, &batch, &cfg).unwrap();
        assert!(b.l1 > 0.0);
        let mut vis_norm = 0.0;
        for id in params.ids() {
            let norm: f64 = grads.tensor(id).data().iter().map(|g| g * g).sum();
            if params.name(id).starts_with("str.") {
                assert_eq!(norm, 0.0, "{} received gradient", params.name(id));
            } else {
                vis_norm += norm;
            }
        }
        assert!(vis_norm > 0.0, "visual encoder received no gradient");
    }

    #[test]
    fn dropped_queries_are_counted() {
        // No word repeats and all words are far apart: every AP query drops;
        // nDCG keeps queries whose neighbors are within the gamma cutoff.
        let alphabet = Alphabet::from_string("abcdefgh");
        let (model, params) = Model::init(alphabet.clone(), 2);
        let batch = make_batch(&alphabet, &["aaaa", "bbbb", "cccc"], 0.1, 9);
        let cfg = TrainConfig {
            mode: LossMode::Join,
            ..TrainConfig::default()
        };
        let (b, _) = combined_loss(&model, &params, &batch, &cfg).unwrap();
        assert_eq!(b.dropped_ap, 3);
        assert_eq!(b.dropped_ndcg, 6); // both within-modal nDCG terms
        assert_eq!(b.ap_img, 0.0);
        // Cross terms still train: each query's own image is its positive.
        assert!(b.ap_cross > 0.0);
        assert!(b.ndcg_cross > 0.0);
    }

    #[test]
    fn loss_is_invariant_under_batch_permutation() {
        let (model, params, batch) = setup(&["ab", "ab", "cd", "ce"], 13);
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (base, _) = combined_loss(&model, &params, &batch, &cfg).unwrap();

        let perm = [2usize, 0, 3, 1];
        let permuted = Batch {
            samples: perm.iter().map(|&k| batch.samples[k].clone()).collect(),
        };
        let (shuffled, _) = combined_loss(&model, &params, &permuted, &cfg).unwrap();
        assert!(
            (base.total - shuffled.total).abs() < 1e-9,
            "{} vs {}",
            base.total,
            shuffled.total
        );
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let (model, params, _) = setup(&["ab", "cd"], 4);
        let alphabet = Alphabet::from_string("abcde");
        let batch = make_batch(&alphabet, &["ab"], 0.1, 1);
        assert!(combined_loss(&model, &params, &batch, &TrainConfig::default()).is_err());
    }

    #[test]
    fn ranking_chain_gradient_matches_finite_differences() {
        // alpha = 0: the five ranking terms are an ordinary differentiable
        // function of all parameters.
        let (model, mut params, batch) = setup(&["ab", "ab", "cd", "ce"], 11);
        for tau in [0.1, 1.0] {
            let cfg = TrainConfig {
                tau,
                alpha: 0.0,
                batch_size: 4,
                ..TrainConfig::default()
            };
            let (_, grads) = combined_loss(&model, &params, &batch, &cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let coords = sample_coordinates(&params, 6, &mut rng);
            let mut f = |p: &ModelParams| {
                combined_loss(&model, p, &batch, &cfg).unwrap().0.total
            };
            let report =
                finite_difference_check(&mut f, &mut params, &grads, 1e-6, &coords, DEFAULT_ATOL);
            assert!(
                report.max_rel_error <= 1e-3,
                "tau {tau}: max rel error {} at {:?}",
                report.max_rel_error,
                report.worst
            );
        }
    }

    #[test]
    fn l1_gradient_matches_finite_differences_against_frozen_strings() {
        // The L1 term stops gradients at the string embeddings, so the
        // finite-difference target keeps them frozen at the base point and
        // probes only visual parameters.
        let (model, mut params, batch) = setup(&["ab", "cd", "ce"], 19);
        let cfg = TrainConfig {
            alpha: 0.5,
            term_weights: crate::train::TermWeights {
                ap_img: 0.0,
                ndcg_img: 0.0,
                ndcg_str: 0.0,
                ap_cross: 0.0,
                ndcg_cross: 0.0,
            },
            ..TrainConfig::default()
        };
        let (_, grads) = combined_loss(&model, &params, &batch, &cfg).unwrap();

        let frozen: Vec<EmbeddingVector> = batch
            .samples
            .iter()
            .map(|s| {
                model
                    .strings
                    .encode(&params, &model.alphabet, &s.transcription)
                    .unwrap()
            })
            .collect();
        let batch_feats: Vec<Vec<Vec<f64>>> =
            batch.samples.iter().map(|s| s.features.clone()).collect();
        let mut f = |p: &ModelParams| {
            let n = batch_feats.len() as f64;
            let mut sum = 0.0;
            for (feats, s) in batch_feats.iter().zip(&frozen) {
                let img = model.visual.encode(p, feats).unwrap();
                sum += img
                    .as_slice()
                    .iter()
                    .zip(s.as_slice())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
            }
            cfg.alpha * sum / n
        };

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let vis_coords: Vec<_> = sample_coordinates(&params, 8, &mut rng)
            .into_iter()
            .filter(|(id, _)| params.name(*id).starts_with("vis."))
            .collect();
        let report =
            finite_difference_check(&mut f, &mut params, &grads, 1e-6, &vis_coords, DEFAULT_ATOL);
        assert!(
            report.max_rel_error <= 1e-3,
            "max rel error {} at {:?}",
            report.max_rel_error,
            report.worst
        );
    }
}
