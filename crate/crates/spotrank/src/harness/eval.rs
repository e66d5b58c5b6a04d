//! End-to-end QbS/QbE retrieval and evaluation over the test split.
//!
//! All retrieval shares one gallery embedding cache per evaluation. QbS
//! queries are the unique transcriptions of the test split (sorted); QbE
//! uses every test sample as a query against the gallery minus itself.

use crate::encoders::Model;
use crate::metrics::{
    average_precision, ideal_top_n_mean_edit_distance, levenshtein, mean_average_precision, ndcg,
    top_n_mean_edit_distance, QueryContext, RelevanceSpec, ScoreVector,
};
use crate::nn::{cosine_similarity, EmbeddingVector, ModelParams};
use crate::{Error, Result};

use super::Dataset;

/// Longest top-n curve exported by [`evaluate`].
pub const TOP_N_MAX: usize = 50;
/// Largest edit-distance group in the box-plot export.
pub const BOXPLOT_MAX_ED: usize = 7;

/// Gallery embeddings computed once per evaluation, shared by QbS and QbE.
pub struct GalleryCache {
    pub sample_indices: Vec<usize>,
    pub ids: Vec<String>,
    pub transcriptions: Vec<String>,
    pub embeddings: Vec<EmbeddingVector>,
}

/// Embeds the full test split with the visual encoder.
pub fn embed_test_gallery(
    model: &Model,
    params: &ModelParams,
    dataset: &Dataset,
) -> Result<GalleryCache> {
    if dataset.test_indices().is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let mut cache = GalleryCache {
        sample_indices: Vec::new(),
        ids: Vec::new(),
        transcriptions: Vec::new(),
        embeddings: Vec::new(),
    };
    for &i in dataset.test_indices() {
        let s = &dataset.samples[i];
        cache.sample_indices.push(i);
        cache.ids.push(s.id.clone());
        cache.transcriptions.push(s.transcription.clone());
        cache.embeddings.push(model.visual.encode(params, &s.features)?);
    }
    Ok(cache)
}

/// One ranked gallery item.
#[derive(Debug, Clone)]
pub struct RankedItem {
    pub id: String,
    pub transcription: String,
    pub similarity: f64,
    pub edit_distance: usize,
    pub exact: bool,
}

/// A ranked retrieval list for one query.
#[derive(Debug, Clone)]
pub struct RetrievalResult {
    /// The query string (QbS) or the query sample id (QbE).
    pub query: String,
    pub query_transcription: String,
    pub ranked: Vec<RankedItem>,
}

fn rank_items(
    query_transcription: &str,
    cache: &GalleryCache,
    scores: &[f64],
    exclude: Option<usize>,
) -> Vec<RankedItem> {
    let mut items: Vec<RankedItem> = (0..cache.ids.len())
        .filter(|&j| Some(j) != exclude)
        .map(|j| RankedItem {
            id: cache.ids[j].clone(),
            transcription: cache.transcriptions[j].clone(),
            similarity: scores[j],
            edit_distance: levenshtein(query_transcription, &cache.transcriptions[j]),
            exact: cache.transcriptions[j] == query_transcription,
        })
        .collect();
    // Descending similarity; ascending id on ties, so the ranking does not
    // depend on gallery storage order.
    items.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap()
            .then_with(|| a.id.cmp(&b.id))
    });
    items
}

fn scores_against(query: &EmbeddingVector, cache: &GalleryCache) -> Vec<f64> {
    cache
        .embeddings
        .iter()
        .map(|e| cosine_similarity(query, e))
        .collect()
}

/// Ranks the test gallery for a string query.
pub fn query_by_string(
    model: &Model,
    params: &ModelParams,
    dataset: &Dataset,
    query: &str,
) -> Result<RetrievalResult> {
    let cache = embed_test_gallery(model, params, dataset)?;
    let query = query.to_lowercase();
    let embedding = model.strings.encode(params, &model.alphabet, &query)?;
    let scores = scores_against(&embedding, &cache);
    Ok(RetrievalResult {
        ranked: rank_items(&query, &cache, &scores, None),
        query_transcription: query.clone(),
        query: query.clone(),
    })
}

/// Ranks the test gallery (minus the query itself) for a sample query.
pub fn query_by_example(
    model: &Model,
    params: &ModelParams,
    dataset: &Dataset,
    sample_id: &str,
) -> Result<RetrievalResult> {
    let cache = embed_test_gallery(model, params, dataset)?;
    let sample = dataset.sample_by_id(sample_id)?;
    let embedding = model.visual.encode(params, &sample.features)?;
    let scores = scores_against(&embedding, &cache);
    let exclude = cache.ids.iter().position(|id| id == sample_id);
    Ok(RetrievalResult {
        ranked: rank_items(&sample.transcription, &cache, &scores, exclude),
        query_transcription: sample.transcription.clone(),
        query: sample_id.to_string(),
    })
}

/// mAP and nDCG for both query modes, plus drop counters.
#[derive(Debug, Clone, Copy, Default)]
pub struct TestMetrics {
    pub qbs_map: f64,
    pub qbs_ndcg: f64,
    pub qbe_map: f64,
    pub qbe_ndcg: f64,
    /// QbE queries without a second sample of their word in the gallery.
    pub dropped_qbe_ap: usize,
    /// Queries with zero ideal gain under the graded relevance.
    pub dropped_ndcg: usize,
}

/// The unique transcriptions of the test split, sorted — the QbS query set.
pub fn qbs_queries(dataset: &Dataset) -> Vec<String> {
    let mut words: Vec<String> = dataset
        .test_indices()
        .iter()
        .map(|&i| dataset.samples[i].transcription.clone())
        .collect();
    words.sort();
    words.dedup();
    words
}

/// Computes test-split mAP (binary relevance) and nDCG (graded relevance)
/// for QbS and QbE.
pub fn test_metrics(
    model: &Model,
    params: &ModelParams,
    dataset: &Dataset,
    relevance: &RelevanceSpec,
) -> Result<TestMetrics> {
    let cache = embed_test_gallery(model, params, dataset)?;
    metrics_from_cache(model, params, dataset, relevance, &cache)
}

/// Both query modes rank against the same pre-computed gallery cache.
fn metrics_from_cache(
    model: &Model,
    params: &ModelParams,
    dataset: &Dataset,
    relevance: &RelevanceSpec,
    cache: &GalleryCache,
) -> Result<TestMetrics> {
    let mut metrics = TestMetrics::default();

    // QbS: every unique test word queries the full gallery.
    let mut qbs_aps = Vec::new();
    let mut qbs_ndcgs = Vec::new();
    for word in qbs_queries(dataset) {
        let embedding = model.strings.encode(params, &model.alphabet, &word)?;
        let scores = ScoreVector::new(scores_against(&embedding, cache))?;
        let ctx = QueryContext::new(word, cache.transcriptions.clone());
        qbs_aps.push(average_precision(&scores, &ctx)?);
        match ndcg(&scores, &ctx, relevance) {
            Ok(v) => qbs_ndcgs.push(v),
            Err(Error::ZeroIdeal) => metrics.dropped_ndcg += 1,
            Err(e) => return Err(e),
        }
    }
    metrics.qbs_map = mean_average_precision(&qbs_aps)?;
    metrics.qbs_ndcg = mean_average_precision(&qbs_ndcgs)?;

    // QbE: every test sample queries the gallery minus itself.
    let mut qbe_aps = Vec::new();
    let mut qbe_ndcgs = Vec::new();
    for k in 0..cache.ids.len() {
        let scores = ScoreVector::new(scores_against(&cache.embeddings[k], cache))?;
        let retrieved: Vec<usize> = (0..cache.ids.len()).filter(|&j| j != k).collect();
        let ctx = QueryContext::with_retrieved(
            cache.transcriptions[k].clone(),
            cache.transcriptions.clone(),
            retrieved,
        )?;
        if ctx.positives().is_empty() {
            metrics.dropped_qbe_ap += 1;
        } else {
            qbe_aps.push(average_precision(&scores, &ctx)?);
        }
        match ndcg(&scores, &ctx, relevance) {
            Ok(v) => qbe_ndcgs.push(v),
            Err(Error::ZeroIdeal) => metrics.dropped_ndcg += 1,
            Err(e) => return Err(e),
        }
    }
    metrics.qbe_map = mean_average_precision(&qbe_aps)?;
    metrics.qbe_ndcg = mean_average_precision(&qbe_ndcgs)?;
    Ok(metrics)
}

/// One point of the top-n mean edit distance curve.
#[derive(Debug, Clone, Copy)]
pub struct TopNPoint {
    pub n: usize,
    pub model_ed: f64,
    pub ideal_ed: f64,
}

/// One (edit distance, similarity) observation for the box-plot export.
#[derive(Debug, Clone, Copy)]
pub struct BoxplotSample {
    pub edit_distance: usize,
    pub similarity: f64,
}

/// Everything the evaluation reports: ranking metrics, the top-n edit
/// distance curves (model and ideal), and similarity samples grouped by
/// edit distance.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metrics: TestMetrics,
    pub topn: Vec<TopNPoint>,
    pub boxplot: Vec<BoxplotSample>,
}

/// Full evaluation over the test split. The gallery is embedded exactly
/// once and shared by the metrics, the top-n curves, and the box-plot data.
pub fn evaluate(
    model: &Model,
    params: &ModelParams,
    dataset: &Dataset,
    relevance: &RelevanceSpec,
) -> Result<EvalReport> {
    let cache = embed_test_gallery(model, params, dataset)?;
    let metrics = metrics_from_cache(model, params, dataset, relevance, &cache)?;
    let queries = qbs_queries(dataset);

    let max_n = TOP_N_MAX.min(cache.ids.len());
    let mut model_sum = vec![0.0; max_n];
    let mut ideal_sum = vec![0.0; max_n];
    let mut boxplot = Vec::new();
    for word in &queries {
        let embedding = model.strings.encode(params, &model.alphabet, word)?;
        let raw = scores_against(&embedding, &cache);
        let scores = ScoreVector::new(raw.clone())?;
        let ctx = QueryContext::new(word.clone(), cache.transcriptions.clone());
        for n in 1..=max_n {
            model_sum[n - 1] += top_n_mean_edit_distance(&scores, &ctx, n)?;
            ideal_sum[n - 1] += ideal_top_n_mean_edit_distance(&ctx, n)?;
        }
        for (j, &similarity) in raw.iter().enumerate() {
            let edit_distance = levenshtein(word, &cache.transcriptions[j]);
            if edit_distance <= BOXPLOT_MAX_ED {
                boxplot.push(BoxplotSample {
                    edit_distance,
                    similarity,
                });
            }
        }
    }
    let q = queries.len() as f64;
    let topn = (1..=max_n)
        .map(|n| TopNPoint {
            n,
            model_ed: model_sum[n - 1] / q,
            ideal_ed: ideal_sum[n - 1] / q,
        })
        .collect();
    Ok(EvalReport {
        metrics,
        topn,
        boxplot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::DatasetConfig;

    fn tiny_setup() -> (Model, ModelParams, Dataset) {
        let dataset = Dataset::generate(&DatasetConfig {
            lexicon_size: 8,
            samples_per_word: 6,
            min_word_len: 3,
            max_word_len: 5,
            noise_sigma: 0.2,
            seed: 21,
        })
        .unwrap();
        let (model, params) = crate::encoders::Model::init(dataset.alphabet.clone(), 3);
        (model, params, dataset)
    }

    #[test]
    fn qbs_single_item_gallery_ranks_it_first() {
        let (model, params, mut dataset) = tiny_setup();
        // Shrink the test split to one sample.
        let keep = dataset.test_indices()[0];
        for (i, s) in dataset.samples.iter_mut().enumerate() {
            if i != keep && s.split == crate::encoders::Split::Test {
                s.split = crate::encoders::Split::Train;
            }
        }
        let dataset = Dataset::from_samples(dataset.samples);
        let word = dataset.samples[dataset.test_indices()[0]].transcription.clone();
        let result = query_by_string(&model, &params, &dataset, &word).unwrap();
        assert_eq!(result.ranked.len(), 1);
        assert!(result.ranked[0].exact);
    }

    #[test]
    fn qbs_similarities_are_non_increasing() {
        let (model, params, dataset) = tiny_setup();
        let word = dataset.lexicon[0].clone();
        let result = query_by_string(&model, &params, &dataset, &word).unwrap();
        for pair in result.ranked.windows(2) {
            assert!(pair[0].similarity >= pair[1].similarity);
        }
    }

    #[test]
    fn qbe_excludes_the_query_sample() {
        let (model, params, dataset) = tiny_setup();
        let id = dataset.samples[dataset.test_indices()[0]].id.clone();
        let result = query_by_example(&model, &params, &dataset, &id).unwrap();
        assert_eq!(result.ranked.len(), dataset.test_indices().len() - 1);
        assert!(result.ranked.iter().all(|item| item.id != id));
    }

    #[test]
    fn qbe_missing_sample_errors() {
        let (model, params, dataset) = tiny_setup();
        assert!(matches!(
            query_by_example(&model, &params, &dataset, "nope"),
            Err(Error::MissingSample(_))
        ));
    }

    #[test]
    fn qbe_ranking_is_invariant_to_gallery_storage_order() {
        let (model, params, dataset) = tiny_setup();
        let id = dataset.samples[dataset.test_indices()[1]].id.clone();
        let before = query_by_example(&model, &params, &dataset, &id).unwrap();

        let mut samples = dataset.samples.clone();
        samples.reverse();
        let reversed = Dataset::from_samples(samples);
        let after = query_by_example(&model, &params, &reversed, &id).unwrap();

        let ids_before: Vec<&String> = before.ranked.iter().map(|r| &r.id).collect();
        let ids_after: Vec<&String> = after.ranked.iter().map(|r| &r.id).collect();
        assert_eq!(ids_before, ids_after);
    }

    #[test]
    fn metrics_are_in_range_and_repeatable() {
        let (model, params, dataset) = tiny_setup();
        let rel = RelevanceSpec::evaluation_table();
        let a = test_metrics(&model, &params, &dataset, &rel).unwrap();
        let b = test_metrics(&model, &params, &dataset, &rel).unwrap();
        for v in [a.qbs_map, a.qbs_ndcg, a.qbe_map, a.qbe_ndcg] {
            assert!((0.0..=1.0).contains(&v), "{v}");
        }
        assert_eq!(a.qbs_map.to_bits(), b.qbs_map.to_bits());
        assert_eq!(a.qbe_ndcg.to_bits(), b.qbe_ndcg.to_bits());
    }

    #[test]
    fn ideal_curve_is_a_pointwise_lower_bound() {
        let (model, params, dataset) = tiny_setup();
        let report = evaluate(
            &model,
            &params,
            &dataset,
            &RelevanceSpec::evaluation_table(),
        )
        .unwrap();
        assert!(!report.topn.is_empty());
        for point in &report.topn {
            assert!(
                point.ideal_ed <= point.model_ed + 1e-12,
                "n {}: ideal {} model {}",
                point.n,
                point.ideal_ed,
                point.model_ed
            );
        }
        assert!(report
            .boxplot
            .iter()
            .all(|s| s.edit_distance <= BOXPLOT_MAX_ED));
    }
}
