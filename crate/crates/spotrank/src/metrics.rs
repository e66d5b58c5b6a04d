//! Exact ranking metrics, edit distance, and relevance functions.
//!
//! Everything in this module is a pure function of its inputs and serves as
//! the non-differentiable ground truth that the [`crate::smooth`] surrogates
//! approximate. Ranking ties are broken deterministically: descending score,
//! then ascending gallery index.

use std::collections::BTreeMap;

use crate::{Error, Result};

/// Levenshtein distance: minimal number of single-character insertions,
/// deletions, and substitutions transforming `a` into `b`.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    // Rolling single-row DP over b.
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = diag + usize::from(ca != cb);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

/// Graded relevance of a candidate transcription with respect to a query.
#[derive(Debug, Clone, PartialEq)]
pub enum RelevanceSpec {
    /// 1 iff the transcriptions are identical, else 0.
    Binary,
    /// `max(0, gamma - d)` for edit distance `d`; the training relevance.
    GradedLinear { gamma: u32 },
    /// Explicit edit distance -> score table; distances absent from the
    /// table score 0.
    GradedTable(BTreeMap<usize, f64>),
}

impl RelevanceSpec {
    pub fn binary() -> Self {
        RelevanceSpec::Binary
    }

    pub fn graded_linear(gamma: u32) -> Self {
        RelevanceSpec::GradedLinear { gamma }
    }

    /// Builds a graded table, validating that scores are non-negative and
    /// non-increasing in edit distance.
    pub fn graded_table(table: BTreeMap<usize, f64>) -> Result<Self> {
        let mut prev = f64::INFINITY;
        for &score in table.values() {
            if score < 0.0 || score > prev {
                return Err(Error::NonMonotoneTable);
            }
            prev = score;
        }
        Ok(RelevanceSpec::GradedTable(table))
    }

    /// The evaluation grades: edit distances 0..=4 score 20, 15, 10, 5, 3;
    /// larger distances score 0.
    pub fn evaluation_table() -> Self {
        let table = [(0, 20.0), (1, 15.0), (2, 10.0), (3, 5.0), (4, 3.0)]
            .into_iter()
            .collect();
        RelevanceSpec::GradedTable(table)
    }

    /// Relevance of `candidate` for `query`.
    pub fn score(&self, query: &str, candidate: &str) -> f64 {
        match self {
            RelevanceSpec::Binary => {
                if query == candidate {
                    1.0
                } else {
                    0.0
                }
            }
            RelevanceSpec::GradedLinear { gamma } => {
                let d = levenshtein(query, candidate);
                (f64::from(*gamma) - d as f64).max(0.0)
            }
            RelevanceSpec::GradedTable(table) => {
                let d = levenshtein(query, candidate);
                table.get(&d).copied().unwrap_or(0.0)
            }
        }
    }
}

/// Cosine similarities of one query against every gallery item.
///
/// Construction rejects non-finite entries; all ranking code relies on it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteScore);
        }
        Ok(ScoreVector(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for ScoreVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A query against a gallery of transcriptions.
///
/// `retrieved` is the index set the query actually ranks (the whole gallery
/// for evaluation; the batch minus the query itself for in-batch training).
/// `positives` are the exact-transcription matches inside `retrieved` and are
/// derived at construction.
#[derive(Debug, Clone)]
pub struct QueryContext {
    query: String,
    gallery: Vec<String>,
    retrieved: Vec<usize>,
    positives: Vec<usize>,
}

impl QueryContext {
    /// Context ranking the full gallery.
    pub fn new(query: impl Into<String>, gallery: Vec<String>) -> Self {
        let retrieved: Vec<usize> = (0..gallery.len()).collect();
        Self::build(query.into(), gallery, retrieved)
    }

    /// Context ranking only `retrieved` (must index into the gallery).
    pub fn with_retrieved(
        query: impl Into<String>,
        gallery: Vec<String>,
        retrieved: Vec<usize>,
    ) -> Result<Self> {
        let len = gallery.len();
        if let Some(&bad) = retrieved.iter().find(|&&i| i >= len) {
            return Err(Error::IndexOutOfRange { index: bad, len });
        }
        Ok(Self::build(query.into(), gallery, retrieved))
    }

    fn build(query: String, gallery: Vec<String>, retrieved: Vec<usize>) -> Self {
        let positives = retrieved
            .iter()
            .copied()
            .filter(|&i| gallery[i] == query)
            .collect();
        QueryContext {
            query,
            gallery,
            retrieved,
            positives,
        }
    }

    pub fn query(&self) -> &str {
        &self.query
    }

    pub fn gallery(&self) -> &[String] {
        &self.gallery
    }

    pub fn retrieved(&self) -> &[usize] {
        &self.retrieved
    }

    pub fn positives(&self) -> &[usize] {
        &self.positives
    }

    /// Edit distance between the query and gallery item `idx`.
    pub fn edit_distance(&self, idx: usize) -> usize {
        levenshtein(&self.query, &self.gallery[idx])
    }

    /// Relevance of every retrieved item, aligned with `retrieved`.
    pub fn relevances(&self, spec: &RelevanceSpec) -> Vec<f64> {
        self.retrieved
            .iter()
            .map(|&i| spec.score(&self.query, &self.gallery[i]))
            .collect()
    }

    /// The ideal permutation of `retrieved`: descending relevance,
    /// ascending index on ties.
    pub fn ideal_order(&self, spec: &RelevanceSpec) -> Vec<usize> {
        let mut keyed: Vec<(usize, f64)> = self
            .retrieved
            .iter()
            .map(|&i| (i, spec.score(&self.query, &self.gallery[i])))
            .collect();
        keyed.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        keyed.into_iter().map(|(i, _)| i).collect()
    }

    /// `retrieved` sorted by descending score, ascending index on ties.
    pub fn ranking(&self, scores: &ScoreVector) -> Vec<usize> {
        assert_eq!(
            scores.len(),
            self.gallery.len(),
            "score vector length must match gallery size"
        );
        let mut order = self.retrieved.clone();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        order
    }
}

/// Rank of item `i` inside `subset`: one plus the number of strictly higher
/// scores. Ties therefore break toward the better rank.
pub fn rank_of(i: usize, scores: &ScoreVector, subset: &[usize]) -> Result<usize> {
    if !subset.contains(&i) {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: subset.len(),
        });
    }
    let rank = 1 + subset
        .iter()
        .filter(|&&j| j != i && scores[j] > scores[i])
        .count();
    Ok(rank)
}

/// Average precision with binary relevance (exact transcription match).
pub fn average_precision(scores: &ScoreVector, ctx: &QueryContext) -> Result<f64> {
    if ctx.positives().is_empty() {
        return Err(Error::EmptyPositives);
    }
    let ranking = ctx.ranking(scores);
    let positive: Vec<bool> = {
        let mut mask = vec![false; ctx.gallery().len()];
        for &p in ctx.positives() {
            mask[p] = true;
        }
        mask
    };
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (n, &idx) in ranking.iter().enumerate() {
        if positive[idx] {
            hits += 1;
            sum += hits as f64 / (n + 1) as f64;
        }
    }
    Ok(sum / ctx.positives().len() as f64)
}

/// Arithmetic mean of per-query AP values.
pub fn mean_average_precision(per_query: &[f64]) -> Result<f64> {
    if per_query.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    Ok(per_query.iter().sum::<f64>() / per_query.len() as f64)
}

/// Discounted cumulative gain over the descending-score ordering.
pub fn dcg(scores: &ScoreVector, ctx: &QueryContext, spec: &RelevanceSpec) -> f64 {
    ctx.ranking(scores)
        .iter()
        .enumerate()
        .map(|(n, &idx)| {
            spec.score(ctx.query(), &ctx.gallery()[idx]) / ((n + 2) as f64).log2()
        })
        .sum()
}

/// Ideal DCG: the discounted gain along the ideal order.
pub fn idcg(ctx: &QueryContext, spec: &RelevanceSpec) -> f64 {
    ctx.ideal_order(spec)
        .iter()
        .enumerate()
        .map(|(n, &idx)| {
            spec.score(ctx.query(), &ctx.gallery()[idx]) / ((n + 2) as f64).log2()
        })
        .sum()
}

/// Normalized DCG. Errors when every retrieved item has zero relevance.
pub fn ndcg(scores: &ScoreVector, ctx: &QueryContext, spec: &RelevanceSpec) -> Result<f64> {
    let ideal = idcg(ctx, spec);
    if ideal <= 0.0 {
        return Err(Error::ZeroIdeal);
    }
    Ok(dcg(scores, ctx, spec) / ideal)
}

/// Mean edit distance between the query and its top-`n` ranked items.
pub fn top_n_mean_edit_distance(
    scores: &ScoreVector,
    ctx: &QueryContext,
    n: usize,
) -> Result<f64> {
    if n == 0 || n > ctx.retrieved().len() {
        return Err(Error::NOutOfRange {
            n,
            len: ctx.retrieved().len(),
        });
    }
    let ranking = ctx.ranking(scores);
    Ok(mean_edit_distance(ctx, &ranking[..n]))
}

/// The ideal counterpart of [`top_n_mean_edit_distance`]: ranks the gallery
/// by ascending edit distance (the best achievable ordering), so the result
/// is a pointwise lower bound for any score-based ranking.
pub fn ideal_top_n_mean_edit_distance(ctx: &QueryContext, n: usize) -> Result<f64> {
    if n == 0 || n > ctx.retrieved().len() {
        return Err(Error::NOutOfRange {
            n,
            len: ctx.retrieved().len(),
        });
    }
    let mut order = ctx.retrieved().to_vec();
    let mut dist = vec![0usize; ctx.gallery().len()];
    for &i in ctx.retrieved() {
        dist[i] = ctx.edit_distance(i);
    }
    order.sort_by(|&a, &b| dist[a].cmp(&dist[b]).then(a.cmp(&b)));
    Ok(mean_edit_distance(ctx, &order[..n]))
}

fn mean_edit_distance(ctx: &QueryContext, items: &[usize]) -> f64 {
    let total: usize = items.iter().map(|&i| ctx.edit_distance(i)).sum();
    total as f64 / items.len() as f64
}
