//! Python bindings for the core ranking metrics, smooth objectives, and
//! dataset generation.
//!
//! Build with `cargo build -p spotrank-py --release`, rename
//! `libspotrank_py.so` to `spotrank_py.so` somewhere on `sys.path`, and
//! `import spotrank_py` (see `python/smoke_test.py`).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use spotrank::harness::{Dataset, DatasetConfig};
use spotrank::metrics;
use spotrank::smooth;

fn err(e: spotrank::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Graded relevance of a candidate transcription for a query.
#[pyclass(name = "RelevanceSpec", from_py_object)]
#[derive(Clone)]
struct PyRelevanceSpec {
    inner: metrics::RelevanceSpec,
}

#[pymethods]
impl PyRelevanceSpec {
    /// 1 for an exact transcription match, else 0.
    #[staticmethod]
    fn binary() -> Self {
        PyRelevanceSpec {
            inner: metrics::RelevanceSpec::binary(),
        }
    }

    /// `max(0, gamma - edit_distance)` — the training relevance.
    #[staticmethod]
    fn graded_linear(gamma: u32) -> Self {
        PyRelevanceSpec {
            inner: metrics::RelevanceSpec::graded_linear(gamma),
        }
    }

    /// Edit distances 0..=4 score 20, 15, 10, 5, 3; farther scores 0.
    #[staticmethod]
    fn evaluation_table() -> Self {
        PyRelevanceSpec {
            inner: metrics::RelevanceSpec::evaluation_table(),
        }
    }

    fn score(&self, query: &str, candidate: &str) -> f64 {
        self.inner.score(query, candidate)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// One query against a gallery of transcriptions. Positives (exact
/// matches) are derived automatically.
#[pyclass(name = "QueryContext", from_py_object)]
#[derive(Clone)]
struct PyQueryContext {
    inner: metrics::QueryContext,
}

#[pymethods]
impl PyQueryContext {
    #[new]
    #[pyo3(signature = (query, gallery, retrieved = None))]
    fn new(query: String, gallery: Vec<String>, retrieved: Option<Vec<usize>>) -> PyResult<Self> {
        let inner = match retrieved {
            None => metrics::QueryContext::new(query, gallery),
            Some(r) => metrics::QueryContext::with_retrieved(query, gallery, r).map_err(err)?,
        };
        Ok(PyQueryContext { inner })
    }

    #[getter]
    fn positives(&self) -> Vec<usize> {
        self.inner.positives().to_vec()
    }

    #[getter]
    fn query(&self) -> String {
        self.inner.query().to_string()
    }

    fn relevances(&self, spec: &PyRelevanceSpec) -> Vec<f64> {
        self.inner.relevances(&spec.inner)
    }

    fn ideal_order(&self, spec: &PyRelevanceSpec) -> Vec<usize> {
        self.inner.ideal_order(&spec.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.gallery().len()
    }
}

#[pyfunction]
fn levenshtein(a: &str, b: &str) -> usize {
    metrics::levenshtein(a, b)
}

#[pyfunction]
fn rank_of(i: usize, scores: Vec<f64>, subset: Vec<usize>) -> PyResult<usize> {
    let sv = metrics::ScoreVector::new(scores).map_err(err)?;
    metrics::rank_of(i, &sv, &subset).map_err(err)
}

#[pyfunction]
fn average_precision(scores: Vec<f64>, ctx: &PyQueryContext) -> PyResult<f64> {
    let sv = metrics::ScoreVector::new(scores).map_err(err)?;
    metrics::average_precision(&sv, &ctx.inner).map_err(err)
}

#[pyfunction]
fn mean_average_precision(per_query: Vec<f64>) -> PyResult<f64> {
    metrics::mean_average_precision(&per_query).map_err(err)
}

#[pyfunction]
fn dcg(scores: Vec<f64>, ctx: &PyQueryContext, spec: &PyRelevanceSpec) -> PyResult<f64> {
    let sv = metrics::ScoreVector::new(scores).map_err(err)?;
    Ok(metrics::dcg(&sv, &ctx.inner, &spec.inner))
}

#[pyfunction]
fn ndcg(scores: Vec<f64>, ctx: &PyQueryContext, spec: &PyRelevanceSpec) -> PyResult<f64> {
    let sv = metrics::ScoreVector::new(scores).map_err(err)?;
    metrics::ndcg(&sv, &ctx.inner, &spec.inner).map_err(err)
}

#[pyfunction]
fn top_n_mean_edit_distance(scores: Vec<f64>, ctx: &PyQueryContext, n: usize) -> PyResult<f64> {
    let sv = metrics::ScoreVector::new(scores).map_err(err)?;
    metrics::top_n_mean_edit_distance(&sv, &ctx.inner, n).map_err(err)
}

#[pyfunction]
fn ideal_top_n_mean_edit_distance(ctx: &PyQueryContext, n: usize) -> PyResult<f64> {
    metrics::ideal_top_n_mean_edit_distance(&ctx.inner, n).map_err(err)
}

#[pyfunction]
fn sigmoid_indicator(x: f64, tau: f64) -> f64 {
    smooth::sigmoid_indicator(x, tau)
}

#[pyfunction]
fn smooth_ap(scores: Vec<f64>, ctx: &PyQueryContext, tau: f64, spec: &PyRelevanceSpec) -> PyResult<f64> {
    let cfg = smooth::SmoothConfig::new(tau, spec.inner.clone()).map_err(err)?;
    smooth::smooth_ap(&scores, &ctx.inner, &cfg).map_err(err)
}

#[pyfunction]
fn smooth_ndcg(
    scores: Vec<f64>,
    ctx: &PyQueryContext,
    tau: f64,
    spec: &PyRelevanceSpec,
) -> PyResult<f64> {
    let cfg = smooth::SmoothConfig::new(tau, spec.inner.clone()).map_err(err)?;
    smooth::smooth_ndcg(&scores, &ctx.inner, &cfg).map_err(err)
}

fn batch_loss(
    sim: Vec<Vec<f64>>,
    ctxs: Vec<PyQueryContext>,
    tau: f64,
    spec: &PyRelevanceSpec,
    f: fn(
        &smooth::SimilarityMatrix,
        &[metrics::QueryContext],
        &smooth::SmoothConfig,
    ) -> spotrank::Result<smooth::LossOutput>,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let rows = sim.len();
    let cols = sim.first().map_or(0, Vec::len);
    if sim.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("similarity rows differ in length"));
    }
    let data: Vec<f64> = sim.into_iter().flatten().collect();
    let matrix = smooth::SimilarityMatrix::new(rows, cols, data).map_err(err)?;
    let cfg = smooth::SmoothConfig::new(tau, spec.inner.clone()).map_err(err)?;
    let inner_ctxs: Vec<metrics::QueryContext> = ctxs.into_iter().map(|c| c.inner).collect();
    let out = f(&matrix, &inner_ctxs, &cfg).map_err(err)?;
    let gradient = (0..rows).map(|q| out.gradient.row(q).to_vec()).collect();
    Ok((out.value, gradient))
}

/// `1 - mean(smooth AP)` plus its gradient over the similarity matrix.
#[pyfunction]
fn loss_ap(
    sim: Vec<Vec<f64>>,
    ctxs: Vec<PyQueryContext>,
    tau: f64,
    spec: &PyRelevanceSpec,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    batch_loss(sim, ctxs, tau, spec, smooth::loss_ap)
}

/// `1 - mean(smooth nDCG)` plus its gradient over the similarity matrix.
#[pyfunction]
fn loss_ndcg(
    sim: Vec<Vec<f64>>,
    ctxs: Vec<PyQueryContext>,
    tau: f64,
    spec: &PyRelevanceSpec,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    batch_loss(sim, ctxs, tau, spec, smooth::loss_ndcg)
}

/// Generates the seeded synthetic dataset and writes it to `path`.
#[pyfunction]
#[pyo3(signature = (path, words = 100, samples = 20, min_len = 3, max_len = 8, noise_sigma = 0.3, seed = 7))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset_file(
    path: &str,
    words: usize,
    samples: usize,
    min_len: usize,
    max_len: usize,
    noise_sigma: f64,
    seed: u64,
) -> PyResult<usize> {
    let dataset = Dataset::generate(&DatasetConfig {
        lexicon_size: words,
        samples_per_word: samples,
        min_word_len: min_len,
        max_word_len: max_len,
        noise_sigma,
        seed,
    })
    .map_err(err)?;
    dataset.save(std::path::Path::new(path)).map_err(err)?;
    Ok(dataset.samples.len())
}

#[pymodule]
fn spotrank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRelevanceSpec>()?;
    m.add_class::<PyQueryContext>()?;
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(rank_of, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(mean_average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(dcg, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(top_n_mean_edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(ideal_top_n_mean_edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(sigmoid_indicator, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_ap, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(loss_ap, m)?)?;
    m.add_function(wrap_pyfunction!(loss_ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset_file, m)?)?;
    Ok(())
}
