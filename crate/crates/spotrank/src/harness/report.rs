//! Evaluation report files.
//!
//! `evaluate` results are exported as three CSV tables plus a JSON summary:
//!
//! - `metrics_summary.csv` — `metric,value` rows for the four headline
//!   numbers.
//! - `topn_curve.csv` — `n,model_ed,ideal_ed`.
//! - `boxplot.csv` — raw `edit_distance,similarity` samples (grouping and
//!   rendering are left to external plotting tools).
//! - `summary.json` — metrics plus config hash, seed, and the query
//!   protocol, for provenance.
//!
//! All numbers are written with fixed six-decimal formatting so repeated
//! evaluations of the same checkpoint are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::eval::EvalReport;
use crate::Result;

/// Provenance recorded alongside the metrics.
#[derive(Debug, Clone, Serialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub rng_seed: u64,
    pub dataset_hash: String,
    pub mode: String,
    pub qbs_query_protocol: String,
}

impl ReportMeta {
    pub fn new(config_hash: String, rng_seed: u64, dataset_hash: String, mode: String) -> Self {
        ReportMeta {
            config_hash,
            rng_seed,
            dataset_hash,
            mode,
            qbs_query_protocol: "unique transcriptions of the test split".to_string(),
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    #[serde(flatten)]
    meta: &'a ReportMeta,
    qbs_map: f64,
    qbs_ndcg: f64,
    qbe_map: f64,
    qbe_ndcg: f64,
    dropped_qbe_ap: usize,
    dropped_ndcg: usize,
    top_n_max: usize,
}

pub fn metrics_summary_csv(report: &EvalReport) -> String {
    let m = &report.metrics;
    format!(
        "metric,value\nqbs_map,{:.6}\nqbs_ndcg,{:.6}\nqbe_map,{:.6}\nqbe_ndcg,{:.6}\n",
        m.qbs_map, m.qbs_ndcg, m.qbe_map, m.qbe_ndcg
    )
}

pub fn topn_curve_csv(report: &EvalReport) -> String {
    let mut out = String::from("n,model_ed,ideal_ed\n");
    for p in &report.topn {
        writeln!(out, "{},{:.6},{:.6}", p.n, p.model_ed, p.ideal_ed).expect("string write");
    }
    out
}

pub fn boxplot_csv(report: &EvalReport) -> String {
    let mut out = String::from("edit_distance,similarity\n");
    for s in &report.boxplot {
        writeln!(out, "{},{:.6}", s.edit_distance, s.similarity).expect("string write");
    }
    out
}

/// Writes the full report into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport, meta: &ReportMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics_summary.csv"), metrics_summary_csv(report))?;
    std::fs::write(dir.join("topn_curve.csv"), topn_curve_csv(report))?;
    std::fs::write(dir.join("boxplot.csv"), boxplot_csv(report))?;
    let summary = Summary {
        meta,
        qbs_map: report.metrics.qbs_map,
        qbs_ndcg: report.metrics.qbs_ndcg,
        qbe_map: report.metrics.qbe_map,
        qbe_ndcg: report.metrics.qbe_ndcg,
        dropped_qbe_ap: report.metrics.dropped_qbe_ap,
        dropped_ndcg: report.metrics.dropped_ndcg,
        top_n_max: report.topn.len(),
    };
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(())
}
