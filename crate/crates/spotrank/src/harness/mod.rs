//! Dataset generation and I/O, end-to-end retrieval, and evaluation
//! reports.

mod dataset;
pub mod eval;
pub mod gradsuite;
pub mod report;

pub use dataset::{Dataset, DatasetConfig};
pub use eval::{
    evaluate, query_by_example, query_by_string, test_metrics, EvalReport, RetrievalResult,
    TestMetrics,
};
pub use report::{write_report, ReportMeta};

use std::path::Path;

use crate::encoders::{Alphabet, Model};
use crate::nn::{Checkpoint, ModelParams};
use crate::{Error, Result};

/// Loads a checkpoint and rebuilds the model around it.
pub fn load_model(path: &Path) -> Result<(Model, ModelParams, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    let alphabet_str = ckpt.meta.get("alphabet").ok_or_else(|| Error::MalformedFile {
        path: path.display().to_string(),
        reason: "missing alphabet metadata".into(),
    })?;
    let alphabet = Alphabet::from_string(alphabet_str);
    let model = Model::bind(&ckpt.params, alphabet)?;
    let params = ckpt.params.clone();
    Ok((model, params, ckpt))
}
