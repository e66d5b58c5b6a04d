//! The epoch loop: weighted sampling, combined loss, clipped Adam steps,
//! per-epoch test metrics, and checkpointing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{combined_loss, weighted_sample_epoch, TrainConfig};
use crate::encoders::Model;
use crate::harness::{eval, Dataset};
use crate::metrics::RelevanceSpec;
use crate::nn::{adam_step, Checkpoint, ModelParams};
use crate::{Error, Result};

/// Per-epoch training record: mean loss terms over the epoch's steps plus
/// test metrics.
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_ap_img: f64,
    pub loss_ndcg_img: f64,
    pub loss_ndcg_str: f64,
    pub loss_ap_cross: f64,
    pub loss_ndcg_cross: f64,
    pub loss_l1: f64,
    pub test_qbs_map: f64,
    pub test_qbs_ndcg: f64,
    pub test_qbe_map: f64,
    pub test_qbe_ndcg: f64,
}

/// Everything a training run produces.
pub struct TrainArtifacts {
    pub model: Model,
    /// Parameters after the final epoch.
    pub final_params: ModelParams,
    /// Parameters at the epoch with the best test QbS mAP.
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub clip_events: usize,
    pub dropped_ap_queries: usize,
    pub dropped_ndcg_queries: usize,
}

/// Trains both encoders on the dataset's train split.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainArtifacts> {
    cfg.validate()?;
    if dataset.train_indices().is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if dataset.test_indices().is_empty() {
        return Err(Error::EmptySplit("test"));
    }

    let (model, mut params) = Model::init(dataset.alphabet.clone(), cfg.seed);
    let relevance = RelevanceSpec::evaluation_table();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut best_map = f64::NEG_INFINITY;
    let mut clip_events = 0usize;
    let mut dropped_ap_queries = 0usize;
    let mut dropped_ndcg_queries = 0usize;

    for epoch in 1..=cfg.epochs {
        // Stream 0 of the seed initializes parameters; each epoch samples
        // from its own stream.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let batches = weighted_sample_epoch(dataset, cfg, &mut rng)?;

        let mut sums = [0.0f64; 7];
        for (step, batch) in batches.iter().enumerate() {
            let (breakdown, mut grads) = combined_loss(&model, &params, batch, cfg)?;
            if !breakdown.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
                clip_events += 1;
            }
            adam_step(&mut params, &grads, &cfg.optimizer, epoch)?;

            sums[0] += breakdown.total;
            sums[1] += breakdown.ap_img;
            sums[2] += breakdown.ndcg_img;
            sums[3] += breakdown.ndcg_str;
            sums[4] += breakdown.ap_cross;
            sums[5] += breakdown.ndcg_cross;
            sums[6] += breakdown.l1;
            dropped_ap_queries += breakdown.dropped_ap;
            dropped_ndcg_queries += breakdown.dropped_ndcg;
        }
        let steps = batches.len().max(1) as f64;

        let metrics = eval::test_metrics(&model, &params, dataset, &relevance)?;
        let record = EpochRecord {
            epoch,
            loss_total: sums[0] / steps,
            loss_ap_img: sums[1] / steps,
            loss_ndcg_img: sums[2] / steps,
            loss_ndcg_str: sums[3] / steps,
            loss_ap_cross: sums[4] / steps,
            loss_ndcg_cross: sums[5] / steps,
            loss_l1: sums[6] / steps,
            test_qbs_map: metrics.qbs_map,
            test_qbs_ndcg: metrics.qbs_ndcg,
            test_qbe_map: metrics.qbe_map,
            test_qbe_ndcg: metrics.qbe_ndcg,
        };
        eprintln!(
            "[{} seed {}] epoch {:>3}: loss {:.4} qbs mAP {:.4} nDCG {:.4} qbe mAP {:.4}",
            cfg.mode.as_str(),
            cfg.seed,
            epoch,
            record.loss_total,
            record.test_qbs_map,
            record.test_qbs_ndcg,
            record.test_qbe_map,
        );
        history.push(record);

        if metrics.qbs_map > best_map {
            best_map = metrics.qbs_map;
            best_params = params.clone();
            best_epoch = epoch;
        }
    }

    Ok(TrainArtifacts {
        model,
        final_params: params,
        best_params,
        best_epoch,
        history,
        clip_events,
        dropped_ap_queries,
        dropped_ndcg_queries,
    })
}

/// The metric-history CSV, formatted identically across runs.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(
        "epoch,loss_total,loss_ap_img,loss_ndcg_img,loss_ndcg_str,loss_ap_cross,\
         loss_ndcg_cross,loss_l1,test_qbs_map,test_qbs_ndcg,test_qbe_map,test_qbe_ndcg\n",
    );
    for r in history {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epoch,
            r.loss_total,
            r.loss_ap_img,
            r.loss_ndcg_img,
            r.loss_ndcg_str,
            r.loss_ap_cross,
            r.loss_ndcg_cross,
            r.loss_l1,
            r.test_qbs_map,
            r.test_qbs_ndcg,
            r.test_qbe_map,
            r.test_qbe_ndcg,
        )
        .expect("string write");
    }
    out
}

#[derive(Serialize)]
struct RunManifest<'a> {
    invocation: &'a [String],
    config: &'a TrainConfig,
    config_hash: String,
    dataset_hash: String,
    loss_terms: Vec<&'static str>,
    best_epoch: usize,
    clip_events: usize,
    dropped_ap_queries: usize,
    dropped_ndcg_queries: usize,
}

/// Trains and, when `out_dir` is given, writes `history.csv`, `best.ckpt`,
/// `final.ckpt`, and `manifest.json` there.
pub fn run_training(
    dataset: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    invocation: &[String],
) -> Result<TrainArtifacts> {
    let artifacts = train(dataset, cfg)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("history.csv"), history_csv(&artifacts.history))?;

        let manifest = RunManifest {
            invocation,
            config: cfg,
            config_hash: cfg.hash(),
            dataset_hash: format!("{:016x}", dataset.content_hash()),
            loss_terms: cfg.mode.term_names(),
            best_epoch: artifacts.best_epoch,
            clip_events: artifacts.clip_events,
            dropped_ap_queries: artifacts.dropped_ap_queries,
            dropped_ndcg_queries: artifacts.dropped_ndcg_queries,
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;

        for (name, params) in [
            ("best.ckpt", &artifacts.best_params),
            ("final.ckpt", &artifacts.final_params),
        ] {
            let mut meta = BTreeMap::new();
            meta.insert(
                "alphabet".to_string(),
                artifacts.model.alphabet.as_string(),
            );
            meta.insert("mode".to_string(), cfg.mode.as_str().to_string());
            meta.insert(
                "dataset_hash".to_string(),
                format!("{:016x}", dataset.content_hash()),
            );
            let ckpt = Checkpoint {
                rng_seed: cfg.seed,
                config_hash: cfg.hash(),
                meta,
                params: params.clone(),
            };
            ckpt.save(&dir.join(name))?;
        }
    }
    Ok(artifacts)
}
