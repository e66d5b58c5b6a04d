//! Command-line interface: dataset generation, training, evaluation,
//! single-query retrieval, and the gradient-check suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use spotrank::harness::{
    self, evaluate, gradsuite, query_by_example, query_by_string, Dataset, DatasetConfig,
    ReportMeta, RetrievalResult,
};
use spotrank::metrics::RelevanceSpec;
use spotrank::train::{run_training, LossMode, TrainConfig};

#[derive(Parser)]
#[command(
    name = "spotrank",
    about = "Word spotting trained with differentiable ranking metrics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset file plus its manifest.
    GenData(GenDataArgs),
    /// Train the encoders; writes history.csv, checkpoints, and a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Run one query (by string or by example) and print the ranked list.
    Query(QueryArgs),
    /// Run the finite-difference gradient-check suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of distinct words in the lexicon.
    #[arg(long, default_value_t = 100)]
    words: usize,
    /// Samples rendered per word.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    #[arg(long, default_value_t = 8)]
    max_len: usize,
    #[arg(long, default_value_t = 0.3)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output dataset file.
    #[arg(long, default_value = "dataset.tsv")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Optional JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Loss mode: ap | ndcg | join.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    samples_per_epoch: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<u32>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Output directory (default: $SPOTRANK_RUN_ROOT/<mode>-seed<seed>).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Report directory (default: <run root>/eval).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Query-by-string: the query word.
    #[arg(long, conflicts_with = "sample_id")]
    string: Option<String>,
    /// Query-by-example: a sample id from the dataset.
    #[arg(long)]
    sample_id: Option<String>,
    /// How many results to print.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random batches per stochastic check.
    #[arg(long, default_value_t = 20)]
    batches: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// Exit 2 for configuration problems, 1 for runtime failures.
enum CliError {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<spotrank::Error> for CliError {
    fn from(e: spotrank::Error) -> Self {
        match e {
            spotrank::Error::InvalidConfig(_) | spotrank::Error::InfeasibleLexicon { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Query(args) => query(args),
        Command::Gradcheck(args) => gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

#[derive(Serialize)]
struct DatasetManifest {
    invocation: Vec<String>,
    config: DatasetConfig,
    samples: usize,
    lexicon_size: usize,
    alphabet: String,
    content_hash: String,
}

fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let config = DatasetConfig {
        lexicon_size: args.words,
        samples_per_word: args.samples,
        min_word_len: args.min_len,
        max_word_len: args.max_len,
        noise_sigma: args.noise_sigma,
        seed: args.seed,
    };
    let dataset = Dataset::generate(&config)?;
    dataset.save(&args.out).map_err(runtime)?;
    let manifest = DatasetManifest {
        invocation: std::env::args().collect(),
        samples: dataset.samples.len(),
        lexicon_size: dataset.lexicon.len(),
        alphabet: dataset.alphabet.as_string(),
        content_hash: format!("{:016x}", dataset.content_hash()),
        config,
    };
    let manifest_path = manifest_path_for(&args.out);
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| runtime(e.into()))?;
    println!(
        "wrote {} ({} samples, {} words) and {}",
        args.out.display(),
        dataset.samples.len(),
        dataset.lexicon.len(),
        manifest_path.display()
    );
    Ok(())
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn run_root() -> PathBuf {
    std::env::var_os("SPOTRANK_RUN_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(mode) = &args.mode {
        cfg.mode = LossMode::parse(mode)
            .ok_or_else(|| CliError::Config(format!("unknown mode {mode:?} (ap|ndcg|join)")))?;
    }
    macro_rules! override_field {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = args.$flag { $field = v; })*
        };
    }
    override_field! {
        seed => cfg.seed,
        epochs => cfg.epochs,
        batch_size => cfg.batch_size,
        samples_per_epoch => cfg.samples_per_epoch,
        alpha => cfg.alpha,
        tau => cfg.tau,
        gamma => cfg.gamma,
        noise_sigma => cfg.noise_sigma,
        learning_rate => cfg.optimizer.learning_rate,
        clip_norm => cfg.clip_norm,
    }
    cfg.validate()?;

    let dataset = Dataset::load(&args.data).map_err(runtime)?;
    let out_dir = args
        .out_dir
        .unwrap_or_else(|| run_root().join(format!("{}-seed{}", cfg.mode.as_str(), cfg.seed)));
    let invocation: Vec<String> = std::env::args().collect();
    let artifacts = run_training(&dataset, &cfg, Some(&out_dir), &invocation).map_err(runtime)?;
    let last = artifacts.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs ({} mode, seed {}); best epoch {}; final test QbS mAP {:.4}, nDCG {:.4}",
        cfg.epochs,
        cfg.mode.as_str(),
        cfg.seed,
        artifacts.best_epoch,
        last.test_qbs_map,
        last.test_qbs_ndcg
    );
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let (model, params, ckpt) = harness::load_model(&args.checkpoint).map_err(runtime)?;
    let dataset = Dataset::load(&args.data).map_err(runtime)?;
    let report = evaluate(&model, &params, &dataset, &RelevanceSpec::evaluation_table())
        .map_err(runtime)?;
    let out_dir = args.out_dir.unwrap_or_else(|| run_root().join("eval"));
    let meta = ReportMeta::new(
        ckpt.config_hash.clone(),
        ckpt.rng_seed,
        format!("{:016x}", dataset.content_hash()),
        ckpt.meta.get("mode").cloned().unwrap_or_default(),
    );
    harness::write_report(&out_dir, &report, &meta).map_err(runtime)?;
    println!(
        "QbS mAP {:.4}  QbS nDCG {:.4}  QbE mAP {:.4}  QbE nDCG {:.4}",
        report.metrics.qbs_map,
        report.metrics.qbs_ndcg,
        report.metrics.qbe_map,
        report.metrics.qbe_ndcg
    );
    println!("report in {}", out_dir.display());
    Ok(())
}

fn print_result(result: &RetrievalResult, top: usize) {
    println!(
        "query {:?} -> top {} of {} gallery items",
        result.query,
        top.min(result.ranked.len()),
        result.ranked.len()
    );
    println!("{:>4}  {:>10}  {:>3}  exact  {:<14} transcription", "rank", "similarity", "ed", "id");
    for (k, item) in result.ranked.iter().take(top).enumerate() {
        println!(
            "{:>4}  {:>10.6}  {:>3}  {:^5}  {:<14} {}",
            k + 1,
            item.similarity,
            item.edit_distance,
            if item.exact { "*" } else { "" },
            item.id,
            item.transcription
        );
    }
}

fn query(args: QueryArgs) -> Result<(), CliError> {
    let (model, params, _) = harness::load_model(&args.checkpoint).map_err(runtime)?;
    let dataset = Dataset::load(&args.data).map_err(runtime)?;
    let result = match (&args.string, &args.sample_id) {
        (Some(text), None) => query_by_string(&model, &params, &dataset, text).map_err(runtime)?,
        (None, Some(id)) => query_by_example(&model, &params, &dataset, id).map_err(runtime)?,
        _ => {
            return Err(CliError::Config(
                "pass exactly one of --string or --sample-id".into(),
            ))
        }
    };
    print_result(&result, args.top);
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let outcomes = gradsuite::run_suite(args.batches, args.seed);
    let mut all_passed = true;
    for o in &outcomes {
        println!(
            "[{}] {:<55} max rel error {:.3e}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.max_rel_error
        );
        all_passed &= o.passed;
    }
    if all_passed {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow::anyhow!(
            "gradient checks failed"
        )))
    }
}

fn runtime(e: spotrank::Error) -> CliError {
    CliError::Runtime(e.into())
}
