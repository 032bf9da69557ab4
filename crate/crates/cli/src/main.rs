//! `relmention`: train, evaluate and inspect mention-attention relation
//! classifiers.
//!
//! Exit codes: 0 on success, 1 on runtime failure (including a failed
//! gradient check), 2 on usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relmention::aggregation::{Aggregator, SimilarityMode};

mod commands;
mod config;
mod data;
mod heatmap;

/// Invalid input from the caller: bad flags, paths or configuration values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "relmention", version, about = "Relation extraction with relation-specific mention attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint, a metrics log and a run manifest.
    Train(TrainArgs),
    /// Score a split with a checkpoint (or a prediction file) and report F1.
    Eval(EvalArgs),
    /// Write predictions for a DocRED-format file.
    Predict(PredictArgs),
    /// Compare analytic gradients of the full loss with central differences.
    GradCheck(GradCheckArgs),
    /// Export one entity's attention map as CSV and SVG.
    AnalyzeAttn(AnalyzeArgs),
    /// Corpus statistics: documents, facts, mentions per entity.
    Stats(StatsArgs),
    /// Write a synthetic confounded corpus in the DocRED layout.
    Synth(SynthArgs),
    /// Train pooling and attention models on the synthetic corpus.
    Bench(BenchArgs),
}

#[derive(Args, Default)]
pub struct ModelOverrides {
    /// Entity representation: avg, max, lse or rsman.
    #[arg(long)]
    pub aggregator: Option<Aggregator>,
    /// Prototype/mention similarity: dot or mlp.
    #[arg(long)]
    pub similarity: Option<SimilarityMode>,
    #[arg(long)]
    pub mention_dim: Option<usize>,
    #[arg(long)]
    pub bilinear_dim: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Args, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Pick the threshold with the best dev F1 on a 0.05 grid.
    #[arg(long)]
    pub tune_threshold: bool,
    /// NA pairs kept per positive pair during training.
    #[arg(long)]
    pub negative_ratio: Option<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// TOML file with [model], [train] and [data] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with train_annotated.json or train.json, and dev.json.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for model.ckpt, metrics.jsonl and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Hyper-parameter preset: docred or dwie.
    #[arg(long)]
    pub preset: Option<String>,
    /// MEMB1 mention vectors; switches to the precomputed encoder.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOverrides,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate a submission file instead of running a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// train, dev or test.
    #[arg(long, default_value = "dev")]
    pub split: String,
    /// Compute Ign F1 against facts of the training split.
    #[arg(long)]
    pub ign: bool,
    /// Also ignore facts of the dev split.
    #[arg(long)]
    pub exclude_dev_facts: bool,
    /// literal: drop every in-train prediction; official: drop only correct ones.
    #[arg(long, default_value = "literal", value_parser = ["literal", "official"])]
    pub ign_policy: String,
    /// Write the All/M1/M2 table to this CSV file ("-" or no value: stdout).
    #[arg(long, num_args = 0..=1, default_missing_value = "-")]
    pub subsets: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// DocRED-format documents; labels are ignored.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value = "rsman")]
    pub aggregator: Aggregator,
    #[arg(long, default_value = "dot")]
    pub similarity: SimilarityMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Print the full report as JSON.
    #[arg(long)]
    pub json: bool,
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// DocRED-format file containing the document.
    #[arg(long)]
    pub input: PathBuf,
    /// Document title.
    #[arg(long)]
    pub doc: String,
    /// Entity index within the document.
    #[arg(long)]
    pub entity: usize,
    /// Output prefix; writes PREFIX.csv and PREFIX.svg.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Args)]
pub struct StatsArgs {
    /// Directory whose train/dev/test splits are pooled.
    #[arg(long, required_unless_present = "input")]
    pub data: Option<PathBuf>,
    /// Individual DocRED-format files.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Relation inventory; defaults to rel_info.json in --data.
    #[arg(long)]
    pub rel_info: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub documents: usize,
    #[arg(long, default_value_t = 2)]
    pub relations: usize,
    #[arg(long, default_value_t = 20)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 0.3)]
    pub confounded_ratio: f64,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub documents: usize,
    #[arg(long, default_value_t = 0.3)]
    pub confounded_ratio: f64,
    #[arg(long, value_delimiter = ',', default_value = "rsman,avg")]
    pub aggregators: Vec<Aggregator>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// Repeat with model seeds 1..=N and report the mean.
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    #[arg(long)]
    pub json: bool,
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<UsageError>().is_some()
            || matches!(c.downcast_ref::<relmention::Error>(), Some(relmention::Error::Config { .. }))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::AnalyzeAttn(a) => commands::analyze_attn(a),
        Command::Stats(a) => commands::stats(a),
        Command::Synth(a) => commands::synth(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
