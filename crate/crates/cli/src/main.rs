//! `medrank` — two-tower CNN medication ranking pipeline.
//!
//! Subcommands: gen-data, train, eval, rank, bench, cluster,
//! export-embeddings. Global flags plus a flat JSON `--config` file feed
//! every command; a flag always beats the config file. `MEDRANK_LOG`
//! controls diagnostic verbosity (error, warn, info, debug); diagnostics go
//! to stderr, machine-readable output to files or stdout.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "medrank", version, about = "Rank a patient's medications against a descriptive phrase")]
struct Cli {
    /// JSON config file; every key can be overridden by a flag of the same name.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for all randomized steps.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: machine cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for file outputs.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic train/heldout instance files from a corpus.
    GenData(GenDataArgs),
    /// Train the two towers and write a checkpoint plus history CSV.
    Train(TrainArgs),
    /// Report top-1 accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Rank candidate medications against one query phrase.
    Rank(RankArgs),
    /// Measure single-threaded ranking latency.
    Bench(BenchArgs),
    /// Cluster medication encodings and export them.
    Cluster(ClusterArgs),
    /// Export medication encodings as TSV without clustering.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// DMP derivation mode: "entity" or "ngram".
    #[arg(long)]
    dmp_mode: Option<String>,
    /// Candidates per instance (one positive, n-1 negatives).
    #[arg(long)]
    n_candidates: Option<usize>,
    /// Fraction of records whose instances land in the train split.
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Entity types kept when building DMPs (comma-separated).
    #[arg(long, value_delimiter = ',')]
    allowed_types: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Embedding file for both towers (unless per-tower files are given).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    query_embeddings: Option<PathBuf>,
    #[arg(long)]
    candidate_embeddings: Option<PathBuf>,
    /// Training instances (JSONL).
    #[arg(long)]
    train_set: PathBuf,
    /// Validation instances (JSONL) scored each epoch.
    #[arg(long)]
    val_set: PathBuf,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// "sgd" or "adam".
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    adam_epsilon: Option<f64>,
    /// Vector for unknown tokens: "zeros" or "mean".
    #[arg(long)]
    oov_policy: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    query_embeddings: Option<PathBuf>,
    #[arg(long)]
    candidate_embeddings: Option<PathBuf>,
    #[arg(long)]
    oov_policy: Option<String>,
    /// Instance file (JSONL) to score.
    #[arg(long)]
    dataset: PathBuf,
    /// "strict", "relaxed", or "both".
    #[arg(long, default_value = "both")]
    mode: String,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    query_embeddings: Option<PathBuf>,
    #[arg(long)]
    candidate_embeddings: Option<PathBuf>,
    #[arg(long)]
    oov_policy: Option<String>,
    /// The descriptive phrase to rank against.
    #[arg(long)]
    query: String,
    /// A candidate medication name (repeat for each).
    #[arg(long = "candidate", required = true)]
    candidates: Vec<String>,
    /// With a gazetteer, the query is reduced to its entity spans first.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    allowed_types: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    query_embeddings: Option<PathBuf>,
    #[arg(long)]
    candidate_embeddings: Option<PathBuf>,
    #[arg(long)]
    oov_policy: Option<String>,
    /// Candidates ranked per trial.
    #[arg(long)]
    n_candidates: Option<usize>,
    /// Tokens per synthetic query/candidate.
    #[arg(long, default_value_t = 16)]
    token_len: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 20)]
    warmup: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    query_embeddings: Option<PathBuf>,
    #[arg(long)]
    candidate_embeddings: Option<PathBuf>,
    #[arg(long)]
    oov_policy: Option<String>,
    /// Medication names to cluster, one per line.
    #[arg(long)]
    smns: PathBuf,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Length-normalize encodings first (Euclidean then orders like cosine).
    #[arg(long)]
    normalize: bool,
    /// Also report the closest cluster-mates of this medication.
    #[arg(long)]
    anchor: Option<String>,
    #[arg(long, default_value_t = 10)]
    topk: usize,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    query_embeddings: Option<PathBuf>,
    #[arg(long)]
    candidate_embeddings: Option<PathBuf>,
    #[arg(long)]
    oov_policy: Option<String>,
    /// Medication names to encode, one per line.
    #[arg(long)]
    smns: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    let file_config = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };

    if let Some(threads) = cli.threads.or(file_config.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    let seed = cli.seed.or(file_config.seed).unwrap_or(42);
    let output = cli
        .output
        .clone()
        .or_else(|| file_config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    match cli.command {
        Command::GenData(args) => commands::gen_data(args, &file_config, seed, &output),
        Command::Train(args) => commands::train(args, &file_config, seed, &output),
        Command::Eval(args) => commands::eval(args, &file_config),
        Command::Rank(args) => commands::rank(args, &file_config),
        Command::Bench(args) => commands::bench(args, &file_config, seed),
        Command::Cluster(args) => commands::cluster(args, &file_config, seed, &output),
        Command::ExportEmbeddings(args) => commands::export_embeddings(args, &file_config, &output),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MEDRANK_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
