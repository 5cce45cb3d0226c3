//! Implementations of the `medrank` subcommands.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use medrank_core::checkpoint;
use medrank_core::cluster as clustering;
use medrank_core::datagen::{
    self, make_instances, read_instances, DmpMode, PemCorpus, SourcedInstance,
};
use medrank_core::embedding::{EmbeddingTable, OovPolicy};
use medrank_core::encoder::ModelParams;
use medrank_core::entity::{build_dmp, EntityType, Gazetteer};
use medrank_core::eval::{latency_benchmark, rank_candidates, top1_accuracy};
use medrank_core::token::{tokenize, TokenSequence};
use medrank_core::training::{init_params, train as train_model, TrainingConfig};

use crate::config::{parse_oov_policy, parse_optimizer, validate_inputs, FileConfig};
use crate::{
    BenchArgs, ClusterArgs, EvalArgs, ExportArgs, GenDataArgs, RankArgs, TrainArgs,
};

fn parse_allowed_types(
    flag: &Option<Vec<String>>,
    config: &FileConfig,
) -> Result<BTreeSet<EntityType>> {
    let names = flag.clone().or_else(|| config.allowed_types.clone());
    match names {
        None => Ok(EntityType::ALL.into_iter().collect()),
        Some(names) => {
            let mut out = BTreeSet::new();
            for name in names {
                out.insert(
                    name.trim()
                        .parse::<EntityType>()
                        .with_context(|| format!("--allowed-types entry {name:?}"))?,
                );
            }
            if out.is_empty() {
                bail!("--allowed-types selected no entity types");
            }
            Ok(out)
        }
    }
}

struct TablePaths {
    query: PathBuf,
    candidate: PathBuf,
}

fn resolve_tables(
    embeddings: &Option<PathBuf>,
    query_embeddings: &Option<PathBuf>,
    candidate_embeddings: &Option<PathBuf>,
    config: &FileConfig,
) -> Result<TablePaths> {
    let shared = embeddings.clone().or_else(|| config.embeddings.clone());
    let query = query_embeddings
        .clone()
        .or_else(|| config.query_embeddings.clone())
        .or_else(|| shared.clone());
    let candidate = candidate_embeddings
        .clone()
        .or_else(|| config.candidate_embeddings.clone())
        .or(shared);
    match (query, candidate) {
        (Some(query), Some(candidate)) => Ok(TablePaths { query, candidate }),
        _ => bail!("no embedding file given: pass --embeddings (or per-tower overrides)"),
    }
}

fn load_tables(
    paths: &TablePaths,
    oov_flag: &Option<String>,
    config: &FileConfig,
) -> Result<(Arc<EmbeddingTable>, Arc<EmbeddingTable>)> {
    let policy = match oov_flag.clone().or_else(|| config.oov_policy.clone()) {
        Some(name) => parse_oov_policy(&name)?,
        None => OovPolicy::Zeros,
    };
    let query = Arc::new(
        EmbeddingTable::load_with(&paths.query, policy)
            .with_context(|| format!("loading {}", paths.query.display()))?,
    );
    let candidate = if paths.candidate == paths.query {
        Arc::clone(&query)
    } else {
        Arc::new(
            EmbeddingTable::load_with(&paths.candidate, policy)
                .with_context(|| format!("loading {}", paths.candidate.display()))?,
        )
    };
    info!("query table: {query}; candidate table: {candidate}");
    Ok((query, candidate))
}

fn resolve_checkpoint(flag: &Option<PathBuf>, config: &FileConfig) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| config.checkpoint.clone())
        .ok_or_else(|| anyhow::anyhow!("no checkpoint given: pass --checkpoint"))
}

fn load_model(
    checkpoint_flag: &Option<PathBuf>,
    embeddings: &Option<PathBuf>,
    query_embeddings: &Option<PathBuf>,
    candidate_embeddings: &Option<PathBuf>,
    oov_flag: &Option<String>,
    config: &FileConfig,
) -> Result<ModelParams> {
    let ckpt = resolve_checkpoint(checkpoint_flag, config)?;
    let tables = resolve_tables(embeddings, query_embeddings, candidate_embeddings, config)?;
    validate_inputs(&[
        ("checkpoint", &ckpt),
        ("query embeddings", &tables.query),
        ("candidate embeddings", &tables.candidate),
    ])?;
    let (query_table, candidate_table) = load_tables(&tables, oov_flag, config)?;
    checkpoint::load(&ckpt, query_table, candidate_table)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))
}

fn read_smn_file(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        bail!("{} lists no medication names", path.display());
    }
    Ok(names)
}

#[derive(Serialize)]
struct GenReport {
    mode: String,
    n_candidates: usize,
    seed: u64,
    train_fraction: f64,
    corpus_records: usize,
    generated_instances: usize,
    skipped_dmps: usize,
    train_records: usize,
    heldout_records: usize,
    train_instances: usize,
    heldout_instances: usize,
}

pub fn gen_data(
    args: GenDataArgs,
    config: &FileConfig,
    seed: u64,
    output: &Path,
) -> Result<()> {
    let corpus_path = args
        .corpus
        .or_else(|| config.corpus.clone())
        .ok_or_else(|| anyhow::anyhow!("no corpus given: pass --corpus"))?;
    let gazetteer_path = args
        .gazetteer
        .or_else(|| config.gazetteer.clone())
        .ok_or_else(|| anyhow::anyhow!("no gazetteer given: pass --gazetteer"))?;
    validate_inputs(&[("corpus", &corpus_path), ("gazetteer", &gazetteer_path)])?;
    let mode: DmpMode = args
        .dmp_mode
        .or_else(|| config.dmp_mode.clone())
        .unwrap_or_else(|| "entity".to_string())
        .parse()?;
    let n = args.n_candidates.or(config.n_candidates).unwrap_or(2);
    let train_fraction = args
        .train_fraction
        .or(config.train_fraction)
        .unwrap_or(0.7);
    let allowed = parse_allowed_types(&args.allowed_types, config)?;

    let gaz = Gazetteer::load_jsonl(&gazetteer_path)?;
    let mut corpus = PemCorpus::load_jsonl(&corpus_path)?;
    corpus.populate_entity_caches(&gaz, &allowed);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let generated = make_instances(&corpus, n, mode, &mut rng)?;
    let (train_side, heldout_side) = datagen::split(&generated.instances, train_fraction, seed)?;

    std::fs::create_dir_all(output)?;
    let write_side = |file: &str, side: &[SourcedInstance]| -> Result<()> {
        datagen::write_instances_to_path(
            output.join(file),
            side.iter().map(|si| &si.instance),
        )?;
        Ok(())
    };
    write_side("train.jsonl", &train_side)?;
    write_side("heldout.jsonl", &heldout_side)?;

    let records_of = |side: &[SourcedInstance]| {
        side.iter()
            .map(|si| si.group.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    };
    let report = GenReport {
        mode: match mode {
            DmpMode::Entity => "entity".into(),
            DmpMode::Ngram => "ngram".into(),
        },
        n_candidates: n,
        seed,
        train_fraction,
        corpus_records: corpus.len(),
        generated_instances: generated.instances.len(),
        skipped_dmps: generated.skipped_dmps,
        train_records: records_of(&train_side),
        heldout_records: records_of(&heldout_side),
        train_instances: train_side.len(),
        heldout_instances: heldout_side.len(),
    };
    let mut file = std::fs::File::create(output.join("gen_report.json"))?;
    serde_json::to_writer_pretty(&mut file, &report)?;
    file.write_all(b"\n")?;
    info!(
        "wrote {} train / {} heldout instances ({} DMPs skipped)",
        report.train_instances, report.heldout_instances, report.skipped_dmps
    );
    Ok(())
}

pub fn train(args: TrainArgs, config: &FileConfig, seed: u64, output: &Path) -> Result<()> {
    let tables = resolve_tables(
        &args.embeddings,
        &args.query_embeddings,
        &args.candidate_embeddings,
        config,
    )?;
    validate_inputs(&[
        ("query embeddings", &tables.query),
        ("candidate embeddings", &tables.candidate),
        ("train set", &args.train_set),
        ("validation set", &args.val_set),
    ])?;
    let (query_table, candidate_table) = load_tables(&tables, &args.oov_policy, config)?;
    if query_table.dimension() != candidate_table.dimension() {
        bail!(
            "embedding dimensions differ: {} vs {}",
            query_table.dimension(),
            candidate_table.dimension()
        );
    }

    let train_set = read_instances(&args.train_set)?;
    let val_set = read_instances(&args.val_set)?;

    let filters = args.filters.or(config.filters).unwrap_or(200);
    let window = args.window.or(config.window).unwrap_or(2);
    let optimizer = parse_optimizer(
        &args
            .optimizer
            .or_else(|| config.optimizer.clone())
            .unwrap_or_else(|| "sgd".to_string()),
        args.adam_beta1.or(config.adam_beta1).unwrap_or(0.9),
        args.adam_beta2.or(config.adam_beta2).unwrap_or(0.999),
        args.adam_epsilon.or(config.adam_epsilon).unwrap_or(1e-8),
    )?;
    let cfg = TrainingConfig {
        margin: args.margin.or(config.margin).unwrap_or(0.5),
        learning_rate: args.learning_rate.or(config.learning_rate).unwrap_or(0.05),
        batch_size: args.batch_size.or(config.batch_size).unwrap_or(150),
        max_epochs: args.max_epochs.or(config.max_epochs).unwrap_or(20),
        seed,
        optimizer,
    };

    let model = init_params(
        query_table.dimension(),
        filters,
        window,
        seed,
        query_table,
        candidate_table,
    )?;
    let (best, history) = train_model(&train_set, &val_set, model, &cfg)?;

    std::fs::create_dir_all(output)?;
    let ckpt_path = output.join("model.ckpt");
    checkpoint::save(&best, &ckpt_path)?;
    let history_path = output.join("history.csv");
    history.write_csv(std::fs::File::create(&history_path)?)?;
    info!(
        "kept epoch {} of {}; checkpoint {}",
        history.best_epoch,
        history.epochs.len(),
        ckpt_path.display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs, config: &FileConfig) -> Result<()> {
    validate_inputs(&[("dataset", &args.dataset)])?;
    let model = load_model(
        &args.checkpoint,
        &args.embeddings,
        &args.query_embeddings,
        &args.candidate_embeddings,
        &args.oov_policy,
        config,
    )?;
    let dataset = read_instances(&args.dataset)?;
    let n_candidates = dataset.first().map_or(0, |inst| inst.n());
    let dataset_name = args
        .dataset
        .file_stem()
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());

    let modes: Vec<&str> = match args.mode.as_str() {
        "strict" => vec!["strict"],
        "relaxed" => vec!["relaxed"],
        "both" => vec!["strict", "relaxed"],
        other => bail!("unknown mode {other:?}; expected strict, relaxed, or both"),
    };
    let mut csv = String::from("dataset,n_candidates,mode,accuracy,instances\n");
    for mode in modes {
        let accuracy = top1_accuracy(&model, &dataset, mode == "relaxed")?;
        csv.push_str(&format!(
            "{dataset_name},{n_candidates},{mode},{accuracy},{}\n",
            dataset.len()
        ));
    }
    match &args.report {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct RankEntry {
    rank: usize,
    smn: String,
    score: f64,
}

#[derive(Serialize)]
struct RankOutput {
    query_tokens: Vec<String>,
    ranking: Vec<RankEntry>,
}

pub fn rank(args: RankArgs, config: &FileConfig) -> Result<()> {
    let model = load_model(
        &args.checkpoint,
        &args.embeddings,
        &args.query_embeddings,
        &args.candidate_embeddings,
        &args.oov_policy,
        config,
    )?;
    let gazetteer_path = args.gazetteer.clone().or_else(|| config.gazetteer.clone());
    let q: TokenSequence = match &gazetteer_path {
        Some(path) => {
            validate_inputs(&[("gazetteer", path)])?;
            let gaz = Gazetteer::load_jsonl(path)?;
            let allowed = parse_allowed_types(&args.allowed_types, config)?;
            let dmp = build_dmp(&args.query, &gaz, &allowed);
            if dmp.is_empty() {
                warn!("query has no allowed-type entities; scoring the full tokenized query");
                tokenize(&args.query)
            } else {
                dmp
            }
        }
        None => tokenize(&args.query),
    };

    let candidates: Vec<TokenSequence> = args.candidates.iter().map(|c| tokenize(c)).collect();
    let ranking = rank_candidates(&model, &q, &candidates)?;
    let output = RankOutput {
        query_tokens: q.tokens().to_vec(),
        ranking: ranking
            .order
            .iter()
            .enumerate()
            .map(|(pos, &(idx, score))| RankEntry {
                rank: pos + 1,
                smn: args.candidates[idx].clone(),
                score,
            })
            .collect(),
    };
    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(())
}

fn environment_fingerprint() -> String {
    let cpus = std::thread::available_parallelism().map_or(0, |n| n.get());
    let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".to_string());
    format!(
        "# env: os={} arch={} cpus={cpus} cpu=\"{cpu_model}\" medrank={}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        env!("CARGO_PKG_VERSION"),
    )
}

pub fn bench(args: BenchArgs, config: &FileConfig, seed: u64) -> Result<()> {
    let model = load_model(
        &args.checkpoint,
        &args.embeddings,
        &args.query_embeddings,
        &args.candidate_embeddings,
        &args.oov_policy,
        config,
    )?;
    let n = args.n_candidates.or(config.n_candidates).unwrap_or(5);
    let stats = latency_benchmark(&model, n, args.token_len, args.trials, args.warmup, seed)?;
    let csv = format!(
        "{}\nmean_us,p50_us,p95_us,p99_us,trials\n{},{},{},{},{}\n",
        environment_fingerprint(),
        stats.mean_us,
        stats.p50_us,
        stats.p95_us,
        stats.p99_us,
        stats.trials,
    );
    match &args.report {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct ClusterReport {
    k: usize,
    silhouette: f64,
    sweep: Vec<SweepEntry>,
    clusters: Vec<ClusterMembers>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nearby: Option<NearbyReport>,
}

#[derive(Serialize)]
struct SweepEntry {
    k: usize,
    silhouette: f64,
}

#[derive(Serialize)]
struct ClusterMembers {
    id: usize,
    members: Vec<String>,
}

#[derive(Serialize)]
struct NearbyReport {
    anchor: String,
    nearby: Vec<String>,
}

pub fn cluster(args: ClusterArgs, config: &FileConfig, seed: u64, output: &Path) -> Result<()> {
    validate_inputs(&[("smns", &args.smns)])?;
    let model = load_model(
        &args.checkpoint,
        &args.embeddings,
        &args.query_embeddings,
        &args.candidate_embeddings,
        &args.oov_policy,
        config,
    )?;
    let names = read_smn_file(&args.smns)?;
    let seqs: Vec<TokenSequence> = names.iter().map(|n| tokenize(n)).collect();
    let mut vectors = clustering::encode_all(&model, &seqs);
    if args.normalize {
        vectors = clustering::normalize_vectors(&vectors);
    }

    let k_max = args.k_max.unwrap_or_else(|| {
        let cap = names.len().saturating_sub(1);
        cap.min(12).max(args.k_min)
    });
    let report = clustering::silhouette_sweep(&vectors, args.k_min, k_max, seed, args.restarts)?;
    let assignment = clustering::best_of_restarts(
        &vectors,
        report.best_k,
        seed,
        args.restarts,
        clustering::DEFAULT_MAX_ITERS,
    )?;
    let silhouette = report
        .scores
        .iter()
        .find(|&&(k, _)| k == report.best_k)
        .map(|&(_, s)| s)
        .unwrap_or_default();

    let mut clusters: Vec<ClusterMembers> = (0..assignment.k)
        .map(|id| ClusterMembers {
            id,
            members: Vec::new(),
        })
        .collect();
    for (i, &label) in assignment.labels.iter().enumerate() {
        clusters[label].members.push(names[i].clone());
    }
    let nearby = match &args.anchor {
        Some(anchor) => Some(NearbyReport {
            anchor: anchor.clone(),
            nearby: clustering::nearest_in_cluster(
                anchor,
                &names,
                &vectors,
                &assignment,
                args.topk,
            )?,
        }),
        None => None,
    };

    std::fs::create_dir_all(output)?;
    let out = ClusterReport {
        k: report.best_k,
        silhouette,
        sweep: report
            .scores
            .iter()
            .map(|&(k, silhouette)| SweepEntry { k, silhouette })
            .collect(),
        clusters,
        nearby,
    };
    let mut file = std::fs::File::create(output.join("clusters.json"))?;
    serde_json::to_writer_pretty(&mut file, &out)?;
    file.write_all(b"\n")?;
    clustering::export_tsv(
        &vectors,
        &names,
        output.join("vectors.tsv"),
        output.join("names.tsv"),
    )?;
    info!(
        "clustered {} names into {} clusters (silhouette {silhouette:.4})",
        names.len(),
        report.best_k
    );
    Ok(())
}

pub fn export_embeddings(args: ExportArgs, config: &FileConfig, output: &Path) -> Result<()> {
    validate_inputs(&[("smns", &args.smns)])?;
    let model = load_model(
        &args.checkpoint,
        &args.embeddings,
        &args.query_embeddings,
        &args.candidate_embeddings,
        &args.oov_policy,
        config,
    )?;
    let names = read_smn_file(&args.smns)?;
    let seqs: Vec<TokenSequence> = names.iter().map(|n| tokenize(n)).collect();
    let vectors = clustering::encode_all(&model, &seqs);
    std::fs::create_dir_all(output)?;
    clustering::export_tsv(
        &vectors,
        &names,
        output.join("vectors.tsv"),
        output.join("names.tsv"),
    )?;
    info!("exported {} encodings to {}", names.len(), output.display());
    Ok(())
}
