//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers. Run with
//! `cargo test -p medrank-cli --test acceptance`.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use medrank_core::cluster::{best_of_restarts, silhouette, silhouette_sweep, ClusterAssignment};
use medrank_core::datagen::{
    make_instances, split_groups, DatasetInstance, DmpMode, PemCorpus, PemRecord, SourcedInstance,
};
use medrank_core::embedding::{EmbeddingTable, OovPolicy};
use medrank_core::encoder::{encode, score, ConvTower, ModelParams};
use medrank_core::entity::{EntityType, Gazetteer};
use medrank_core::eval::{pairwise_tournament, rank_candidates, top1_accuracy};
use medrank_core::token::TokenSequence;
use medrank_core::training::{grad_check, init_params, train, Optimizer, TrainingConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn medrank() -> Command {
    Command::new(env!("CARGO_BIN_EXE_medrank"))
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("spawn medrank");
    assert!(
        output.status.success(),
        "command failed: {:?}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn random_fixture_table(tokens: usize, dim: usize, seed: u64) -> Arc<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..tokens)
        .map(|i| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (format!("w{i}"), v)
        })
        .collect::<Vec<_>>();
    Arc::new(EmbeddingTable::from_entries(dim, entries, OovPolicy::Zeros).unwrap())
}

fn random_seq(rng: &mut ChaCha8Rng, vocab: usize, min_len: usize, max_len: usize) -> TokenSequence {
    let len = rng.gen_range(min_len..=max_len);
    TokenSequence::from_tokens((0..len).map(|_| format!("w{}", rng.gen_range(0..vocab)))).unwrap()
}

// --- Criterion 1 -----------------------------------------------------------

#[test]
fn acceptance_01_gradient_correctness() {
    let started = Instant::now();
    let table = random_fixture_table(16, 8, 901);
    let mut rng = ChaCha8Rng::seed_from_u64(902);
    let mut worst = 0.0f64;
    let mut total_checked = 0usize;
    let mut total_excluded = 0usize;
    for fixture in 0..50u64 {
        let model = init_params(8, 6, 2, 1000 + fixture, table.clone(), table.clone()).unwrap();
        let q = random_seq(&mut rng, 16, 2, 6);
        let pos = random_seq(&mut rng, 16, 2, 6);
        let neg = random_seq(&mut rng, 16, 2, 6);
        let report = grad_check(&model, &q, &pos, &neg, 0.5, 1e-5);
        total_checked += report.checked;
        total_excluded += report.excluded;
        worst = worst.max(report.max_relative_error);
        assert!(
            report.max_relative_error < 1e-4,
            "fixture {fixture}: max relative error {}",
            report.max_relative_error
        );
    }
    let elapsed = started.elapsed();
    assert!(total_checked > 0);
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "gradient check took {elapsed:?}"
    );
    println!(
        "criterion 01 gradient-correctness: PASS (50 fixtures, max rel err {worst:.2e}, \
         {total_checked} coords checked, {total_excluded} kink-adjacent excluded, {elapsed:?})"
    );
}

// --- Criterion 2 -----------------------------------------------------------

fn naive_encode(
    tokens: &[String],
    vectors: &HashMap<String, Vec<f64>>,
    dim: usize,
    weights: &[Vec<f64>],
    biases: &[f64],
    window: usize,
) -> Vec<f64> {
    let rows = tokens.len().max(window);
    let mut matrix = vec![vec![0.0; dim]; rows];
    for (i, tok) in tokens.iter().enumerate() {
        if let Some(v) = vectors.get(tok) {
            matrix[i] = v.clone();
        }
    }
    let mut pooled = vec![f64::NEG_INFINITY; weights.len()];
    for t in 0..rows - window + 1 {
        for (f, filter) in weights.iter().enumerate() {
            let mut acc = biases[f];
            for k in 0..window {
                for j in 0..dim {
                    acc += filter[k * dim + j] * matrix[t + k][j];
                }
            }
            let act = acc.max(0.0);
            if act > pooled[f] {
                pooled[f] = act;
            }
        }
    }
    pooled
}

fn naive_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu < 1e-12 || nv < 1e-12 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

#[test]
fn acceptance_02_forward_oracle() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let dim = rng.gen_range(2..=10);
        let filters = rng.gen_range(1..=8);
        let window = rng.gen_range(1..=3);
        let vocab = rng.gen_range(4..=12);
        let mut raw = HashMap::new();
        for i in 0..vocab {
            raw.insert(
                format!("w{i}"),
                (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>(),
            );
        }
        let table = Arc::new(
            EmbeddingTable::from_entries(
                dim,
                raw.iter().map(|(k, v)| (k.clone(), v.clone())),
                OovPolicy::Zeros,
            )
            .unwrap(),
        );
        let tower = |rng: &mut ChaCha8Rng| {
            ConvTower::new(
                window,
                Array2::from_shape_fn((filters, window * dim), |_| rng.gen_range(-1.0..1.0)),
                Array1::from_shape_fn(filters, |_| rng.gen_range(-0.5..0.5)),
            )
            .unwrap()
        };
        let model =
            ModelParams::new(tower(&mut rng), tower(&mut rng), table.clone(), table).unwrap();
        let q = random_seq(&mut rng, vocab, 0, 6);
        let p = random_seq(&mut rng, vocab, 0, 6);

        let to_vecs = |t: &ConvTower| {
            (
                t.weights.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
                t.biases.to_vec(),
            )
        };
        let (qw, qb) = to_vecs(&model.query_tower);
        let (cw, cb) = to_vecs(&model.candidate_tower);
        let expect_q = naive_encode(q.tokens(), &raw, dim, &qw, &qb, window);
        let expect_p = naive_encode(p.tokens(), &raw, dim, &cw, &cb, window);
        let got_q = encode(&q, &model.query_tower, &model.query_table);
        let got_p = encode(&p, &model.candidate_tower, &model.candidate_table);
        for (g, e) in got_q.iter().zip(&expect_q).chain(got_p.iter().zip(&expect_p)) {
            worst = worst.max((g - e).abs());
        }
        worst = worst.max((score(&model, &q, &p) - naive_cosine(&expect_q, &expect_p)).abs());
        assert!(worst < 1e-10, "seed {seed}: forward error {worst}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "forward oracle took {elapsed:?}");
    println!(
        "criterion 02 forward-oracle: PASS (100 fixtures, max abs err {worst:.2e}, {elapsed:?})"
    );
}

// --- Shared toy-pipeline helpers -------------------------------------------

fn load_toy_corpus(noise_seed: Option<u64>) -> PemCorpus {
    let gaz = Gazetteer::load_jsonl(data_path("toy_gazetteer.jsonl")).unwrap();
    let allowed: BTreeSet<EntityType> = EntityType::ALL.into_iter().collect();
    let base = PemCorpus::load_jsonl(data_path("toy_corpus.jsonl")).unwrap();
    let mut corpus = match noise_seed {
        None => base,
        Some(seed) => {
            // Pad every uses text with 24 distractor tokens at random
            // positions; the gazetteer phrases survive intact.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let records = base
                .records()
                .iter()
                .map(|r| {
                    let mut words: Vec<String> =
                        r.uses_text.split(' ').map(str::to_string).collect();
                    for _ in 0..24 {
                        let tok = format!("nz{:02}", rng.gen_range(1..=40));
                        let pos = rng.gen_range(0..=words.len());
                        words.insert(pos, tok);
                    }
                    PemRecord::new(r.generic_name.clone(), words.join(" "))
                })
                .collect();
            PemCorpus::from_records(records).unwrap()
        }
    };
    corpus.populate_entity_caches(&gaz, &allowed);
    corpus
}

fn toy_training_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        margin: 1.0,
        learning_rate: 0.1,
        batch_size: 16,
        max_epochs: 150,
        seed,
        optimizer: Optimizer::Sgd,
    }
}

struct TrainedPipeline {
    model: ModelParams,
    heldout_by_n: Vec<(usize, Vec<DatasetInstance>)>,
}

/// Generates an n=2 dataset, splits 70/30 by record, trains on the train
/// side, and builds heldout evaluation sets for n in 2..=5.
fn train_toy_pipeline(corpus: &PemCorpus, mode: DmpMode, seed: u64) -> TrainedPipeline {
    let table = Arc::new(EmbeddingTable::load(data_path("toy_embeddings.vec")).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen2 = make_instances(corpus, 2, mode, &mut rng).unwrap();
    let mut groups: Vec<String> = Vec::new();
    for si in &gen2.instances {
        if !groups.contains(&si.group) {
            groups.push(si.group.clone());
        }
    }
    let (train_groups, _) = split_groups(&groups, 0.7, seed).unwrap();
    let partition = |insts: &[SourcedInstance]| {
        let mut train_side = Vec::new();
        let mut heldout_side = Vec::new();
        for si in insts {
            if train_groups.contains(&si.group) {
                train_side.push(si.instance.clone());
            } else {
                heldout_side.push(si.instance.clone());
            }
        }
        (train_side, heldout_side)
    };
    let (train_set, heldout2) = partition(&gen2.instances);

    let model = init_params(24, 32, 2, seed, table.clone(), table.clone()).unwrap();
    let (best, _) = train(&train_set, &heldout2, model, &toy_training_config(seed)).unwrap();

    let mut heldout_by_n = vec![(2usize, heldout2)];
    for n in 3..=5usize {
        let mut rng_n = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7000 + n as u64));
        let gen_n = make_instances(corpus, n, mode, &mut rng_n).unwrap();
        let (_, heldout_n) = partition(&gen_n.instances);
        heldout_by_n.push((n, heldout_n));
    }
    TrainedPipeline {
        model: best,
        heldout_by_n,
    }
}

fn heldout_accuracy_by_n(corpus: &PemCorpus, mode: DmpMode, seed: u64) -> Vec<f64> {
    let pipeline = train_toy_pipeline(corpus, mode, seed);
    pipeline
        .heldout_by_n
        .iter()
        .map(|(_, set)| top1_accuracy(&pipeline.model, set, false).unwrap())
        .collect()
}

// --- Criterion 3 -----------------------------------------------------------

#[test]
fn acceptance_03_learnability() {
    let started = Instant::now();
    let corpus = load_toy_corpus(None);
    let mut accs = Vec::new();
    for seed in [1u64, 2, 3] {
        let pipeline = train_toy_pipeline(&corpus, DmpMode::Entity, seed);
        let (_, heldout2) = &pipeline.heldout_by_n[0];
        let acc = top1_accuracy(&pipeline.model, heldout2, false).unwrap();
        assert!(
            acc >= 0.95,
            "seed {seed}: heldout top-1 accuracy {acc} below 0.95"
        );
        accs.push(acc);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "learnability took {elapsed:?}");
    println!(
        "criterion 03 learnability: PASS (heldout top-1 {accs:?} across seeds 1-3, {elapsed:?})"
    );
}

// --- Criterion 4 -----------------------------------------------------------

#[test]
fn acceptance_04_entity_attention_trend() {
    let started = Instant::now();
    let seeds = [1u64, 2, 3, 4, 5];
    let mut entity_mean = [0.0f64; 4];
    let mut ngram_mean = [0.0f64; 4];
    for &seed in &seeds {
        let noisy = load_toy_corpus(Some(900 + seed));
        for (sums, mode) in [
            (&mut entity_mean, DmpMode::Entity),
            (&mut ngram_mean, DmpMode::Ngram),
        ] {
            let accs = heldout_accuracy_by_n(&noisy, mode, seed);
            for (slot, acc) in sums.iter_mut().zip(&accs) {
                *slot += acc / seeds.len() as f64;
            }
        }
    }
    for (i, n) in (2..=5usize).enumerate() {
        assert!(
            entity_mean[i] > ngram_mean[i],
            "n={n}: entity {} does not beat ngram {}",
            entity_mean[i],
            ngram_mean[i]
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "trend took {elapsed:?}");
    println!(
        "criterion 04 entity-attention-trend: PASS (5-seed mean accuracy, noisy corpus, \
         entity {entity_mean:?} vs ngram {ngram_mean:?} for n=2..5, {elapsed:?})"
    );
}

// --- Criterion 5 -----------------------------------------------------------

#[test]
fn acceptance_05_candidate_count_trend() {
    let started = Instant::now();
    let corpus = load_toy_corpus(None);
    let seeds = [1u64, 2, 3, 4, 5];
    let mut mean = [0.0f64; 4];
    for &seed in &seeds {
        let accs = heldout_accuracy_by_n(&corpus, DmpMode::Entity, seed);
        for (slot, acc) in mean.iter_mut().zip(&accs) {
            *slot += acc / seeds.len() as f64;
        }
    }
    for i in 0..3 {
        assert!(
            mean[i + 1] <= mean[i] + 0.02,
            "accuracy rose from n={} ({}) to n={} ({}) by more than 2 points",
            i + 2,
            mean[i],
            i + 3,
            mean[i + 1]
        );
    }
    let elapsed = started.elapsed();
    println!(
        "criterion 05 candidate-count-trend: PASS (5-seed mean heldout accuracy {mean:?} \
         for n=2..5, {elapsed:?})"
    );
}

// --- Criterion 6 -----------------------------------------------------------

#[test]
fn acceptance_06_ranking_protocol_equivalence() {
    let table = random_fixture_table(40, 6, 600);
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let mut checked = 0usize;
    let mut model_seed = 0u64;
    while checked < 1000 {
        model_seed += 1;
        let model = init_params(6, 5, 2, model_seed, table.clone(), table.clone()).unwrap();
        let q = random_seq(&mut rng, 40, 1, 4);
        let candidates: Vec<TokenSequence> =
            (0..5).map(|_| random_seq(&mut rng, 40, 1, 3)).collect();
        let sorted = rank_candidates(&model, &q, &candidates).unwrap();
        let scores: Vec<f64> = {
            let mut by_index = sorted.order.clone();
            by_index.sort_by_key(|&(i, _)| i);
            by_index.into_iter().map(|(_, s)| s).collect()
        };
        let distinct = (0..scores.len()).all(|i| {
            (i + 1..scores.len()).all(|j| (scores[i] - scores[j]).abs() > 1e-12)
        });
        if !distinct {
            continue;
        }
        let (tourney, comparisons) = pairwise_tournament(&model, &q, &candidates).unwrap();
        assert_eq!(comparisons, 10, "n=5 must compare exactly 10 pairs");
        assert_eq!(
            tourney.order, sorted.order,
            "orderings diverged on fixture {checked}"
        );
        checked += 1;
    }
    println!(
        "criterion 06 ranking-protocol-equivalence: PASS (1000 distinct-score fixtures, \
         10 comparisons each at n=5)"
    );
}

// --- Criterion 7 -----------------------------------------------------------

#[test]
fn acceptance_07_latency() {
    let dir = tempfile::tempdir().unwrap();
    // Production-scale shapes: 200-dimensional embeddings, 200 filters, window 2.
    let vec_path = dir.path().join("bench.vec");
    let mut text = String::from("300 200\n");
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    for i in 0..300 {
        let v: Vec<String> = (0..200)
            .map(|_| format!("{:.6}", rng.gen_range(-1.0..1.0)))
            .collect();
        text.push_str(&format!("w{i} {}\n", v.join(" ")));
    }
    std::fs::write(&vec_path, text).unwrap();
    let table = Arc::new(EmbeddingTable::load(&vec_path).unwrap());
    let model = init_params(200, 200, 2, 7, table.clone(), table).unwrap();
    let ckpt = dir.path().join("model.ckpt");
    medrank_core::checkpoint::save(&model, &ckpt).unwrap();

    let report_path = dir.path().join("bench.csv");
    run_ok(
        medrank()
            .args(["bench", "--checkpoint"])
            .arg(&ckpt)
            .arg("--embeddings")
            .arg(&vec_path)
            .args([
                "--n-candidates",
                "5",
                "--token-len",
                "16",
                "--trials",
                "300",
                "--warmup",
                "30",
                "--threads",
                "1",
                "--seed",
                "7",
            ])
            .arg("--report")
            .arg(&report_path),
    );
    let report = std::fs::read_to_string(&report_path).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert!(
        lines[0].starts_with("# env:"),
        "missing environment fingerprint: {report}"
    );
    assert_eq!(lines[1], "mean_us,p50_us,p95_us,p99_us,trials");
    let fields: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
    let mean_us = fields[0];
    assert!(
        mean_us < 10_000.0,
        "mean latency {mean_us} us is not under 10 ms"
    );
    println!(
        "criterion 07 latency: PASS (mean {:.1} us, p95 {:.1} us for 5 candidates at d=200, \
         F=200; fingerprint {})",
        mean_us, fields[2], lines[0]
    );
}

// --- Criterion 8 -----------------------------------------------------------

#[test]
fn acceptance_08_clustering_oracle() {
    // Hand-derived silhouette on the 4-point 1-D fixture.
    let points: Vec<Array1<f64>> = [0.0, 1.0, 10.0, 11.0]
        .iter()
        .map(|&x| Array1::from(vec![x]))
        .collect();
    let assignment = ClusterAssignment {
        k: 2,
        labels: vec![0, 0, 1, 1],
        centroids: Array2::zeros((2, 1)),
        inertia: 0.0,
    };
    let got = silhouette(&points, &assignment).unwrap();
    let expected = (9.5 / 10.5 + 8.5 / 9.5) / 2.0; // = 0.8997493734...
    assert!(
        (got - expected).abs() < 1e-6,
        "silhouette {got} vs hand-derived {expected}"
    );

    // Planted-k recovery on 4 well-separated blobs, 20/20 seeds.
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let mut vectors = Vec::new();
        for b in 0..4 {
            let cx = (b % 2) as f64 * 60.0;
            let cy = (b / 2) as f64 * 60.0;
            for _ in 0..10 {
                vectors.push(Array1::from(vec![
                    cx + rng.gen_range(-1.0..1.0),
                    cy + rng.gen_range(-1.0..1.0),
                ]));
            }
        }
        let report = silhouette_sweep(&vectors, 2, 8, seed, 10).unwrap();
        assert_eq!(report.best_k, 4, "seed {seed} failed to recover k=4");
    }

    // Exhaustive-optimal inertia on small fixtures.
    for (n, k, seed) in [(10usize, 2usize, 81u64), (12, 3, 82), (9, 3, 83)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors: Vec<Array1<f64>> = (0..n)
            .map(|_| Array1::from(vec![rng.gen_range(-4..=4) as f64, rng.gen_range(-4..=4) as f64]))
            .collect();
        let optimal = exhaustive_inertia(&vectors, k);
        let fit = best_of_restarts(&vectors, k, seed, 20, 200).unwrap();
        assert!(
            (fit.inertia - optimal).abs() < 1e-9,
            "n={n} k={k}: {} vs optimal {optimal}",
            fit.inertia
        );
    }
    println!(
        "criterion 08 clustering-oracle: PASS (silhouette {got:.10} vs {expected:.10}, \
         planted k recovered 20/20, exhaustive-optimal inertia matched)"
    );
}

fn exhaustive_inertia(points: &[Array1<f64>], k: usize) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let mut inertia = 0.0;
        for (p, &l) in points.iter().zip(&labels) {
            for (j, x) in p.iter().enumerate() {
                let c = sums[l][j] / counts[l] as f64;
                inertia += (x - c) * (x - c);
            }
        }
        best = best.min(inertia);
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

// --- Criterion 9 -----------------------------------------------------------

#[test]
fn acceptance_09_frozen_embeddings() {
    // In-memory: the table digests are identical before and after training.
    let corpus = load_toy_corpus(None);
    let table = Arc::new(EmbeddingTable::load(data_path("toy_embeddings.vec")).unwrap());
    let digest = |t: &EmbeddingTable| {
        let mut acc: Vec<u8> = Vec::new();
        for tok in t.sorted_tokens() {
            acc.extend(tok.as_bytes());
            for v in t.vector(tok) {
                acc.extend(v.to_le_bytes());
            }
        }
        acc
    };
    let before = digest(&table);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gen = make_instances(&corpus, 2, DmpMode::Entity, &mut rng).unwrap();
    let instances: Vec<DatasetInstance> =
        gen.instances.into_iter().map(|si| si.instance).collect();
    let model = init_params(24, 32, 2, 1, table.clone(), table.clone()).unwrap();
    let (best, _) = train(&instances, &instances, model, &toy_training_config(1)).unwrap();
    assert_eq!(digest(&table), before, "table mutated in memory");
    assert_eq!(digest(&best.query_table), before);
    assert_eq!(digest(&best.candidate_table), before);

    // On disk: a full CLI training run leaves the embedding file untouched.
    let dir = tempfile::tempdir().unwrap();
    let file_before = std::fs::read(data_path("toy_embeddings.vec")).unwrap();
    run_ok(
        medrank()
            .args(["gen-data", "--corpus"])
            .arg(data_path("toy_corpus.jsonl"))
            .arg("--gazetteer")
            .arg(data_path("toy_gazetteer.jsonl"))
            .args(["--n-candidates", "2", "--seed", "1", "--output"])
            .arg(dir.path()),
    );
    run_ok(
        medrank()
            .args(["train", "--embeddings"])
            .arg(data_path("toy_embeddings.vec"))
            .arg("--train-set")
            .arg(dir.path().join("train.jsonl"))
            .arg("--val-set")
            .arg(dir.path().join("heldout.jsonl"))
            .args([
                "--filters", "32", "--window", "2", "--margin", "1.0", "--learning-rate",
                "0.1", "--batch-size", "16", "--max-epochs", "20", "--seed", "1", "--output",
            ])
            .arg(dir.path()),
    );
    let file_after = std::fs::read(data_path("toy_embeddings.vec")).unwrap();
    assert_eq!(file_before, file_after, "embedding file changed on disk");
    println!("criterion 09 frozen-embeddings: PASS (table digest and file bytes unchanged)");
}

// --- Criterion 10 ----------------------------------------------------------

#[test]
fn acceptance_10_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let run_all = |tag: &str| -> Vec<(String, Vec<u8>)> {
        let out = dir.path().join(tag);
        std::fs::create_dir_all(&out).unwrap();
        run_ok(
            medrank()
                .args(["gen-data", "--corpus"])
                .arg(data_path("toy_corpus.jsonl"))
                .arg("--gazetteer")
                .arg(data_path("toy_gazetteer.jsonl"))
                .args(["--n-candidates", "2", "--seed", "11", "--output"])
                .arg(&out),
        );
        run_ok(
            medrank()
                .args(["train", "--embeddings"])
                .arg(data_path("toy_embeddings.vec"))
                .arg("--train-set")
                .arg(out.join("train.jsonl"))
                .arg("--val-set")
                .arg(out.join("heldout.jsonl"))
                .args([
                    "--filters", "16", "--window", "2", "--margin", "1.0",
                    "--learning-rate", "0.1", "--batch-size", "16", "--max-epochs", "25",
                    "--seed", "11", "--output",
                ])
                .arg(&out),
        );
        run_ok(
            medrank()
                .args(["eval", "--checkpoint"])
                .arg(out.join("model.ckpt"))
                .arg("--embeddings")
                .arg(data_path("toy_embeddings.vec"))
                .arg("--dataset")
                .arg(out.join("heldout.jsonl"))
                .args(["--mode", "both"])
                .arg("--report")
                .arg(out.join("eval.csv")),
        );
        let smns = out.join("smns.txt");
        let names: Vec<String> = std::fs::read_to_string(data_path("toy_corpus.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                serde_json::from_str::<serde_json::Value>(l).unwrap()["generic_name"]
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect();
        std::fs::write(&smns, names.join("\n") + "\n").unwrap();
        run_ok(
            medrank()
                .args(["cluster", "--checkpoint"])
                .arg(out.join("model.ckpt"))
                .arg("--embeddings")
                .arg(data_path("toy_embeddings.vec"))
                .arg("--smns")
                .arg(&smns)
                .args(["--k-min", "2", "--k-max", "10", "--restarts", "5", "--seed", "11"])
                .args(["--normalize", "--output"])
                .arg(&out),
        );
        [
            "train.jsonl",
            "heldout.jsonl",
            "gen_report.json",
            "model.ckpt",
            "history.csv",
            "eval.csv",
            "clusters.json",
            "vectors.tsv",
            "names.tsv",
        ]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(out.join(f)).unwrap()))
        .collect()
    };

    let first = run_all("a");
    let second = run_all("b");
    for ((name, bytes_a), (_, bytes_b)) in first.iter().zip(&second) {
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical runs");
    }
    println!(
        "criterion 10 reproducibility: PASS (gen-data, train, eval, cluster byte-identical \
         across two seeded runs; {} files compared)",
        first.len()
    );
}
