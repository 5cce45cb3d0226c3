//! Candidate ranking, top-1 accuracy, and the latency benchmark.
//!
//! Cosine scores each candidate independently, so sorting by score is the
//! production path. The pairwise tournament realizes the same total order by
//! comparing all `n(n-1)/2` candidate pairs; it is kept as a fidelity oracle
//! and the two must agree whenever scores are distinct.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::DatasetInstance;
use crate::encoder::{cosine_score, encode, ModelParams};
use crate::token::{tokenize, TokenSequence};
use crate::{Error, Result};

/// Candidates ordered by descending score; ties break toward the lower
/// candidate index.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// `(candidate index, score)` pairs, best first.
    pub order: Vec<(usize, f64)>,
}

impl Ranking {
    /// Index of the top-ranked candidate.
    pub fn top1(&self) -> usize {
        self.order[0].0
    }

    fn from_scores(scores: Vec<f64>) -> Self {
        let mut order: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { order }
    }
}

fn candidate_scores(
    model: &ModelParams,
    q: &TokenSequence,
    candidates: &[TokenSequence],
) -> Vec<f64> {
    let qv = encode(q, &model.query_tower, &model.query_table);
    candidates
        .iter()
        .map(|p| {
            let pv = encode(p, &model.candidate_tower, &model.candidate_table);
            cosine_score(qv.view(), pv.view())
        })
        .collect()
}

/// Scores every candidate once against the query and sorts descending.
pub fn rank_candidates(
    model: &ModelParams,
    q: &TokenSequence,
    candidates: &[TokenSequence],
) -> Result<Ranking> {
    if candidates.is_empty() {
        return Err(Error::TooFewCandidates { needed: 1, got: 0 });
    }
    Ok(Ranking::from_scores(candidate_scores(model, q, candidates)))
}

/// Ranks by running all `n(n-1)/2` unordered pair comparisons: a candidate
/// wins a pair when its score is higher (lower index wins ties), and the
/// final order is by descending win count, then index. Returns the ranking
/// and the number of pair comparisons performed.
pub fn pairwise_tournament(
    model: &ModelParams,
    q: &TokenSequence,
    candidates: &[TokenSequence],
) -> Result<(Ranking, usize)> {
    if candidates.len() < 2 {
        return Err(Error::TooFewCandidates {
            needed: 2,
            got: candidates.len(),
        });
    }
    let scores = candidate_scores(model, q, candidates);
    let n = scores.len();
    let mut wins = vec![0usize; n];
    let mut comparisons = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            comparisons += 1;
            if scores[i] >= scores[j] {
                wins[i] += 1;
            } else {
                wins[j] += 1;
            }
        }
    }
    let mut order: Vec<(usize, f64)> = (0..n).map(|i| (i, scores[i])).collect();
    order.sort_by(|a, b| wins[b.0].cmp(&wins[a.0]).then(a.0.cmp(&b.0)));
    Ok((Ranking { order }, comparisons))
}

/// Fraction of instances whose top-ranked candidate is correct.
///
/// Strict mode credits only the labeled positive; relaxed mode credits any
/// member of the instance's valid-answer set, so it is never below strict.
pub fn top1_accuracy(
    model: &ModelParams,
    dataset: &[DatasetInstance],
    relaxed: bool,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits: usize = dataset
        .par_iter()
        .map(|instance| {
            let ranking = rank_candidates(model, &instance.q, &instance.candidates)
                .expect("validated instances have candidates");
            let top = ranking.top1();
            let hit = if relaxed {
                let top_name = instance.candidates[top].joined();
                instance
                    .positive_smns
                    .iter()
                    .any(|smn| tokenize(smn).joined() == top_name)
            } else {
                instance.labels[top] == 1
            };
            usize::from(hit)
        })
        .sum();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Latency statistics in microseconds over the timed trials.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LatencyStats {
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
    pub p99_us: f64,
    pub trials: usize,
}

/// Times `rank_candidates` end-to-end on one thread with pre-built
/// tokenized inputs (`n_candidates` candidates of `token_len` tokens each,
/// sampled from the embedding vocabularies). Warmup iterations run first
/// and are excluded; the monotonic clock does the timing.
pub fn latency_benchmark(
    model: &ModelParams,
    n_candidates: usize,
    token_len: usize,
    trials: usize,
    warmup: usize,
    seed: u64,
) -> Result<LatencyStats> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if n_candidates == 0 || token_len == 0 {
        return Err(Error::InvalidArgument(
            "n_candidates and token_len must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_seq = |rng: &mut ChaCha8Rng, table: &crate::embedding::EmbeddingTable| -> TokenSequence {
        let vocab = table.sorted_tokens();
        let tokens: Vec<String> = (0..token_len)
            .map(|i| {
                if vocab.is_empty() {
                    format!("tok{i}")
                } else {
                    vocab[rng.gen_range(0..vocab.len())].to_string()
                }
            })
            .collect();
        TokenSequence::from_tokens(tokens).expect("vocab tokens are valid")
    };
    let q = sample_seq(&mut rng, &model.query_table);
    let candidates: Vec<TokenSequence> = (0..n_candidates)
        .map(|_| sample_seq(&mut rng, &model.candidate_table))
        .collect();

    for _ in 0..warmup {
        let _ = rank_candidates(model, &q, &candidates)?;
    }
    let mut samples_us = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        let ranking = rank_candidates(model, &q, &candidates)?;
        let elapsed = start.elapsed();
        std::hint::black_box(ranking);
        samples_us.push(elapsed.as_secs_f64() * 1e6);
    }
    samples_us.sort_by(f64::total_cmp);
    let mean_us = samples_us.iter().sum::<f64>() / trials as f64;
    let pct = |p: f64| {
        let rank = ((p / 100.0) * trials as f64).ceil() as usize;
        samples_us[rank.max(1) - 1]
    };
    Ok(LatencyStats {
        mean_us,
        p50_us: pct(50.0),
        p95_us: pct(95.0),
        p99_us: pct(99.0),
        trials,
    })
}
