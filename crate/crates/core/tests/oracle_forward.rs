//! Forward-pass oracle: the production encode/score path (windowed matrix
//! products) must match a straight-line scalar reimplementation of
//! embed -> conv -> relu -> max-pool -> cosine on random fixtures.

use std::collections::HashMap;
use std::sync::Arc;

use medrank_core::embedding::{EmbeddingTable, OovPolicy};
use medrank_core::encoder::{encode, score, ConvTower, ModelParams};
use medrank_core::token::TokenSequence;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scalar reference: no shared code with the library's linear algebra.
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
    let out_rows = rows - window + 1;
    let num_filters = weights.len();
    let mut pooled = vec![f64::NEG_INFINITY; num_filters];
    for t in 0..out_rows {
        for (f, filter) in weights.iter().enumerate() {
            let mut acc = biases[f];
            for k in 0..window {
                for j in 0..dim {
                    acc += filter[k * dim + j] * matrix[t + k][j];
                }
            }
            let act = if acc > 0.0 { acc } else { 0.0 };
            if act > pooled[f] {
                pooled[f] = act;
            }
        }
    }
    pooled
}

fn naive_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu < 1e-12 || nv < 1e-12 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

struct Fixture {
    model: ModelParams,
    raw_vectors: HashMap<String, Vec<f64>>,
    q: TokenSequence,
    p: TokenSequence,
}

fn random_fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(2..=8);
    let filters = rng.gen_range(1..=6);
    let window = rng.gen_range(1..=3);
    let vocab_size = rng.gen_range(3..=10);

    let mut raw_vectors = HashMap::new();
    for i in 0..vocab_size {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        raw_vectors.insert(format!("w{i}"), v);
    }
    let table = Arc::new(
        EmbeddingTable::from_entries(
            dim,
            raw_vectors.iter().map(|(k, v)| (k.clone(), v.clone())),
            OovPolicy::Zeros,
        )
        .unwrap(),
    );

    let tower = |rng: &mut ChaCha8Rng| {
        let weights =
            Array2::from_shape_fn((filters, window * dim), |_| rng.gen_range(-1.0..1.0));
        let biases = Array1::from_shape_fn(filters, |_| rng.gen_range(-0.5..0.5));
        ConvTower::new(window, weights, biases).unwrap()
    };
    let query_tower = tower(&mut rng);
    let candidate_tower = tower(&mut rng);
    let model = ModelParams::new(query_tower, candidate_tower, table.clone(), table).unwrap();

    // Include empty sequences and unknown (OOV) tokens.
    let sample_seq = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(0..=6);
        let toks: Vec<String> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.15) {
                    "zzz-unknown".to_string()
                } else {
                    format!("w{}", rng.gen_range(0..vocab_size))
                }
            })
            .collect();
        TokenSequence::from_tokens(toks).unwrap()
    };
    let q = sample_seq(&mut rng);
    let p = sample_seq(&mut rng);
    Fixture {
        model,
        raw_vectors,
        q,
        p,
    }
}

fn tower_as_vecs(tower: &ConvTower) -> (Vec<Vec<f64>>, Vec<f64>) {
    let weights = tower
        .weights
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    (weights, tower.biases.to_vec())
}

#[test]
fn encode_and_score_match_naive_reimplementation_on_100_fixtures() {
    let mut max_err: f64 = 0.0;
    for seed in 0..100u64 {
        let fx = random_fixture(seed);
        let (qw, qb) = tower_as_vecs(&fx.model.query_tower);
        let (cw, cb) = tower_as_vecs(&fx.model.candidate_tower);
        let dim = fx.model.dim;
        let window = fx.model.query_tower.window;

        let expected_q = naive_encode(fx.q.tokens(), &fx.raw_vectors, dim, &qw, &qb, window);
        let got_q = encode(&fx.q, &fx.model.query_tower, &fx.model.query_table);
        for (g, e) in got_q.iter().zip(&expected_q) {
            max_err = max_err.max((g - e).abs());
        }

        let expected_p = naive_encode(
            fx.p.tokens(),
            &fx.raw_vectors,
            dim,
            &cw,
            &cb,
            fx.model.candidate_tower.window,
        );
        let got_p = encode(&fx.p, &fx.model.candidate_tower, &fx.model.candidate_table);
        for (g, e) in got_p.iter().zip(&expected_p) {
            max_err = max_err.max((g - e).abs());
        }

        let expected_score = naive_cosine(&expected_q, &expected_p);
        let got_score = score(&fx.model, &fx.q, &fx.p);
        max_err = max_err.max((got_score - expected_score).abs());

        assert!(
            max_err < 1e-10,
            "seed {seed}: forward diverged from the naive oracle by {max_err}"
        );
    }
}

#[test]
fn encode_output_is_finite_with_f_components() {
    for seed in 100..140u64 {
        let fx = random_fixture(seed);
        let v = encode(&fx.q, &fx.model.query_tower, &fx.model.query_table);
        assert_eq!(v.len(), fx.model.num_filters());
        assert!(v.iter().all(|x| x.is_finite()));
    }
}
