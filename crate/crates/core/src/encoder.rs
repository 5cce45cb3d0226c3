//! The two-tower forward pass: per-tower convolution + max pooling to a
//! fixed vector, and cosine scoring between the query-tower output and each
//! candidate-tower output.
//!
//! Both towers are single convolution layers (stride 1, ReLU) over frozen
//! word embeddings. They never share parameters; they meet only at the
//! cosine head, so their filter counts must match.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::embedding::{embed, EmbeddingTable};
use crate::token::TokenSequence;
use crate::{Error, Result};

/// Norms below this are treated as zero vectors when scoring; the cosine of
/// a zero vector is defined as 0 so rankings are never poisoned by NaN.
pub const ZERO_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
        }
    }
}

/// One tower: `num_filters` convolution filters of `window` tokens each.
///
/// `weights` is `num_filters x (window * dim)`; row `f` is filter `f`
/// flattened over its window (token-major, so the first `dim` entries weight
/// the window's first token).
#[derive(Debug, Clone)]
pub struct ConvTower {
    pub num_filters: usize,
    pub window: usize,
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl ConvTower {
    pub fn new(window: usize, weights: Array2<f64>, biases: Array1<f64>) -> Result<Self> {
        let num_filters = weights.nrows();
        if num_filters == 0 || window == 0 {
            return Err(Error::InvalidArgument(
                "tower needs at least one filter and a window of at least 1".into(),
            ));
        }
        if biases.len() != num_filters {
            return Err(Error::InvalidArgument(format!(
                "{} filters but {} biases",
                num_filters,
                biases.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("tower weights"));
        }
        if biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("tower biases"));
        }
        Ok(Self {
            num_filters,
            window,
            weights,
            biases,
            activation: Activation::Relu,
        })
    }

    /// Embedding dimension this tower consumes.
    pub fn input_dim(&self) -> usize {
        self.weights.ncols() / self.window
    }
}

/// The full model: two distinct towers plus references to the frozen
/// embedding tables they read. The tables may be the same `Arc` (the
/// default) or point at different files.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub query_tower: ConvTower,
    pub candidate_tower: ConvTower,
    pub query_table: Arc<EmbeddingTable>,
    pub candidate_table: Arc<EmbeddingTable>,
    pub dim: usize,
}

impl ModelParams {
    pub fn new(
        query_tower: ConvTower,
        candidate_tower: ConvTower,
        query_table: Arc<EmbeddingTable>,
        candidate_table: Arc<EmbeddingTable>,
    ) -> Result<Self> {
        if query_tower.num_filters != candidate_tower.num_filters {
            return Err(Error::FilterCountMismatch {
                query: query_tower.num_filters,
                candidate: candidate_tower.num_filters,
            });
        }
        let dim = query_table.dimension();
        if candidate_table.dimension() != dim {
            return Err(Error::DimensionMismatch {
                what: "candidate embedding table".into(),
                dim,
            });
        }
        for (tower, name) in [(&query_tower, "query tower"), (&candidate_tower, "candidate tower")]
        {
            if tower.weights.ncols() != tower.window * dim {
                return Err(Error::DimensionMismatch {
                    what: format!(
                        "{name} weights ({} columns, window {})",
                        tower.weights.ncols(),
                        tower.window
                    ),
                    dim,
                });
            }
        }
        Ok(Self {
            query_tower,
            candidate_tower,
            query_table,
            candidate_table,
            dim,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.query_tower.num_filters
    }
}

/// Stacks the `window`-row sliding windows of `input` into an
/// `(L - w + 1) x (w * d)` matrix so the convolution is one matrix product.
fn window_matrix(input: ArrayView2<'_, f64>, window: usize) -> Array2<f64> {
    let (rows, dim) = input.dim();
    let out_rows = rows - window + 1;
    let mut out = Array2::zeros((out_rows, window * dim));
    for t in 0..out_rows {
        for k in 0..window {
            let src = input.row(t + k);
            out.row_mut(t)
                .slice_mut(ndarray::s![k * dim..(k + 1) * dim])
                .assign(&src);
        }
    }
    out
}

fn conv_preactivation(input: ArrayView2<'_, f64>, tower: &ConvTower) -> Result<Array2<f64>> {
    let rows = input.nrows();
    if rows < tower.window {
        return Err(Error::InputShorterThanWindow {
            rows,
            window: tower.window,
        });
    }
    let windows = window_matrix(input, tower.window);
    let mut pre = windows.dot(&tower.weights.t());
    pre += &tower.biases.view().insert_axis(Axis(0));
    Ok(pre)
}

/// Convolves `input` (`L x d`) with the tower's filters at stride 1 and
/// applies the activation, giving an `(L - w + 1) x F` feature matrix.
/// Fails when `L < w`; callers pad via `embed`'s `min_len`.
pub fn conv_forward(input: ArrayView2<'_, f64>, tower: &ConvTower) -> Result<Array2<f64>> {
    let mut features = conv_preactivation(input, tower)?;
    features.mapv_inplace(|x| tower.activation.apply(x));
    Ok(features)
}

/// Column-wise max over the feature rows, plus the argmax row per column
/// (gradient routing needs it). Ties keep the lowest row index.
pub fn max_pool(features: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Vec<usize>)> {
    let (rows, cols) = features.dim();
    if rows == 0 {
        return Err(Error::EmptyPoolInput);
    }
    let mut pooled = Array1::zeros(cols);
    let mut argmax = vec![0usize; cols];
    for f in 0..cols {
        let mut best = features[(0, f)];
        let mut best_row = 0;
        for t in 1..rows {
            let v = features[(t, f)];
            if v > best {
                best = v;
                best_row = t;
            }
        }
        pooled[f] = best;
        argmax[f] = best_row;
    }
    Ok((pooled, argmax))
}

/// Everything the backward pass needs from one tower evaluation.
pub(crate) struct TowerForward {
    /// `(T x (w * d))` stacked convolution windows.
    pub windows: Array2<f64>,
    /// `(T x F)` pre-activation values.
    pub pre: Array2<f64>,
    /// Pooled `F`-vector (post-activation).
    pub pooled: Array1<f64>,
    /// Argmax row per filter.
    pub argmax: Vec<usize>,
}

pub(crate) fn forward_tower(
    seq: &TokenSequence,
    tower: &ConvTower,
    table: &EmbeddingTable,
) -> TowerForward {
    let input = embed(seq, table, tower.window);
    let windows = window_matrix(input.view(), tower.window);
    let mut pre = windows.dot(&tower.weights.t());
    pre += &tower.biases.view().insert_axis(Axis(0));
    let act = pre.mapv(|x| tower.activation.apply(x));
    let (pooled, argmax) = max_pool(act.view()).expect("padded input always has a window");
    TowerForward {
        windows,
        pre,
        pooled,
        argmax,
    }
}

/// Encodes a token sequence to a fixed `F`-vector:
/// `max_pool(conv_forward(embed(seq, table, w), tower))`. Sequences shorter
/// than the window are padded internally, so this never fails.
pub fn encode(seq: &TokenSequence, tower: &ConvTower, table: &EmbeddingTable) -> Array1<f64> {
    forward_tower(seq, tower, table).pooled
}

/// Cosine similarity in `[-1, 1]`. Either vector with near-zero norm gives
/// the neutral score 0.
pub fn cosine_score(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine inputs must have equal length");
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu < ZERO_NORM_EPS || nv < ZERO_NORM_EPS {
        return 0.0;
    }
    u.dot(&v) / (nu * nv)
}

/// Scores one (query, candidate) pair through both towers.
pub fn score(model: &ModelParams, q: &TokenSequence, p: &TokenSequence) -> f64 {
    let qv = encode(q, &model.query_tower, &model.query_table);
    let pv = encode(p, &model.candidate_tower, &model.candidate_table);
    cosine_score(qv.view(), pv.view())
}
