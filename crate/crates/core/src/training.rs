//! Pairwise hinge-loss training of the two convolution towers.
//!
//! Embeddings stay frozen; only convolution weights and biases learn. The
//! backward pass is analytic (max-pool routes gradient to argmax rows, ReLU
//! gates at non-positive pre-activations, the hinge is flat once the margin
//! is met) and is verified against central finite differences by
//! [`grad_check`].

use std::io::{self, Write};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::DatasetInstance;
use crate::embedding::EmbeddingTable;
use crate::encoder::{forward_tower, ConvTower, ModelParams, TowerForward, ZERO_NORM_EPS};
use crate::eval::top1_accuracy;
use crate::token::TokenSequence;
use crate::{Error, Result};

/// Gradient update rule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam_default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Training hyperparameters.
///
/// Cosine scores live in `[-1, 1]`, so margins above 2 are unsatisfiable
/// and rejected. A zero learning rate is allowed (useful as a smoke test:
/// the returned weights are bitwise the initial ones).
#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            learning_rate: 0.05,
            batch_size: 150,
            max_epochs: 20,
            seed: 42,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin <= 2.0) {
            return Err(Error::InvalidConfig(format!(
                "margin {} must be in (0, 2]",
                self.margin
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Gradients for one tower, same shapes as its weights and biases.
#[derive(Debug, Clone)]
pub struct TowerGrads {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl TowerGrads {
    fn zeros_like(tower: &ConvTower) -> Self {
        Self {
            weights: Array2::zeros(tower.weights.dim()),
            biases: Array1::zeros(tower.biases.len()),
        }
    }

    fn add_assign(&mut self, other: &TowerGrads) {
        self.weights += &other.weights;
        self.biases += &other.biases;
    }

    fn scale(&mut self, factor: f64) {
        self.weights *= factor;
        self.biases *= factor;
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|&g| g == 0.0) && self.biases.iter().all(|&g| g == 0.0)
    }
}

/// Gradients for the whole model.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub query: TowerGrads,
    pub candidate: TowerGrads,
}

impl GradientSet {
    pub fn zeros_like(model: &ModelParams) -> Self {
        Self {
            query: TowerGrads::zeros_like(&model.query_tower),
            candidate: TowerGrads::zeros_like(&model.candidate_tower),
        }
    }

    fn add_assign(&mut self, other: &GradientSet) {
        self.query.add_assign(&other.query);
        self.candidate.add_assign(&other.candidate);
    }

    fn scale(&mut self, factor: f64) {
        self.query.scale(factor);
        self.candidate.scale(factor);
    }

    pub fn is_zero(&self) -> bool {
        self.query.is_zero() && self.candidate.is_zero()
    }
}

/// `max(0, margin - s_pos + s_neg)`: zero once the positive beats the
/// negative by at least the margin.
pub fn hinge_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (margin - s_pos + s_neg).max(0.0)
}

/// Gradient of `cos(u, v)` with respect to `u`. Zero when either norm is
/// below the scoring guard, matching the forward definition (constant 0).
fn cosine_grad_wrt_first(u: &Array1<f64>, v: &Array1<f64>) -> Array1<f64> {
    let nu = u.dot(u).sqrt();
    let nv = v.dot(v).sqrt();
    if nu < ZERO_NORM_EPS || nv < ZERO_NORM_EPS {
        return Array1::zeros(u.len());
    }
    let cos = u.dot(v) / (nu * nv);
    v / (nu * nv) - &(u * (cos / (nu * nu)))
}

fn tower_backward(fwd: &TowerForward, dpooled: &Array1<f64>, tower: &ConvTower) -> TowerGrads {
    let mut grads = TowerGrads::zeros_like(tower);
    for f in 0..tower.num_filters {
        let g = dpooled[f];
        if g == 0.0 {
            continue;
        }
        let t = fwd.argmax[f];
        // ReLU gates the gradient; the subgradient at exactly 0 is 0.
        if fwd.pre[(t, f)] > 0.0 {
            let window = fwd.windows.row(t);
            grads
                .weights
                .row_mut(f)
                .iter_mut()
                .zip(window)
                .for_each(|(w, x)| *w += g * x);
            grads.biases[f] += g;
        }
    }
    grads
}

/// Analytic gradients of
/// `hinge_loss(score(q, p_pos), score(q, p_neg), margin)` with respect to
/// every tower weight and bias. Embeddings receive no gradient.
pub fn backward(
    model: &ModelParams,
    q: &TokenSequence,
    p_pos: &TokenSequence,
    p_neg: &TokenSequence,
    margin: f64,
) -> (f64, GradientSet) {
    let fq = forward_tower(q, &model.query_tower, &model.query_table);
    let fp = forward_tower(p_pos, &model.candidate_tower, &model.candidate_table);
    let fneg = forward_tower(p_neg, &model.candidate_tower, &model.candidate_table);

    let s_pos = crate::encoder::cosine_score(fq.pooled.view(), fp.pooled.view());
    let s_neg = crate::encoder::cosine_score(fq.pooled.view(), fneg.pooled.view());
    let loss = hinge_loss(s_pos, s_neg, margin);
    if loss <= 0.0 {
        return (loss, GradientSet::zeros_like(model));
    }

    // dL/ds_pos = -1, dL/ds_neg = +1 on the active side of the hinge; the
    // query encoding feeds both cosines, so its gradient is the difference.
    let du = &cosine_grad_wrt_first(&fq.pooled, &fneg.pooled)
        - &cosine_grad_wrt_first(&fq.pooled, &fp.pooled);
    let dv_pos = -cosine_grad_wrt_first(&fp.pooled, &fq.pooled);
    let dv_neg = cosine_grad_wrt_first(&fneg.pooled, &fq.pooled);

    let query = tower_backward(&fq, &du, &model.query_tower);
    let mut candidate = tower_backward(&fp, &dv_pos, &model.candidate_tower);
    candidate.add_assign(&tower_backward(&fneg, &dv_neg, &model.candidate_tower));

    (loss, GradientSet { query, candidate })
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: f64,
}

/// Loss/accuracy trace plus which epoch's parameters were returned.
#[derive(Debug, Clone)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainingHistory {
    /// Writes the `epoch,mean_loss,val_accuracy` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "epoch,mean_loss,val_accuracy")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{}", e.epoch, e.mean_loss, e.val_accuracy)?;
        }
        Ok(())
    }
}

struct AdamTensor {
    m: Array2<f64>,
    v: Array2<f64>,
    mb: Array1<f64>,
    vb: Array1<f64>,
}

impl AdamTensor {
    fn zeros_like(tower: &ConvTower) -> Self {
        Self {
            m: Array2::zeros(tower.weights.dim()),
            v: Array2::zeros(tower.weights.dim()),
            mb: Array1::zeros(tower.biases.len()),
            vb: Array1::zeros(tower.biases.len()),
        }
    }
}

struct AdamState {
    query: AdamTensor,
    candidate: AdamTensor,
    step: u64,
}

fn apply_update(
    model: &mut ModelParams,
    grads: &GradientSet,
    cfg: &TrainingConfig,
    adam: &mut Option<AdamState>,
) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            model.query_tower.weights.scaled_add(-lr, &grads.query.weights);
            model.query_tower.biases.scaled_add(-lr, &grads.query.biases);
            model
                .candidate_tower
                .weights
                .scaled_add(-lr, &grads.candidate.weights);
            model
                .candidate_tower
                .biases
                .scaled_add(-lr, &grads.candidate.biases);
        }
        Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            let state = adam.as_mut().expect("adam state initialized");
            state.step += 1;
            let t = state.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let update =
                |w: &mut Array2<f64>, b: &mut Array1<f64>, s: &mut AdamTensor, g: &TowerGrads| {
                    s.m.zip_mut_with(&g.weights, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
                    s.v.zip_mut_with(&g.weights, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
                    ndarray::Zip::from(w)
                        .and(&s.m)
                        .and(&s.v)
                        .for_each(|w, &m, &v| {
                            *w -= lr * (m / bc1) / ((v / bc2).sqrt() + epsilon);
                        });
                    s.mb.zip_mut_with(&g.biases, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
                    s.vb.zip_mut_with(&g.biases, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
                    ndarray::Zip::from(b)
                        .and(&s.mb)
                        .and(&s.vb)
                        .for_each(|b, &m, &v| {
                            *b -= lr * (m / bc1) / ((v / bc2).sqrt() + epsilon);
                        });
                };
            update(
                &mut model.query_tower.weights,
                &mut model.query_tower.biases,
                &mut state.query,
                &grads.query,
            );
            update(
                &mut model.candidate_tower.weights,
                &mut model.candidate_tower.biases,
                &mut state.candidate,
                &grads.candidate,
            );
        }
    }
}

fn pair_indices(instance: &DatasetInstance, index: usize) -> Result<(usize, usize)> {
    if instance.n() != 2 {
        return Err(Error::InvalidInstance {
            index,
            reason: format!("training needs exactly 2 candidates, got {}", instance.n()),
        });
    }
    let positives: Vec<usize> = instance
        .labels
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l == 1).then_some(i))
        .collect();
    if positives.len() != 1 {
        return Err(Error::InvalidInstance {
            index,
            reason: format!("expected exactly one positive label, got {}", positives.len()),
        });
    }
    let pos = positives[0];
    Ok((pos, 1 - pos))
}

/// Trains the towers on 2-candidate instances with mini-batch updates
/// (gradients averaged over the batch) and a deterministic per-epoch
/// shuffle. Returns the parameters of the best-validation-accuracy epoch
/// (earliest on ties) and the per-epoch history.
///
/// When `val_set` is empty, validation accuracy is measured on the
/// training set instead.
pub fn train(
    train_set: &[DatasetInstance],
    val_set: &[DatasetInstance],
    model: ModelParams,
    cfg: &TrainingConfig,
) -> Result<(ModelParams, TrainingHistory)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pairs: Vec<(usize, usize)> = train_set
        .iter()
        .enumerate()
        .map(|(i, inst)| pair_indices(inst, i))
        .collect::<Result<_>>()?;

    let val = if val_set.is_empty() { train_set } else { val_set };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = model;
    let mut adam = match cfg.optimizer {
        Optimizer::Adam { .. } => Some(AdamState {
            query: AdamTensor::zeros_like(&current.query_tower),
            candidate: AdamTensor::zeros_like(&current.candidate_tower),
            step: 0,
        }),
        Optimizer::Sgd => None,
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // Per-instance gradients fan out across threads; the reduction
            // below runs in fixed index order so results are bitwise
            // reproducible regardless of scheduling.
            let results: Vec<(f64, GradientSet)> = batch
                .par_iter()
                .map(|&i| {
                    let inst = &train_set[i];
                    let (pos, neg) = pairs[i];
                    backward(
                        &current,
                        &inst.q,
                        &inst.candidates[pos],
                        &inst.candidates[neg],
                        cfg.margin,
                    )
                })
                .collect();
            let mut mean = GradientSet::zeros_like(&current);
            for (loss, grads) in &results {
                loss_sum += loss;
                mean.add_assign(grads);
            }
            mean.scale(1.0 / batch.len() as f64);
            apply_update(&mut current, &mean, cfg, &mut adam);
        }
        let mean_loss = loss_sum / train_set.len() as f64;
        let val_accuracy = top1_accuracy(&current, val, false)?;
        history.push(EpochStats {
            epoch,
            mean_loss,
            val_accuracy,
        });
        let improved = best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc);
        if improved {
            best = Some((val_accuracy, epoch, current.clone()));
        }
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok((
        best_model,
        TrainingHistory {
            epochs: history,
            best_epoch,
        },
    ))
}

/// Fresh model parameters: weights drawn uniformly from
/// `(-sqrt(6/(w*d + F)), +sqrt(6/(w*d + F)))`, biases zero. The same seed
/// always gives bitwise-identical parameters.
pub fn init_params(
    dim: usize,
    num_filters: usize,
    window: usize,
    seed: u64,
    query_table: Arc<EmbeddingTable>,
    candidate_table: Arc<EmbeddingTable>,
) -> Result<ModelParams> {
    if dim == 0 || num_filters == 0 || window == 0 {
        return Err(Error::InvalidArgument(
            "dim, num_filters and window must all be at least 1".into(),
        ));
    }
    let bound = (6.0 / (window as f64 * dim as f64 + num_filters as f64)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_tower = |rng: &mut ChaCha8Rng| {
        let weights = Array2::from_shape_fn((num_filters, window * dim), |_| {
            rng.gen_range(-bound..bound)
        });
        ConvTower::new(window, weights, Array1::zeros(num_filters))
    };
    let query_tower = sample_tower(&mut rng)?;
    let candidate_tower = sample_tower(&mut rng)?;
    ModelParams::new(query_tower, candidate_tower, query_table, candidate_table)
}

/// Outcome of one finite-difference sweep over every trainable scalar.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Maximum relative error over checked coordinates (0 when none).
    pub max_relative_error: f64,
    /// Coordinates compared against central differences.
    pub checked: usize,
    /// Coordinates skipped because a ReLU, pooling tie, or hinge boundary
    /// sits within `10 * epsilon` of the evaluation point.
    pub excluded: usize,
}

#[derive(Clone, Copy)]
enum Side {
    Query,
    Candidate,
}

#[derive(Clone, Copy)]
enum Kind {
    Weight,
    Bias,
}

fn tower_of(model: &ModelParams, side: Side) -> &ConvTower {
    match side {
        Side::Query => &model.query_tower,
        Side::Candidate => &model.candidate_tower,
    }
}

fn tower_of_mut(model: &mut ModelParams, side: Side) -> &mut ConvTower {
    match side {
        Side::Query => &mut model.query_tower,
        Side::Candidate => &mut model.candidate_tower,
    }
}

/// Central finite differences (`(f(x+e) - f(x-e)) / 2e` through the public
/// forward path) versus [`backward`]'s analytic gradients, over every
/// trainable scalar. Relative error uses a `max(1e-8, |a| + |n|)`
/// denominator; sides agreeing within `1e-9` absolutely count as exact,
/// since central differences cannot resolve anything below the loss's
/// floating-point noise floor (cosine is flat along a pooled vector's own
/// scale direction, where the true gradient is exactly zero but the probe
/// returns rounding noise). Coordinates within `10 * epsilon` of a ReLU
/// kink, pooling tie, or the hinge boundary are excluded and reported
/// separately.
pub fn grad_check(
    model: &ModelParams,
    q: &TokenSequence,
    p_pos: &TokenSequence,
    p_neg: &TokenSequence,
    margin: f64,
    epsilon: f64,
) -> GradCheckReport {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (_, grads) = backward(model, q, p_pos, p_neg, margin);

    let fq = forward_tower(q, &model.query_tower, &model.query_table);
    let fp = forward_tower(p_pos, &model.candidate_tower, &model.candidate_table);
    let fneg = forward_tower(p_neg, &model.candidate_tower, &model.candidate_table);
    let s_pos = crate::encoder::cosine_score(fq.pooled.view(), fp.pooled.view());
    let s_neg = crate::encoder::cosine_score(fq.pooled.view(), fneg.pooled.view());

    let tol = 10.0 * epsilon;
    let hinge_kink = (margin - s_pos + s_neg).abs() < tol;

    let filter_near_kink = |side: Side, f: usize| -> bool {
        let caches: &[&TowerForward] = match side {
            Side::Query => &[&fq],
            Side::Candidate => &[&fp, &fneg],
        };
        caches.iter().any(|c| {
            let rows = c.pre.nrows();
            let mut max1 = f64::NEG_INFINITY;
            let mut max2 = f64::NEG_INFINITY;
            for t in 0..rows {
                if c.pre[(t, f)].abs() < tol {
                    return true;
                }
                let act = c.pre[(t, f)].max(0.0);
                if act > max1 {
                    max2 = max1;
                    max1 = act;
                } else if act > max2 {
                    max2 = act;
                }
            }
            rows >= 2 && (max1 - max2) < tol
        })
    };

    let mut probe = model.clone();
    let loss_at = |m: &ModelParams| {
        hinge_loss(
            crate::encoder::score(m, q, p_pos),
            crate::encoder::score(m, q, p_neg),
            margin,
        )
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        excluded: 0,
    };
    for side in [Side::Query, Side::Candidate] {
        let (n_weights, n_biases, cols) = {
            let t = tower_of(model, side);
            (t.weights.len(), t.biases.len(), t.weights.ncols())
        };
        for kind in [Kind::Weight, Kind::Bias] {
            let count = match kind {
                Kind::Weight => n_weights,
                Kind::Bias => n_biases,
            };
            for idx in 0..count {
                let filter = match kind {
                    Kind::Weight => idx / cols,
                    Kind::Bias => idx,
                };
                if hinge_kink || filter_near_kink(side, filter) {
                    report.excluded += 1;
                    continue;
                }
                let analytic = {
                    let g = match side {
                        Side::Query => &grads.query,
                        Side::Candidate => &grads.candidate,
                    };
                    match kind {
                        Kind::Weight => g.weights.as_slice().expect("contiguous")[idx],
                        Kind::Bias => g.biases[idx],
                    }
                };
                let read = |m: &ModelParams| {
                    let t = tower_of(m, side);
                    match kind {
                        Kind::Weight => t.weights.as_slice().expect("contiguous")[idx],
                        Kind::Bias => t.biases[idx],
                    }
                };
                let write = |m: &mut ModelParams, v: f64| {
                    let t = tower_of_mut(m, side);
                    match kind {
                        Kind::Weight => t.weights.as_slice_mut().expect("contiguous")[idx] = v,
                        Kind::Bias => t.biases[idx] = v,
                    }
                };
                let orig = read(&probe);
                write(&mut probe, orig + epsilon);
                let plus = loss_at(&probe);
                write(&mut probe, orig - epsilon);
                let minus = loss_at(&probe);
                write(&mut probe, orig);
                let numeric = (plus - minus) / (2.0 * epsilon);
                let diff = (analytic - numeric).abs();
                let rel = if diff <= 1e-9 {
                    0.0
                } else {
                    diff / (analytic.abs() + numeric.abs()).max(1e-8)
                };
                report.checked += 1;
                if rel > report.max_relative_error {
                    report.max_relative_error = rel;
                }
            }
        }
    }
    report
}
