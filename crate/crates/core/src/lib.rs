//! Two-tower CNN ranking of prescription medications against free-form
//! descriptive phrases.
//!
//! A patient rarely says "hydrochlorothiazide"; they say "my blood pressure
//! pill". Given the short list of medications on a patient's prescription,
//! this crate ranks those standard medication names (SMNs) against the
//! patient's descriptive phrase (DMP) and returns the best match.
//!
//! The pieces:
//!
//! - [`token`] / [`embedding`] — tokenization and frozen pretrained word
//!   vectors shared by both towers.
//! - [`encoder`] / [`checkpoint`] — per-tower convolution + max pooling to
//!   a fixed vector, cosine scoring between towers, and versioned binary
//!   model files tied to their embedding sources.
//! - [`training`] — pairwise hinge-loss training with analytic
//!   backpropagation and a finite-difference gradient checker.
//! - [`entity`] / [`remote`] — entity-based hard attention: reduce noisy
//!   free text to the medical entity spans that matter, via a local
//!   gazetteer or a remote extraction service.
//! - [`datagen`] — synthetic instance generation from patient-education
//!   records, with entity-overlap negative constraints and a grouped
//!   train/heldout split.
//! - [`eval`] — candidate ranking, top-1 accuracy (strict and relaxed),
//!   and a single-threaded latency benchmark.
//! - [`cluster`] — k-means over candidate-tower outputs with silhouette
//!   sweep for picking the cluster count.

pub mod checkpoint;
pub mod cluster;
pub mod datagen;
pub mod embedding;
pub mod encoder;
pub mod entity;
mod error;
pub mod eval;
pub mod remote;
pub mod token;
pub mod training;

pub use error::{Error, Result};
