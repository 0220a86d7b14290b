//! Universal domain adaptation with a composite classifier.
//!
//! A feature extractor produces ℓ2-normalized features that feed a single
//! linear layer of `2K` neurons. The first `K` neurons form a multi-class (MC)
//! softmax predictor over the source classes; neurons `k` and `K + k` form the
//! binary one-vs-all (OVA) predictor for class `k`. A target sample whose MC
//! prediction is contradicted by the matching OVA predictor is rejected as
//! unknown.
//!
//! Training couples five losses: source cross-entropy, source OVA with a hard
//! negative, an entropy-strengthened loss driven by the MC/OVA agreement,
//! memory-bank feature clustering, and target OVA entropy minimization.
//!
//! Module map:
//!
//! - [`nn`]: dense extractor, classifier head, backward pass, checkpoints
//! - [`classifier`]: probability bundles and the paradox decision rule
//! - [`losses`]: the five loss terms, their gradients and the weighted total
//! - [`memory_bank`]: stored target features and neighbor distributions
//! - [`data`]: synthetic two-domain problems and the dataset file format
//! - [`trainer`]: the epoch/iteration loop, SGD with momentum, lr schedule
//! - [`metrics`]: open-set accuracies, HOS and AUROC
//! - [`gradcheck`]: finite-difference verification of every loss gradient

// Validation is written as `!(x <op> bound)` so that NaN fails it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod data;
mod entropy;
mod error;
pub mod gradcheck;
pub mod losses;
pub mod memory_bank;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
