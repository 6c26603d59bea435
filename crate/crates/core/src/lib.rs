//! Multiple-instance learning toolkit built around certainty pooling.
//!
//! A bag of instances is scored by a shared instance network; a pooling
//! operator turns the per-instance outputs into one bag prediction. Besides
//! the classic max, mean and attention operators this crate implements
//! certainty pooling: every instance gets a certainty score from the spread
//! of its Monte-Carlo dropout predictions, and the bag prediction is the raw
//! output of the instance with the largest certainty-weighted output.
//!
//! Everything numerical runs on a small define-by-run reverse-mode autodiff
//! engine ([`autograd`]) over 64-bit dense tensors.
//!
//! Module map:
//!
//! - [`autograd`]: tensors, the operation graph and backward pass.
//! - [`nn`]: model specification/state, loss, Adam and checkpoints.
//! - [`pooling`]: max/mean/attention/certainty pooling and MC dropout.
//! - [`data`]: IDX ingestion, bag generators, the BagPack format.
//! - [`metrics`]: ROC AUC and the bag/instance evaluation protocols.
//! - [`experiment`]: training loop, model selection and seed sweeps.

// `!(x > 0.0)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod data;
mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod pooling;
pub mod rng;

pub use autograd::{DropoutMode, Graph, Tensor, Var};
pub use data::{Bag, BagDataset, BagGenConfig, Split};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentReport, RunRecord};
pub use metrics::ScoredSet;
pub use nn::{AdamState, ModelSpec, ModelState};
pub use pooling::{CertaintyVector, McSampleMatrix, PoolResult, Pooling};
pub use rng::RngStream;
