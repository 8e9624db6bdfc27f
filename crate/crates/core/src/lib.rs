//! Label confusion training laboratory.
//!
//! Replaces one-hot training targets with an instance-dependent simulated
//! label distribution (SLD) built from instance/label similarity, trains
//! small pooled-embedding classifiers against it with a KL loss, and runs
//! repeated-split comparisons against one-hot and label-smoothing baselines.
//!
//! Module map:
//! - [`autodiff`]: dense tensors, a recording tape with reverse-mode
//!   gradients, and a finite-difference gradient checker.
//! - [`data`]: vocabulary, corpus encoding, seeded splits, synthetic
//!   confused corpora and within-group label noise.
//! - [`encoders`]: text/feature encoder, label encoder, softmax classifier
//!   and parameter checkpoints.
//! - [`targets`]: one-hot, label smoothing, LCD/SLD and the KL loss.
//! - [`train`]: Adam and the mini-batch training loop.
//! - [`eval`]: accuracy, repeated splits, Welch t-test, label similarity.

pub mod autodiff;
pub mod data;
pub mod encoders;
mod error;
pub mod eval;
pub mod seed;
pub mod targets;
pub mod train;

pub use error::{LcmError, Result};
