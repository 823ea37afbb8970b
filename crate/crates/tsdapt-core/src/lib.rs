//! Unsupervised time-series domain adaptation engine.
//!
//! The crate trains 1D-convolutional activity classifiers on one or more
//! labeled source domains so that they transfer to an unlabeled target
//! domain. Three families of training objectives are supported:
//!
//! - adversarial alignment through a multi-class domain classifier behind
//!   a gradient reversal layer (`codats`),
//! - an additional supervised contrastive objective on a projection head
//!   (`calda`),
//! - weak supervision from target label proportions via a KL
//!   regularizer (`codats_ws`, `calda_ws`).
//!
//! Everything runs on a small self-contained reverse-mode differentiation
//! engine over dense `f64` arrays ([`tensor`]), so training runs are
//! deterministic given a seed and gradients can be validated against
//! finite differences. The remaining modules cover the sensor
//! preprocessing pipeline ([`data`]), the cross-person / cross-time
//! experiment protocol ([`experiment`]), and evaluation metrics
//! ([`metrics`], [`report`]).

pub mod data;
pub mod experiment;
#[cfg(feature = "gradcheck")]
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod report;
pub mod rng;
pub mod tensor;
