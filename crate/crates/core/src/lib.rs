//! Adaptive discriminative region selection for scene recognition.
//!
//! A discriminative network's last convolutional activations, weighted by its
//! classifier, give a per-class Dis-Map. Thresholded local maxima of the
//! normalized map become square patches at two scales; features of those
//! patches are max-pooled per scale, L2-normalized and concatenated with a
//! whole-image feature, then classified with one-vs-rest linear SVMs.
//!
//! [`pipeline`] ties the stages together; [`backend`] holds the model
//! abstractions with an ONNX implementation and small arithmetic toy
//! networks for tests.

pub mod aggregate;
pub mod backend;
mod binio;
pub mod cache;
pub mod dismap;
mod error;
pub mod pipeline;
pub mod regions;
pub mod svm;
pub mod synthetic;

pub use error::{Error, Result};
