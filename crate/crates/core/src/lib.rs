//! Multiple-instance learning for bag-level binary outcome prediction.
//!
//! A patient is a bag of lesion feature vectors. Instances are embedded by a
//! small fully connected encoder, pooled into one bag representation and
//! scored by a logistic head. The crate contrasts non-injective pooling
//! (`max`, `mean`, softmax attention) with injective pooling (`sum`,
//! sigmoid-gated attention) and ships the evaluation harness around it:
//! z-scoring, repeated stratified cross-validation, AUC with DeLong
//! intervals, a largest-lesion LASSO baseline and synthetic generators.

pub mod baseline;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod network;
pub mod pooling;

pub use error::{Error, Result};
