//! Contrastive regression with batch-all triplet mining over continuous
//! quality labels, a small differentiable frame encoder, and the evaluation
//! statistics used to compare quality predictors.

pub mod data;
mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, ParseIssue, Result};
