//! Multi-aspect scoring of short written responses.
//!
//! A response is scored on five independent rubric aspects at once. The
//! main model ([`hnn::HnnModel`]) runs token embeddings through a
//! bidirectional LSTM, pools the states with additive attention, and maps
//! the pooled vector to five sigmoid outputs. Naive Bayes, logistic
//! regression and a one-hidden-layer MLP over bag-of-words features serve
//! as comparison models, and [`evaluation`] holds the accuracy, agreement
//! and paired-test statistics used to compare them.

pub mod baselines;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod hnn;
pub mod numeric;
pub mod pipeline;
pub mod text;
pub mod training;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

/// Number of rubric aspects every model predicts.
pub const NUM_ASPECTS: usize = 5;

/// Binary human labels, one per aspect, in rubric order.
pub type AspectLabels = [u8; NUM_ASPECTS];

/// Per-aspect positive-class probabilities, in rubric order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AspectScores(pub [f64; NUM_ASPECTS]);

impl AspectScores {
    pub fn probs(&self) -> &[f64; NUM_ASPECTS] {
        &self.0
    }
}
