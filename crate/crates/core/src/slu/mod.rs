//! The downstream learner used to measure what augmentation buys: an
//! averaged structured perceptron for BIO slot tagging and an averaged
//! multiclass perceptron for intents.
//!
//! The tagger decodes greedily left to right. In training it decodes with a
//! unit cost on non-gold tags and hides word-identity features of random
//! tokens, which pushes weight onto context features.
//!
//! Both models are trained single-threaded and are fully determined by the
//! training examples (as a set) and the seed.

mod averaging;
mod intent;
mod tagger;

use std::num::ParseFloatError;

use thiserror::Error;

pub use averaging::Averaged;
pub use intent::{train_intent, IntentModel, IntentScorer};
pub use tagger::{observation_features, prev_tag_feature, train_tagger, TaggerModel, TaggerTrainer};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("no training examples")]
    Empty,
}

impl ModelError {
    fn parse(line: usize, reason: impl Into<String>) -> Self {
        ModelError::Parse {
            line,
            reason: reason.into(),
        }
    }

    fn weight(line: usize, e: ParseFloatError) -> Self {
        ModelError::parse(line, format!("bad weight: {e}"))
    }
}

/// Training schedule shared by both models.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions<'a> {
    pub epochs: usize,
    pub seed: u64,
    /// When given, the epoch with the best dev score is kept (earliest on
    /// ties); otherwise the last epoch.
    pub dev: Option<&'a [crate::dialogue::LabeledExample]>,
    /// Tagger only: chance that a token's word-identity features are hidden
    /// during a training visit.
    pub word_dropout: f64,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            seed: 0,
            dev: None,
            word_dropout: 0.3,
        }
    }
}

/// Label prefix used in model files to record the label set.
const LABEL_MARKER: &str = "__label__";
