//! NN-grams: a feed-forward language model that scores a word from both the
//! embeddings of its history and rescaled n-gram counts, trained with noise
//! contrastive estimation.
//!
//! The crate also carries the pieces needed to train and evaluate it: n-gram
//! counting and a Katz backoff baseline, text and lattice-derived noise
//! samplers, n-best extraction and rescoring, and word error rate scoring.

pub mod corpus;
pub mod error;
pub mod lattice;
pub mod model;
pub mod ngram;
pub mod noise;
pub mod rescore;
pub mod synthetic;
pub mod training;

pub use corpus::{TokenizedSentence, Vocabulary, WordId};
pub use error::{Error, Result};
pub use model::{FeatureVector, InputMode, ModelConfig, ModelParams};
pub use ngram::{KatzLM, NGramStore};
