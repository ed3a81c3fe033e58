//! Sequence tagging with a contextual-compositional predictor for
//! out-of-vocabulary word embeddings.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod eval;
pub mod error;
pub mod layers;
pub mod oov_predictor;
pub mod synthetic;
pub mod tagger;
pub mod training;

pub use error::{Error, Result};
