//! Object-alignment scoring for image classifier explanations.
//!
//! The score of an explanation `B` against a fuzzy object mask `A` is
//! `sum(a * b) / sum(b)` over all pixels, after `B` is clamped to be
//! nonnegative and scaled so its maximum is 1. The dataset score is the
//! plain mean over correctly classified images.

pub mod cli;
pub mod error;
pub mod explain;
pub mod harness;
pub mod io;
pub mod metric;
pub mod net;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use metric::{
    avg_score, normalize_explanation, score, ActivationMap, DatasetScore, ExplanationMap, Grid,
    ScoredImage,
};
