//! Differentially private tabular data synthesis with fairness-aware
//! preprocessing, plus the privacy accounting, fairness metrics, and utility
//! metrics needed to measure the resulting privacy–fairness–utility
//! trade-offs.
//!
//! The pipeline is sequential: a zCDP-accounted adaptive marginal synthesizer
//! produces a private synthetic dataset, and an optional fairness transform
//! (a randomized conditional map solved as a linear program, or instance
//! reweighting) post-processes it. Post-processing never touches the original
//! data, so the synthesizer's privacy guarantee carries through unchanged.
//!
//! See the `book/` directory for a guided tour; its code snippets compile and
//! run as doc-tests of this crate.

pub mod aim;
pub mod error;
pub mod fairness;
pub mod learn;
pub mod metrics;
pub mod optim;
pub mod privacy;
pub mod rng;
pub mod tabular;

mod book;

pub use error::{Error, Result};
