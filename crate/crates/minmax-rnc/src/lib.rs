//! MinMax recurrent neural cascades.
//!
//! A sequence-modeling engine built on the MinMax algebra, where addition is
//! `max` and multiplication is `min`. The crate provides:
//!
//! - [`algebra`]: exact scalar/matrix operations and the scan-composition monoid;
//! - [`recurrence`]: sequential and parallel-scan evaluation of MinMax recurrences;
//! - [`network`]: cascades of MinMax recurrent neurons with MLP input functions;
//! - [`autodiff`]: reverse-mode differentiation with min-norm sub/supergradients
//!   at min/max nodes, plus finite-difference verification;
//! - [`automata`]: compilation of semiautomata into exact MinMax units, with
//!   extensional certification;
//! - [`tasks`]: seeded generators for the Latching / Sequences / InductionHeads
//!   benchmarks;
//! - [`training`]: Adam training loop, accuracy metrics, and length-generalization
//!   evaluation.

pub mod algebra;
pub mod autodiff;
pub mod automata;
pub mod checkpoint;
pub mod network;
pub mod recurrence;
pub mod tasks;
pub mod training;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("wrong transformation class: {0}")]
    Class(String),
    #[error("inconsistent permutation representation: {0}")]
    Certification(String),
    #[error("sample generation failed: {0}")]
    Generation(String),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
