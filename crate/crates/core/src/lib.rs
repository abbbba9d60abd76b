//! Keyword-driven requirement generation.
//!
//! The crate is organised as a pipeline:
//!
//! - [`ontology`]: triple ingestion, keyword-rooted multi-hop retrieval,
//!   frequency filtering and pseudo-sentence rendering.
//! - [`corpus`]: tokenization, keyword extraction, copy labels, vocabulary
//!   and cross-validation folds.
//! - [`model`]: a small seq2seq transformer with per-layer knowledge
//!   injection, a copy-label head and hand-written backpropagation.
//! - [`decoder`]: copy-mixed, keyword-constrained beam search with
//!   syntax-element rescoring.
//! - [`metrics`]: BLEU, ROUGE-N/L and corpus reports.
//! - [`pipeline`]: the prepare/train/generate/evaluate/crossval/ablate
//!   commands driven by an experiment config.
//!
//! Runnable walkthroughs of each stage live under `examples/`.

pub mod corpus;
pub mod decoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ontology;
pub mod pipeline;

pub use error::{Error, Result};
