//! Sentence simplification with encoder-decoder transformers.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] - float64 tensors and a reverse-mode autodiff tape.
//! * [`model`] - the encoder-decoder transformer and its four encoder/decoder wirings.
//! * [`train`] - AdamW, one-cycle schedule, early stopping on validation SARI, checkpoints.
//! * [`decode`] - greedy and beam search generation.
//! * [`sari`] - the multi-reference SARI metric with ADD/KEEP/DELETE components.
//! * [`corpus`] and [`tokenizer`] - plain-text corpora, vocabularies, batching.
//! * [`cli`] - the `train` / `simplify` / `eval` / `report` commands.
//!
//! Data-parallel loops (corpus scoring, validation decoding, gradient checking,
//! matmul rows) go through [`exec`], which uses rayon when the `parallel`
//! feature is enabled and falls back to plain iteration otherwise. Results are
//! bitwise identical either way.

pub mod cli;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod exec;
pub mod model;
pub mod sari;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
