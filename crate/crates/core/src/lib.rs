// SPDX-License-Identifier: MIT OR Apache-2.0

//! Train populations of small decoder-only transformers from independent
//! seeds and measure how stable their attention heads and residual streams
//! are across those seeds.
//!
//! The crate is organised bottom-up:
//!
//! * [`tinylm`]: the transformer, its hand-written backward pass and head masking.
//! * [`optim`]: Adam and AdamW and the single-refit training loop.
//! * [`corpus`]: byte tokenizer, deterministic batching and prompt sets.
//! * [`store`]: the binary tensor container, checkpoints and activation dumps.
//! * [`stability`]: head stability, layer profiles, alignment maps and commonness.
//! * [`cka`]: residual-stream similarity with RBF-kernel CKA.
//! * [`ablation`]: per-head ablation and its correlation with stability.
//! * [`metasne`]: per-head distance geometry and exact t-SNE.
//! * [`experiment`]: configuration, the refit farm and the analysis pipeline.

pub mod ablation;
pub mod cka;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod metasne;
pub mod optim;
pub mod stability;
pub mod store;
pub mod tinylm;

pub use error::{Error, Result};
