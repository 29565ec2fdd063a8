// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal GPT-style decoder-only transformer.
//!
//! Pre-layernorm blocks with learned absolute positions, causal multi-head
//! attention and an optional GELU MLP. The forward pass records every
//! quantity the stability analyses consume ([`ForwardTrace`]), the backward
//! pass is written out by hand, and [`HeadMask`] zeroes individual head
//! outputs for ablations.
//!
//! Attention has query/key/value biases but no output bias, so each head's
//! contribution to the residual stream is exactly `z_h · W_O[h]`.

mod backward;
mod config;
mod eval;
mod forward;
mod params;
mod real;

pub use backward::loss_and_grads;
pub use config::ModelConfig;
pub use eval::{head_output_norms, perplexity, query_norms, sequence_nll, Grid};
pub use forward::{forward, forward_unmasked, ForwardTrace, LayerTrace};
pub use params::{
    init_params, BlockOffsets, HeadMask, MlpOffsets, ParamLayout, Parameters, Params, TensorSlot,
};
pub use real::{matmul, Real};
