// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat parameter storage with a named tensor layout.
//!
//! All tensors of a model live in one contiguous vector. [`ParamLayout`]
//! records where each named tensor starts and its shape, which keeps the
//! optimizer, checkpointing and finite-difference checks agnostic of the
//! model structure.

use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of the MLP sublayer tensors within the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpOffsets {
    pub ln2_w: usize,
    pub ln2_b: usize,
    pub w_in: usize,
    pub b_in: usize,
    pub w_out: usize,
    pub b_out: usize,
}

/// Offsets of one transformer block.
///
/// `w_q`, `w_k`, `w_v` are stored `[n_heads, d_head, d_model]`, `w_o` is
/// stored `[n_heads, d_head, d_model]` so each head's slice is addressable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockOffsets {
    pub ln1_w: usize,
    pub ln1_b: usize,
    pub w_q: usize,
    pub b_q: usize,
    pub w_k: usize,
    pub b_k: usize,
    pub w_v: usize,
    pub b_v: usize,
    pub w_o: usize,
    pub mlp: Option<MlpOffsets>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub slots: Vec<TensorSlot>,
    pub total: usize,
    pub w_e: usize,
    pub w_pos: usize,
    pub blocks: Vec<BlockOffsets>,
    pub lnf_w: usize,
    pub lnf_b: usize,
    pub w_u: usize,
    pub b_u: usize,
}

struct Builder {
    slots: Vec<TensorSlot>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.total;
        let slot = TensorSlot {
            name,
            shape,
            offset,
        };
        self.total += slot.len();
        self.slots.push(slot);
        offset
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, h, dh, v) = (cfg.d_model, cfg.n_heads, cfg.d_head, cfg.d_vocab);
        let mut b = Builder {
            slots: Vec::new(),
            total: 0,
        };
        let w_e = b.push("embed.W_E".into(), vec![v, d]);
        let w_pos = b.push("pos_embed.W_pos".into(), vec![cfg.n_ctx, d]);
        let blocks = (0..cfg.n_layers)
            .map(|l| {
                let p = |s: &str| format!("blocks.{l}.{s}");
                let ln1_w = b.push(p("ln1.w"), vec![d]);
                let ln1_b = b.push(p("ln1.b"), vec![d]);
                let w_q = b.push(p("attn.W_Q"), vec![h, dh, d]);
                let b_q = b.push(p("attn.b_Q"), vec![h, dh]);
                let w_k = b.push(p("attn.W_K"), vec![h, dh, d]);
                let b_k = b.push(p("attn.b_K"), vec![h, dh]);
                let w_v = b.push(p("attn.W_V"), vec![h, dh, d]);
                let b_v = b.push(p("attn.b_V"), vec![h, dh]);
                let w_o = b.push(p("attn.W_O"), vec![h, dh, d]);
                let mlp = (!cfg.attn_only).then(|| MlpOffsets {
                    ln2_w: b.push(p("ln2.w"), vec![d]),
                    ln2_b: b.push(p("ln2.b"), vec![d]),
                    w_in: b.push(p("mlp.W_in"), vec![d, cfg.d_mlp]),
                    b_in: b.push(p("mlp.b_in"), vec![cfg.d_mlp]),
                    w_out: b.push(p("mlp.W_out"), vec![cfg.d_mlp, d]),
                    b_out: b.push(p("mlp.b_out"), vec![d]),
                });
                BlockOffsets {
                    ln1_w,
                    ln1_b,
                    w_q,
                    b_q,
                    w_k,
                    b_k,
                    w_v,
                    b_v,
                    w_o,
                    mlp,
                }
            })
            .collect();
        let lnf_w = b.push("ln_final.w".into(), vec![d]);
        let lnf_b = b.push("ln_final.b".into(), vec![d]);
        let w_u = b.push("unembed.W_U".into(), vec![d, v]);
        let b_u = b.push("unembed.b_U".into(), vec![v]);
        Self {
            slots: b.slots,
            total: b.total,
            w_e,
            w_pos,
            blocks,
            lnf_w,
            lnf_b,
            w_u,
            b_u,
        }
    }

    pub fn slot(&self, name: &str) -> Option<&TensorSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Name of the tensor containing flat index `idx`.
    pub fn tensor_of(&self, idx: usize) -> Option<&TensorSlot> {
        self.slots.iter().find(|s| s.range().contains(&idx))
    }

    fn is_layernorm_scale(name: &str) -> bool {
        name.ends_with("ln1.w") || name.ends_with("ln2.w") || name == "ln_final.w"
    }

    fn is_bias_or_shift(name: &str) -> bool {
        name.rsplit('.')
            .next()
            .is_some_and(|last| last.starts_with('b'))
    }
}

/// The full parameter set of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T = f32> {
    pub config: ModelConfig,
    pub layout: Arc<ParamLayout>,
    pub data: Vec<T>,
}

/// Model parameters at training precision.
pub type Parameters = Params<f32>;

impl<T: Real> Params<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        Ok(Self {
            config: config.clone(),
            data: vec![T::ZERO; layout.total],
            layout: Arc::new(layout),
        })
    }

    /// A zero buffer with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            data: vec![T::ZERO; self.data.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.slot(name).map(|s| &self.data[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.slot(name)?.range();
        Some(&mut self.data[range])
    }

    /// Iterate `(slot, values)` in layout order.
    pub fn tensors(&self) -> impl Iterator<Item = (&TensorSlot, &[T])> {
        self.layout.slots.iter().map(|s| (s, &self.data[s.range()]))
    }

    /// `W_Q` slice of one head, `d_head x d_model` row-major.
    pub fn w_q_head(&self, layer: usize, head: usize) -> &[T] {
        let block = &self.layout.blocks[layer];
        let n = self.config.d_head * self.config.d_model;
        &self.data[block.w_q + head * n..block.w_q + (head + 1) * n]
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// First tensor holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors()
            .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
            .map(|(s, _)| s.name.as_str())
    }
}

/// Deterministic GPT-2 style initialisation: weights `N(0, init_range)`,
/// biases zero, layernorm scale one and shift zero.
pub fn init_params(config: &ModelConfig) -> Result<Parameters> {
    let mut params = Params::<f32>::zeros(config)?;
    let normal = Normal::new(0.0f32, config.init_range as f32)
        .map_err(|e| Error::config(format!("init_range: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layout = Arc::clone(&params.layout);
    for slot in &layout.slots {
        let values = &mut params.data[slot.range()];
        if ParamLayout::is_layernorm_scale(&slot.name) {
            values.fill(1.0);
        } else if ParamLayout::is_bias_or_shift(&slot.name) {
            values.fill(0.0);
        } else {
            values.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        }
    }
    Ok(params)
}

/// Per-head activity mask: `true` keeps the head, `false` zeroes its output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadMask {
    n_layers: usize,
    n_heads: usize,
    entries: Vec<bool>,
}

impl HeadMask {
    pub fn all_active(config: &ModelConfig) -> Self {
        Self {
            n_layers: config.n_layers,
            n_heads: config.n_heads,
            entries: vec![true; config.n_layers * config.n_heads],
        }
    }

    pub fn all_masked(config: &ModelConfig) -> Self {
        let mut m = Self::all_active(config);
        m.entries.fill(false);
        m
    }

    /// Everything active except `(layer, head)`.
    pub fn ablate(config: &ModelConfig, layer: usize, head: usize) -> Self {
        let mut m = Self::all_active(config);
        m.set(layer, head, false);
        m
    }

    pub fn is_active(&self, layer: usize, head: usize) -> bool {
        self.entries[layer * self.n_heads + head]
    }

    pub fn set(&mut self, layer: usize, head: usize, active: bool) {
        self.entries[layer * self.n_heads + head] = active;
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_layers, self.n_heads)
    }

    pub(crate) fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.shape() != (config.n_layers, config.n_heads) {
            return Err(Error::usage(format!(
                "head mask shape {:?} does not match model ({}, {})",
                self.shape(),
                config.n_layers,
                config.n_heads
            )));
        }
        Ok(())
    }
}
