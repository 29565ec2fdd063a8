// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{BOS_TOKEN, BYTE_VOCAB};
use crate::error::{Error, Result};

/// Architecture hyperparameters of a GPT-style decoder-only model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub attn_only: bool,
    /// Maximum sequence length in tokens.
    pub n_ctx: usize,
    pub d_vocab: usize,
    pub attn_scale: f64,
    pub layernorm_eps: f64,
    /// Standard deviation of the Gaussian weight initialisation.
    pub init_range: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Byte-level model with derived fields filled in: `d_head = d_model / n_heads`,
    /// `attn_scale = sqrt(d_head)`, vocabulary of 256 bytes plus BOS and
    /// `init_range = 0.8 / sqrt(d_model)`.
    pub fn new(n_layers: usize, n_heads: usize, d_model: usize, n_ctx: usize) -> Self {
        let d_head = if n_heads == 0 { 0 } else { d_model / n_heads };
        Self {
            n_layers,
            n_heads,
            d_model,
            d_head,
            d_mlp: 4 * d_model,
            attn_only: false,
            n_ctx,
            d_vocab: BYTE_VOCAB + 1,
            attn_scale: (d_head as f64).sqrt(),
            layernorm_eps: 1e-5,
            init_range: 0.8 / (d_model.max(1) as f64).sqrt(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_attn_only(mut self, attn_only: bool) -> Self {
        self.attn_only = attn_only;
        self
    }

    pub fn with_d_mlp(mut self, d_mlp: usize) -> Self {
        self.d_mlp = d_mlp;
        self
    }

    pub fn with_d_vocab(mut self, d_vocab: usize) -> Self {
        self.d_vocab = d_vocab;
        self
    }

    pub fn with_init_range(mut self, init_range: f64) -> Self {
        self.init_range = init_range;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("n_ctx", self.n_ctx),
            ("d_vocab", self.d_vocab),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !self.attn_only && self.d_mlp == 0 {
            return Err(Error::config(
                "d_mlp must be positive when the MLP is enabled",
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_head * self.n_heads != self.d_model {
            return Err(Error::config(format!(
                "d_head {} x n_heads {} != d_model {}",
                self.d_head, self.n_heads, self.d_model
            )));
        }
        let want_scale = (self.d_head as f64).sqrt();
        if (self.attn_scale - want_scale).abs() > 1e-9 {
            return Err(Error::config(format!(
                "attn_scale {} must equal sqrt(d_head) = {want_scale}",
                self.attn_scale
            )));
        }
        for (name, v) in [
            ("layernorm_eps", self.layernorm_eps),
            ("init_range", self.init_range),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be a positive real")));
            }
        }
        Ok(())
    }

    /// BOS id prepended to prompts, when the vocabulary has room for it.
    pub fn bos_token(&self) -> Option<u32> {
        (self.d_vocab > BOS_TOKEN as usize).then_some(BOS_TOKEN)
    }

    /// Stable identifier of the architecture, independent of the seed.
    pub fn arch_id(&self) -> String {
        let mut unseeded = self.clone();
        unseeded.seed = 0;
        let json = serde_json::to_vec(&unseeded).expect("config serialises");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..6])
    }

    /// Short human-readable architecture label, e.g. `L4H4-mlp`.
    pub fn label(&self) -> String {
        format!(
            "L{}H{}-{}",
            self.n_layers,
            self.n_heads,
            if self.attn_only { "attn" } else { "mlp" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_fields() {
        let cfg = ModelConfig::new(2, 4, 32, 16);
        assert_eq!(cfg.d_head, 8);
        assert_eq!(cfg.attn_scale, 8f64.sqrt());
        assert_eq!(cfg.d_vocab, 257);
        assert_eq!(cfg.bos_token(), Some(256));
        cfg.validate().unwrap();
    }

    #[test]
    fn non_divisible_model_width_is_rejected() {
        let mut cfg = ModelConfig::new(2, 3, 32, 16);
        cfg.d_head = 10;
        cfg.attn_scale = 10f64.sqrt();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn arch_id_ignores_seed() {
        let a = ModelConfig::new(2, 2, 16, 8).with_seed(1);
        let b = a.clone().with_seed(99);
        assert_eq!(a.arch_id(), b.arch_id());
        assert_ne!(a.arch_id(), a.clone().with_attn_only(true).arch_id());
    }

    #[test]
    fn small_vocab_has_no_bos() {
        assert_eq!(
            ModelConfig::new(1, 1, 4, 4).with_d_vocab(256).bos_token(),
            None
        );
    }
}
