// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-refit activation dumps over a prompt set.
//!
//! Three kinds are produced from one forward pass per prompt:
//! attention patterns, residual point clouds (the post-attention residual
//! stream mean-pooled over positions, one row per prompt) and head
//! signatures (each head's output mean-pooled over positions).

use std::path::Path;

use serde_json::json;

use super::tensorfile::TensorFile;
use crate::corpus::PromptSet;
use crate::error::{Error, Result};
use crate::tinylm::{forward, HeadMask, Parameters};

/// Tolerance on attention row sums accepted when loading a dump.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Post-softmax attention of every head on every prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub n_layers: usize,
    pub n_heads: usize,
    pub prompt_set: String,
    pub prompt_digests: Vec<String>,
    pub seq_lens: Vec<usize>,
    /// One `[n_layers, n_heads, T, T]` buffer per prompt.
    pub patterns: Vec<Vec<f32>>,
}

impl AttentionDump {
    pub fn n_prompts(&self) -> usize {
        self.patterns.len()
    }

    /// `T x T` matrix of `(layer, head)` on prompt `p`.
    pub fn pattern(&self, p: usize, layer: usize, head: usize) -> &[f32] {
        let t = self.seq_lens[p];
        let n = t * t;
        let start = (layer * self.n_heads + head) * n;
        &self.patterns[p][start..start + n]
    }

    /// Check the causal row-stochastic structure of every matrix.
    pub fn validate(&self) -> Result<()> {
        if self.seq_lens.len() != self.patterns.len()
            || self.prompt_digests.len() != self.patterns.len()
        {
            return Err(Error::InvalidDump(
                "prompt index does not match payload".into(),
            ));
        }
        for p in 0..self.n_prompts() {
            let t = self.seq_lens[p];
            if self.patterns[p].len() != self.n_layers * self.n_heads * t * t {
                return Err(Error::InvalidDump(format!("prompt {p}: wrong buffer size")));
            }
            for l in 0..self.n_layers {
                for h in 0..self.n_heads {
                    let a = self.pattern(p, l, h);
                    for i in 0..t {
                        let row = &a[i * t..(i + 1) * t];
                        let sum: f64 = row[..=i].iter().map(|&x| f64::from(x)).sum();
                        let bad = (sum - 1.0).abs() >= ROW_SUM_TOLERANCE
                            || row[..=i].iter().any(|&x| !(x >= 0.0))
                            || row[i + 1..].iter().any(|&x| x != 0.0);
                        if bad {
                            return Err(Error::InvalidDump(format!(
                                "prompt {p}, layer {l}, head {h}, row {i} is not causal and row-stochastic"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Copy with the heads of each layer reordered: new head `i` of layer
    /// `l` is old head `perm[l][i]`.
    pub fn permute_heads(&self, perm: &[Vec<usize>]) -> Self {
        let mut out = self.clone();
        for p in 0..self.n_prompts() {
            let n = self.seq_lens[p] * self.seq_lens[p];
            for (l, lp) in perm.iter().enumerate() {
                for (i, &src) in lp.iter().enumerate() {
                    let dst = (l * self.n_heads + i) * n;
                    out.patterns[p][dst..dst + n].copy_from_slice(self.pattern(p, l, src));
                }
            }
        }
        out
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        f.set_meta("kind", json!("attention"));
        f.set_meta("n_layers", json!(self.n_layers));
        f.set_meta("n_heads", json!(self.n_heads));
        f.set_meta("prompt_set", json!(self.prompt_set));
        f.set_meta("prompt_digests", json!(self.prompt_digests));
        for (p, data) in self.patterns.iter().enumerate() {
            let t = self.seq_lens[p];
            f.insert(
                format!("p{p:04}"),
                vec![self.n_layers, self.n_heads, t, t],
                data.clone(),
            );
        }
        f
    }

    /// Decode and validate.
    pub fn from_tensor_file(f: &TensorFile) -> Result<Self> {
        expect_kind(f, "attention")?;
        let n_layers: usize = f.meta_as("n_layers")?;
        let n_heads: usize = f.meta_as("n_heads")?;
        let prompt_digests: Vec<String> = f.meta_as("prompt_digests")?;
        let mut seq_lens = Vec::with_capacity(prompt_digests.len());
        let mut patterns = Vec::with_capacity(prompt_digests.len());
        for p in 0..prompt_digests.len() {
            let t = f.tensor(&format!("p{p:04}"))?;
            match t.shape[..] {
                [l, h, a, b] if l == n_layers && h == n_heads && a == b => seq_lens.push(a),
                _ => {
                    return Err(Error::InvalidDump(format!(
                        "prompt {p} has shape {:?}",
                        t.shape
                    )))
                }
            }
            patterns.push(t.data.clone());
        }
        let dump = Self {
            n_layers,
            n_heads,
            prompt_set: f.meta_as("prompt_set")?,
            prompt_digests,
            seq_lens,
            patterns,
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor_file().write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::read(path)?)
    }
}

/// Mean-pooled post-attention residual stream per layer, `[n_prompts, d_model]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDump {
    pub n_layers: usize,
    pub d_model: usize,
    pub prompt_set: String,
    pub prompt_digests: Vec<String>,
    pub layers: Vec<Vec<f32>>,
}

impl ResidualDump {
    pub fn n_prompts(&self) -> usize {
        self.prompt_digests.len()
    }

    /// Point cloud of one layer as rows of 64-bit values.
    pub fn point_cloud(&self, layer: usize) -> Vec<Vec<f64>> {
        self.layers[layer]
            .chunks(self.d_model)
            .map(|r| r.iter().map(|&x| f64::from(x)).collect())
            .collect()
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        f.set_meta("kind", json!("residual"));
        f.set_meta("pooling", json!("mean"));
        f.set_meta("n_layers", json!(self.n_layers));
        f.set_meta("d_model", json!(self.d_model));
        f.set_meta("prompt_set", json!(self.prompt_set));
        f.set_meta("prompt_digests", json!(self.prompt_digests));
        for (l, data) in self.layers.iter().enumerate() {
            f.insert(
                format!("resid.l{l:02}"),
                vec![self.n_prompts(), self.d_model],
                data.clone(),
            );
        }
        f
    }

    pub fn from_tensor_file(f: &TensorFile) -> Result<Self> {
        expect_kind(f, "residual")?;
        let n_layers: usize = f.meta_as("n_layers")?;
        let d_model: usize = f.meta_as("d_model")?;
        let prompt_digests: Vec<String> = f.meta_as("prompt_digests")?;
        let layers = (0..n_layers)
            .map(|l| {
                let t = f.tensor(&format!("resid.l{l:02}"))?;
                if t.shape != [prompt_digests.len(), d_model] {
                    return Err(Error::InvalidDump(format!(
                        "layer {l} has shape {:?}",
                        t.shape
                    )));
                }
                Ok(t.data.clone())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            n_layers,
            d_model,
            prompt_set: f.meta_as("prompt_set")?,
            prompt_digests,
            layers,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor_file().write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::read(path)?)
    }
}

/// Mean-pooled head outputs, `[n_prompts, d_head]` per `(layer, head)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureDump {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub prompt_set: String,
    pub prompt_digests: Vec<String>,
    /// Indexed by `layer * n_heads + head`.
    pub heads: Vec<Vec<f32>>,
}

impl SignatureDump {
    pub fn n_prompts(&self) -> usize {
        self.prompt_digests.len()
    }

    /// Signature vectors of one head, one per prompt.
    pub fn signatures(&self, layer: usize, head: usize) -> Vec<Vec<f64>> {
        self.heads[layer * self.n_heads + head]
            .chunks(self.d_head)
            .map(|r| r.iter().map(|&x| f64::from(x)).collect())
            .collect()
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        f.set_meta("kind", json!("signature"));
        f.set_meta("pooling", json!("mean"));
        f.set_meta("n_layers", json!(self.n_layers));
        f.set_meta("n_heads", json!(self.n_heads));
        f.set_meta("d_head", json!(self.d_head));
        f.set_meta("prompt_set", json!(self.prompt_set));
        f.set_meta("prompt_digests", json!(self.prompt_digests));
        for l in 0..self.n_layers {
            for h in 0..self.n_heads {
                f.insert(
                    format!("sig.l{l:02}.h{h:02}"),
                    vec![self.n_prompts(), self.d_head],
                    self.heads[l * self.n_heads + h].clone(),
                );
            }
        }
        f
    }

    pub fn from_tensor_file(f: &TensorFile) -> Result<Self> {
        expect_kind(f, "signature")?;
        let n_layers: usize = f.meta_as("n_layers")?;
        let n_heads: usize = f.meta_as("n_heads")?;
        let d_head: usize = f.meta_as("d_head")?;
        let prompt_digests: Vec<String> = f.meta_as("prompt_digests")?;
        let mut heads = Vec::with_capacity(n_layers * n_heads);
        for l in 0..n_layers {
            for h in 0..n_heads {
                let t = f.tensor(&format!("sig.l{l:02}.h{h:02}"))?;
                if t.shape != [prompt_digests.len(), d_head] {
                    return Err(Error::InvalidDump(format!(
                        "head ({l}, {h}) has shape {:?}",
                        t.shape
                    )));
                }
                heads.push(t.data.clone());
            }
        }
        Ok(Self {
            n_layers,
            n_heads,
            d_head,
            prompt_set: f.meta_as("prompt_set")?,
            prompt_digests,
            heads,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor_file().write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::read(path)?)
    }
}

fn expect_kind(f: &TensorFile, kind: &str) -> Result<()> {
    let found: String = f.meta_as("kind")?;
    if found != kind {
        return Err(Error::InvalidDump(format!(
            "expected a {kind} dump, found {found}"
        )));
    }
    Ok(())
}

fn mean_rows(m: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut acc = vec![0f64; cols];
    for r in 0..rows {
        for (a, &x) in acc.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *a += f64::from(x);
        }
    }
    acc.into_iter().map(|a| (a / rows as f64) as f32).collect()
}

/// Run one forward pass per prompt with every head active and collect all
/// three dump kinds.
pub fn dump_traces(
    params: &Parameters,
    prompts: &PromptSet,
) -> Result<(AttentionDump, ResidualDump, SignatureDump)> {
    let cfg = &params.config;
    let (nl, nh, dh, d) = (cfg.n_layers, cfg.n_heads, cfg.d_head, cfg.d_model);
    let mask = HeadMask::all_active(cfg);
    let digests = prompts.digests();
    let np = prompts.len();
    let mut attn = AttentionDump {
        n_layers: nl,
        n_heads: nh,
        prompt_set: prompts.name.clone(),
        prompt_digests: digests.clone(),
        seq_lens: Vec::with_capacity(np),
        patterns: Vec::with_capacity(np),
    };
    let mut resid = ResidualDump {
        n_layers: nl,
        d_model: d,
        prompt_set: prompts.name.clone(),
        prompt_digests: digests.clone(),
        layers: vec![Vec::with_capacity(np * d); nl],
    };
    let mut sig = SignatureDump {
        n_layers: nl,
        n_heads: nh,
        d_head: dh,
        prompt_set: prompts.name.clone(),
        prompt_digests: digests,
        heads: vec![Vec::with_capacity(np * dh); nl * nh],
    };
    for tokens in prompts.encode(cfg.bos_token()) {
        let t = tokens.len();
        if t == 0 {
            return Err(Error::usage("cannot dump an empty prompt"));
        }
        let trace = forward(params, &tokens, &mask)?;
        let mut buf = Vec::with_capacity(nl * nh * t * t);
        for (l, layer) in trace.layers.iter().enumerate() {
            buf.extend_from_slice(&layer.attention_scores);
            resid.layers[l].extend(mean_rows(&layer.resid_post_attn, t, d));
            for h in 0..nh {
                sig.heads[l * nh + h].extend(mean_rows(trace.head_output(l, h), t, dh));
            }
        }
        attn.seq_lens.push(t);
        attn.patterns.push(buf);
    }
    Ok((attn, resid, sig))
}

/// Attention patterns only, for prompt sets where nothing else is needed.
pub fn dump_attention(params: &Parameters, prompts: &PromptSet) -> Result<AttentionDump> {
    Ok(dump_traces(params, prompts)?.0)
}
