// SPDX-License-Identifier: MIT OR Apache-2.0

//! Instrumented forward pass.

use super::params::{HeadMask, Params};
use super::real::{matmul, Real};
use crate::error::{Error, Result};

/// Cached layernorm statistics needed by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct MlpActs<T> {
    pub ln2: LnCache<T>,
    pub ln2_out: Vec<T>,
    pub pre: Vec<T>,
    pub post: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockActs<T> {
    pub ln1: LnCache<T>,
    pub ln1_out: Vec<T>,
    /// `[n_heads, T, d_head]`
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// `[n_heads, T, T]`, post-softmax.
    pub pattern: Vec<T>,
    /// `[n_heads, T, d_head]`, zero for masked heads.
    pub z: Vec<T>,
    pub resid_mid: Vec<T>,
    pub mlp: Option<MlpActs<T>>,
    pub active: Vec<bool>,
}

#[derive(Debug, Clone)]
pub(crate) struct Activations<T> {
    pub blocks: Vec<BlockActs<T>>,
    pub lnf: LnCache<T>,
    pub lnf_out: Vec<T>,
    pub logits: Vec<T>,
}

/// Activations of one layer captured during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace<T = f32> {
    /// Post-softmax causal attention, `[n_heads, T, T]`.
    pub attention_scores: Vec<T>,
    /// Value-weighted per-head output before `W_O`, `[n_heads, T, d_head]`.
    pub head_outputs: Vec<T>,
    /// Residual stream right after the attention sublayer is added, `[T, d_model]`.
    pub resid_post_attn: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T = f32> {
    pub seq_len: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_model: usize,
    pub d_vocab: usize,
    pub layers: Vec<LayerTrace<T>>,
    /// `[T, d_vocab]`
    pub logits: Vec<T>,
}

impl<T: Real> ForwardTrace<T> {
    /// `T x T` attention matrix of one head.
    pub fn pattern(&self, layer: usize, head: usize) -> &[T] {
        let n = self.seq_len * self.seq_len;
        &self.layers[layer].attention_scores[head * n..(head + 1) * n]
    }

    /// `T x d_head` output of one head.
    pub fn head_output(&self, layer: usize, head: usize) -> &[T] {
        let n = self.seq_len * self.d_head;
        &self.layers[layer].head_outputs[head * n..(head + 1) * n]
    }

    pub fn logits_at(&self, pos: usize) -> &[T] {
        &self.logits[pos * self.d_vocab..(pos + 1) * self.d_vocab]
    }
}

pub(crate) fn check_tokens<T: Real>(params: &Params<T>, tokens: &[u32]) -> Result<()> {
    let cfg = &params.config;
    if tokens.is_empty() {
        return Err(Error::usage("empty token sequence"));
    }
    if tokens.len() > cfg.n_ctx {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            n_ctx: cfg.n_ctx,
        });
    }
    if let Some(&token) = tokens.iter().find(|&&t| t as usize >= cfg.d_vocab) {
        return Err(Error::TokenOutOfRange {
            token,
            d_vocab: cfg.d_vocab,
        });
    }
    Ok(())
}

pub(crate) fn layernorm<T: Real>(
    x: &[T],
    w: &[T],
    b: &[T],
    rows: usize,
    d: usize,
    eps: T,
) -> (Vec<T>, LnCache<T>) {
    let mut out = vec![T::ZERO; rows * d];
    let mut xhat = vec![T::ZERO; rows * d];
    let mut rstd = vec![T::ZERO; rows];
    let inv_d = T::ONE / T::from_f64(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::ONE / (var + eps).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let xh = (row[i] - mean) * rs;
            xhat[r * d + i] = xh;
            out[r * d + i] = xh * w[i] + b[i];
        }
    }
    (out, LnCache { xhat, rstd })
}

/// Softmax over the causal prefix of each row after scaling; entries above
/// the diagonal are set to exactly zero.
fn causal_softmax<T: Real>(scores: &mut [T], t: usize, scale: T) {
    for i in 0..t {
        let row = &mut scores[i * t..(i + 1) * t];
        let mut max = T::NEG_INFINITY;
        for s in row[..=i].iter_mut() {
            *s *= scale;
            max = max.max(*s);
        }
        let mut sum = T::ZERO;
        for s in row[..=i].iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        let inv = T::ONE / sum;
        row[..=i].iter_mut().for_each(|s| *s *= inv);
        row[i + 1..].iter_mut().for_each(|s| *s = T::ZERO);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let th = (c * (x + a * x * x * x)).tanh();
    half * (T::ONE + th)
        + half * x * (T::ONE - th * th) * c * (T::ONE + T::from_f64(3.0) * a * x * x)
}

pub(crate) fn add_bias_rows<T: Real>(m: &mut [T], bias: &[T], rows: usize, cols: usize) {
    for r in 0..rows {
        for (x, &b) in m[r * cols..(r + 1) * cols].iter_mut().zip(bias) {
            *x += b;
        }
    }
}

pub(crate) fn run<T: Real>(
    params: &Params<T>,
    tokens: &[u32],
    mask: Option<&HeadMask>,
) -> Result<Activations<T>> {
    check_tokens(params, tokens)?;
    let cfg = &params.config;
    if let Some(m) = mask {
        m.check(cfg)?;
    }
    let (t, d, h, dh, v) = (
        tokens.len(),
        cfg.d_model,
        cfg.n_heads,
        cfg.d_head,
        cfg.d_vocab,
    );
    let lay = &params.layout;
    let p = &params.data;
    let eps = T::from_f64(cfg.layernorm_eps);
    let inv_scale = T::from_f64(1.0 / cfg.attn_scale);

    let mut x = vec![T::ZERO; t * d];
    for (pos, &tok) in tokens.iter().enumerate() {
        let e = &p[lay.w_e + tok as usize * d..][..d];
        let pe = &p[lay.w_pos + pos * d..][..d];
        for i in 0..d {
            x[pos * d + i] = e[i] + pe[i];
        }
    }

    let mut blocks = Vec::with_capacity(lay.blocks.len());
    for (l, b) in lay.blocks.iter().enumerate() {
        let (ln1_out, ln1) = layernorm(&x, &p[b.ln1_w..][..d], &p[b.ln1_b..][..d], t, d, eps);
        let mut q = vec![T::ZERO; h * t * dh];
        let mut k = vec![T::ZERO; h * t * dh];
        let mut vv = vec![T::ZERO; h * t * dh];
        let mut pattern = vec![T::ZERO; h * t * t];
        let mut z = vec![T::ZERO; h * t * dh];
        let mut attn_out = vec![T::ZERO; t * d];
        let active: Vec<bool> = (0..h)
            .map(|hi| mask.is_none_or(|m| m.is_active(l, hi)))
            .collect();
        for hi in 0..h {
            let w_span = hi * dh * d;
            let hs = hi * t * dh;
            for (buf, w_off, b_off) in [
                (&mut q, b.w_q, b.b_q),
                (&mut k, b.w_k, b.b_k),
                (&mut vv, b.w_v, b.b_v),
            ] {
                let out = &mut buf[hs..hs + t * dh];
                matmul(
                    out,
                    &ln1_out,
                    &p[w_off + w_span..][..dh * d],
                    t,
                    d,
                    dh,
                    false,
                    true,
                    false,
                );
                add_bias_rows(out, &p[b_off + hi * dh..][..dh], t, dh);
            }
            let pat = &mut pattern[hi * t * t..(hi + 1) * t * t];
            matmul(
                pat,
                &q[hs..hs + t * dh],
                &k[hs..hs + t * dh],
                t,
                dh,
                t,
                false,
                true,
                false,
            );
            causal_softmax(pat, t, inv_scale);
            if active[hi] {
                let zh = &mut z[hs..hs + t * dh];
                matmul(zh, pat, &vv[hs..hs + t * dh], t, t, dh, false, false, false);
                matmul(
                    &mut attn_out,
                    zh,
                    &p[b.w_o + w_span..][..dh * d],
                    t,
                    dh,
                    d,
                    false,
                    false,
                    true,
                );
            }
        }
        x.iter_mut().zip(&attn_out).for_each(|(a, &o)| *a += o);
        let resid_mid = x.clone();

        let mlp = match b.mlp {
            Some(mo) => {
                let dm = cfg.d_mlp;
                let (ln2_out, ln2) =
                    layernorm(&x, &p[mo.ln2_w..][..d], &p[mo.ln2_b..][..d], t, d, eps);
                let mut pre = vec![T::ZERO; t * dm];
                matmul(
                    &mut pre,
                    &ln2_out,
                    &p[mo.w_in..][..d * dm],
                    t,
                    d,
                    dm,
                    false,
                    false,
                    false,
                );
                add_bias_rows(&mut pre, &p[mo.b_in..][..dm], t, dm);
                let post: Vec<T> = pre.iter().map(|&a| gelu(a)).collect();
                let mut out = vec![T::ZERO; t * d];
                matmul(
                    &mut out,
                    &post,
                    &p[mo.w_out..][..dm * d],
                    t,
                    dm,
                    d,
                    false,
                    false,
                    false,
                );
                add_bias_rows(&mut out, &p[mo.b_out..][..d], t, d);
                x.iter_mut().zip(&out).for_each(|(a, &o)| *a += o);
                Some(MlpActs {
                    ln2,
                    ln2_out,
                    pre,
                    post,
                })
            }
            None => None,
        };

        blocks.push(BlockActs {
            ln1,
            ln1_out,
            q,
            k,
            v: vv,
            pattern,
            z,
            resid_mid,
            mlp,
            active,
        });
    }

    let (lnf_out, lnf) = layernorm(&x, &p[lay.lnf_w..][..d], &p[lay.lnf_b..][..d], t, d, eps);
    let mut logits = vec![T::ZERO; t * v];
    matmul(
        &mut logits,
        &lnf_out,
        &p[lay.w_u..][..d * v],
        t,
        d,
        v,
        false,
        false,
        false,
    );
    add_bias_rows(&mut logits, &p[lay.b_u..][..v], t, v);

    Ok(Activations {
        blocks,
        lnf,
        lnf_out,
        logits,
    })
}

impl<T: Real> Activations<T> {
    pub(crate) fn into_trace(self, params: &Params<T>, seq_len: usize) -> ForwardTrace<T> {
        let cfg = &params.config;
        ForwardTrace {
            seq_len,
            n_heads: cfg.n_heads,
            d_head: cfg.d_head,
            d_model: cfg.d_model,
            d_vocab: cfg.d_vocab,
            layers: self
                .blocks
                .into_iter()
                .map(|b| LayerTrace {
                    attention_scores: b.pattern,
                    head_outputs: b.z,
                    resid_post_attn: b.resid_mid,
                })
                .collect(),
            logits: self.logits,
        }
    }
}

/// Run the model on one token sequence with the given heads active.
///
/// Masked heads contribute exactly zero to the attention sublayer output;
/// their attention patterns are still recorded.
pub fn forward<T: Real>(
    params: &Params<T>,
    tokens: &[u32],
    mask: &HeadMask,
) -> Result<ForwardTrace<T>> {
    Ok(run(params, tokens, Some(mask))?.into_trace(params, tokens.len()))
}

/// Forward pass with every head active.
pub fn forward_unmasked<T: Real>(params: &Params<T>, tokens: &[u32]) -> Result<ForwardTrace<T>> {
    Ok(run(params, tokens, None)?.into_trace(params, tokens.len()))
}
