// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation statistics over a prompt set.

use super::backward::token_nll;
use super::forward::{forward, run};
use super::params::{HeadMask, Params};
use super::real::Real;
use crate::corpus::PromptSet;
use crate::error::{Error, Result};

/// Dense `rows x cols` matrix of 64-bit statistics, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_means(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().sum::<f64>() / self.cols as f64)
            .collect()
    }
}

/// Summed negative log-likelihood and number of scored positions of one
/// token sequence.
pub fn sequence_nll<T: Real>(
    params: &Params<T>,
    tokens: &[u32],
    mask: &HeadMask,
) -> Result<(f64, usize)> {
    let acts = run(params, tokens, Some(mask))?;
    let v = params.config.d_vocab;
    let mut total = 0.0;
    for pos in 0..tokens.len() - 1 {
        total += token_nll(&acts.logits[pos * v..(pos + 1) * v], tokens[pos + 1]);
    }
    Ok((total, tokens.len() - 1))
}

/// `exp` of the mean next-token cross-entropy over every scored position of
/// every prompt. Prompts that tokenize to fewer than two tokens are skipped.
pub fn perplexity<T: Real>(
    params: &Params<T>,
    prompts: &PromptSet,
    mask: &HeadMask,
) -> Result<f64> {
    let bos = params.config.bos_token();
    let mut nll = 0.0;
    let mut count = 0usize;
    for (i, tokens) in prompts.encode(bos).iter().enumerate() {
        if tokens.len() < 2 {
            log::warn!(
                "prompt {i} of set `{}` has no next-token target; skipped",
                prompts.name
            );
            continue;
        }
        let (s, n) = sequence_nll(params, tokens, mask)?;
        nll += s;
        count += n;
    }
    if count == 0 {
        return Err(Error::usage(format!(
            "prompt set `{}` has no scorable prompts",
            prompts.name
        )));
    }
    Ok((nll / count as f64).exp())
}

/// Frobenius norm of every head's query weight slice, `n_layers x n_heads`.
/// Biases are not included.
pub fn query_norms<T: Real>(params: &Params<T>) -> Grid {
    let cfg = &params.config;
    let mut out = Grid::zeros(cfg.n_layers, cfg.n_heads);
    for l in 0..cfg.n_layers {
        for h in 0..cfg.n_heads {
            let ss: f64 = params
                .w_q_head(l, h)
                .iter()
                .map(|&x| x.to_f64() * x.to_f64())
                .sum();
            out.set(l, h, ss.sqrt());
        }
    }
    out
}

/// Mean l2 norm of each head's output vector, pooled over every position of
/// every prompt, `n_layers x n_heads`.
pub fn head_output_norms<T: Real>(params: &Params<T>, prompts: &PromptSet) -> Result<Grid> {
    let cfg = &params.config;
    let mask = HeadMask::all_active(cfg);
    let mut sums = Grid::zeros(cfg.n_layers, cfg.n_heads);
    let mut positions = 0usize;
    for tokens in prompts.encode(cfg.bos_token()) {
        if tokens.is_empty() {
            continue;
        }
        let trace = forward(params, &tokens, &mask)?;
        for l in 0..cfg.n_layers {
            for h in 0..cfg.n_heads {
                let out = trace.head_output(l, h);
                let s: f64 = out
                    .chunks(cfg.d_head)
                    .map(|row| row.iter().map(|&x| x.to_f64().powi(2)).sum::<f64>().sqrt())
                    .sum();
                sums.set(l, h, sums.get(l, h) + s);
            }
        }
        positions += tokens.len();
    }
    if positions == 0 {
        return Err(Error::usage(format!(
            "prompt set `{}` is empty",
            prompts.name
        )));
    }
    sums.values.iter_mut().for_each(|x| *x /= positions as f64);
    Ok(sums)
}
