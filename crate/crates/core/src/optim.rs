// SPDX-License-Identifier: MIT OR Apache-2.0

//! Adam and AdamW, and the single-refit training loop.
//!
//! The two optimizers share one update rule; AdamW additionally shrinks
//! every parameter by `1 - lr * weight_decay` before the moment-based step,
//! independently of the gradient moments.

use serde::{Deserialize, Serialize};

use crate::corpus::{Batcher, TokenCorpus};
use crate::error::{Error, Result};
use crate::store::Checkpoint;
use crate::tinylm::{init_params, loss_and_grads, ModelConfig, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        }
    }
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_n_ctx_train() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Required for AdamW, absent for Adam.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub checkpoint_every: usize,
    /// Length of each training sequence, BOS included.
    #[serde(default = "default_n_ctx_train")]
    pub n_ctx_train: usize,
}

impl TrainConfig {
    pub fn adam(lr: f64, batch_size: usize, max_steps: usize) -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr,
            weight_decay: None,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            batch_size,
            max_steps,
            checkpoint_every: max_steps.max(1),
            n_ctx_train: default_n_ctx_train(),
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64, batch_size: usize, max_steps: usize) -> Self {
        Self {
            optimizer: OptimizerKind::AdamW,
            weight_decay: Some(weight_decay),
            ..Self::adam(lr, batch_size, max_steps)
        }
    }

    pub fn with_n_ctx_train(mut self, n: usize) -> Self {
        self.n_ctx_train = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.optimizer, self.weight_decay) {
            (OptimizerKind::Adam, Some(_)) => {
                return Err(Error::config("Adam takes no weight_decay; use AdamW"))
            }
            (OptimizerKind::AdamW, None) => {
                return Err(Error::config("AdamW requires weight_decay"))
            }
            (_, Some(wd)) if !(wd >= 0.0 && wd.is_finite()) => {
                return Err(Error::config("weight_decay must be non-negative"))
            }
            _ => {}
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps must be positive"));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 || self.n_ctx_train < 2 {
            return Err(Error::config(
                "batch_size and checkpoint_every must be positive and n_ctx_train at least 2",
            ));
        }
        Ok(())
    }

    /// Short tag naming the optimizer variant, e.g. `adamw-wd0.1`.
    pub fn variant_tag(&self) -> String {
        match self.weight_decay {
            Some(wd) => format!("{}-wd{wd}", self.optimizer.as_str()),
            None => self.optimizer.as_str().to_string(),
        }
    }
}

/// First and second moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl OptimState {
    pub fn new(n_params: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One bias-corrected Adam(W) update over flat buffers. `t` is the 1-based
/// step number after increment.
pub fn adam_update(
    params: &mut [f32],
    grads: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    cfg: &TrainConfig,
) {
    let b1 = cfg.beta1 as f32;
    let b2 = cfg.beta2 as f32;
    // taken in f64 so that e.g. 1 - 0.999 is not polluted by the f32 rounding of 0.999
    let c1 = (1.0 - cfg.beta1) as f32;
    let c2 = (1.0 - cfg.beta2) as f32;
    let bc1 = (1.0 - cfg.beta1.powf(t as f64)) as f32;
    let bc2 = (1.0 - cfg.beta2.powf(t as f64)) as f32;
    let lr = cfg.lr as f32;
    let eps = cfg.eps as f32;
    let decay = match (cfg.optimizer, cfg.weight_decay) {
        (OptimizerKind::AdamW, Some(wd)) => Some((1.0 - cfg.lr * wd) as f32),
        _ => None,
    };
    for i in 0..params.len() {
        let g = grads[i];
        if let Some(f) = decay {
            params[i] *= f;
        }
        m[i] = b1 * m[i] + c1 * g;
        v[i] = b2 * v[i] + c2 * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Apply one optimizer step in place.
pub fn step(
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut OptimState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::usage("parameter, gradient and state shapes differ"));
    }
    if let Some(tensor) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient {
            tensor: tensor.to_string(),
        });
    }
    state.step += 1;
    adam_update(
        &mut params.data,
        &grads.data,
        &mut state.m,
        &mut state.v,
        state.step,
        cfg,
    );
    Ok(())
}

/// Train one refit from `init_params(model_cfg)` for `max_steps` updates.
///
/// On a non-finite loss or gradient the run stops with [`Error::Diverged`],
/// carrying the last snapshot taken every `checkpoint_every` steps.
pub fn train_refit(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    corpus: &TokenCorpus,
) -> Result<Checkpoint> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if train_cfg.n_ctx_train > model_cfg.n_ctx {
        return Err(Error::config(format!(
            "n_ctx_train {} exceeds model context {}",
            train_cfg.n_ctx_train, model_cfg.n_ctx
        )));
    }
    let mut params = init_params(model_cfg)?;
    let mut state = OptimState::new(params.len());
    let mut history = Vec::with_capacity(train_cfg.max_steps);
    let make = |params: &Parameters, step: usize, history: &[f32]| Checkpoint {
        model_cfg: model_cfg.clone(),
        train_cfg: train_cfg.clone(),
        seed: model_cfg.seed,
        step,
        params: params.clone(),
        loss_history: history.to_vec(),
    };
    if train_cfg.max_steps == 0 {
        return Ok(make(&params, 0, &history));
    }
    let mut batcher = Batcher::new(
        corpus,
        model_cfg.seed,
        train_cfg.n_ctx_train,
        train_cfg.batch_size,
        model_cfg.bos_token(),
    )?;
    let mut last_good = make(&params, 0, &history);
    for s in 0..train_cfg.max_steps {
        let batch = batcher.batch(s);
        let (loss, grads) = loss_and_grads(&params, &batch)?;
        let diverged = |reason: String, last: &Checkpoint| Error::Diverged {
            step: s,
            reason,
            last_good: Some(Box::new(last.clone())),
        };
        if !loss.is_finite() {
            return Err(diverged(format!("loss is {loss}"), &last_good));
        }
        match step(&mut params, &grads, &mut state, train_cfg) {
            Ok(()) => {}
            Err(e @ Error::NonFiniteGradient { .. }) => {
                return Err(diverged(e.to_string(), &last_good))
            }
            Err(e) => return Err(e),
        }
        history.push(loss as f32);
        let done = s + 1;
        if done % train_cfg.checkpoint_every == 0 {
            if let Some(t) = params.first_non_finite() {
                return Err(diverged(
                    format!("parameter tensor `{t}` is not finite"),
                    &last_good,
                ));
            }
            last_good = make(&params, done, &history);
            log::info!(
                "{} seed {} step {done}/{} loss {loss:.4}",
                model_cfg.label(),
                model_cfg.seed,
                train_cfg.max_steps
            );
        }
    }
    Ok(make(&params, train_cfg.max_steps, &history))
}

/// Mean of the last `window` entries of a loss history (fewer if shorter).
pub fn trailing_mean(history: &[f32], window: usize) -> f64 {
    let tail = &history[history.len().saturating_sub(window)..];
    tail.iter().map(|&x| f64::from(x)).sum::<f64>() / tail.len().max(1) as f64
}
