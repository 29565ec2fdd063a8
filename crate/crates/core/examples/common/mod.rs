// SPDX-License-Identifier: MIT OR Apache-2.0

//! Helpers shared by the examples: a few quickly trained refits and the
//! bundled prompt sets.

#![allow(dead_code)]

use seedstab::corpus::{load_corpus, load_prompts, PromptSet, TokenCorpus};
use seedstab::optim::{train_refit, TrainConfig};
use seedstab::store::{dump_traces, AttentionDump, Checkpoint, ResidualDump, SignatureDump};
use seedstab::tinylm::ModelConfig;

pub const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data");

pub fn corpus() -> seedstab::Result<TokenCorpus> {
    load_corpus(format!("{DATA}/shakespeare.txt"), 0.1)
}

/// The first `n` primary prompts.
pub fn prompts(n: usize) -> seedstab::Result<PromptSet> {
    Ok(load_prompts(format!("{DATA}/prompts/primary.json"))?
        .remove(0)
        .truncated(n))
}

/// The length-sweep prompt sets, shortest first.
pub fn sweep_sets() -> seedstab::Result<Vec<PromptSet>> {
    load_prompts(format!("{DATA}/prompts/sweep.json"))
}

/// A 2-layer, 4-head model small enough to train in seconds.
pub fn small_model(seed: u64) -> ModelConfig {
    ModelConfig::new(2, 4, 16, 256).with_seed(seed)
}

pub fn short_training(steps: usize) -> TrainConfig {
    TrainConfig::adamw(3e-3, 0.1, 4, steps).with_n_ctx_train(64)
}

/// Train one refit per seed with the small model.
pub fn train_seeds(seeds: &[u64], train: &TrainConfig) -> seedstab::Result<Vec<Checkpoint>> {
    let corpus = corpus()?;
    seeds
        .iter()
        .map(|&s| {
            let c = train_refit(&small_model(s), train, &corpus)?;
            eprintln!(
                "trained seed {s}: final loss {:.3}",
                c.loss_history.last().copied().unwrap_or(f32::NAN)
            );
            Ok(c)
        })
        .collect()
}

/// Attention, residual and signature dumps of each checkpoint.
pub fn dumps(
    ckpts: &[Checkpoint],
    prompts: &PromptSet,
) -> seedstab::Result<Vec<(AttentionDump, ResidualDump, SignatureDump)>> {
    ckpts
        .iter()
        .map(|c| dump_traces(&c.params, prompts))
        .collect()
}
