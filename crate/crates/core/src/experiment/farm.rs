// SPDX-License-Identifier: MIT OR Apache-2.0

//! The refit farm: train and dump every refit of an experiment with a pool
//! of worker threads. Each worker owns one refit end to end. Work whose
//! outputs are already on disk and current is skipped, so an interrupted
//! run resumes where it stopped.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::json;

use super::tables::{file_digest, write_json, Manifest};
use super::{Experiment, RefitSpec};
use crate::corpus::{load_corpus, sha256_hex, PromptSet, TokenCorpus};
use crate::error::{Error, Result};
use crate::optim::train_refit;
use crate::store::{dump_attention, dump_traces, load_checkpoint, save_checkpoint};

/// Run `f` over `items` on `workers` threads, returning results in input order.
pub(crate) fn run_parallel<T: Sync, R: Send>(
    workers: usize,
    items: &[T],
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

/// Outcome of a training run over all refits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSummary {
    pub trained: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
    /// Optimizer steps actually executed.
    pub steps_run: usize,
}

fn checkpoint_is_current(spec: &RefitSpec) -> bool {
    load_checkpoint(spec.paths.checkpoint()).is_ok_and(|c| {
        c.model_cfg == spec.model_cfg
            && c.train_cfg == spec.train_cfg
            && c.step == spec.train_cfg.max_steps
    })
}

/// Train every refit whose checkpoint is missing or stale.
///
/// A refit that diverges keeps its last finite snapshot as
/// `ckpt-last-good.bin` and is reported in `failed`.
pub fn cmd_train(exp: &Experiment) -> Result<TrainSummary> {
    let refits = exp.refits()?;
    let mut summary = TrainSummary::default();
    let mut pending = Vec::new();
    for spec in refits {
        if checkpoint_is_current(&spec) {
            summary.skipped.push(spec.label());
        } else {
            pending.push(spec);
        }
    }
    if pending.is_empty() {
        return Ok(summary);
    }
    let corpus: TokenCorpus = load_corpus(exp.corpus_path(), exp.config.val_fraction)?;
    log::info!(
        "training {} refits on {} workers ({} skipped)",
        pending.len(),
        exp.workers,
        summary.skipped.len()
    );
    let results = run_parallel(exp.workers, &pending, |spec| -> Result<()> {
        match train_refit(&spec.model_cfg, &spec.train_cfg, &corpus) {
            Ok(ckpt) => save_checkpoint(&ckpt, spec.paths.checkpoint()),
            Err(Error::Diverged {
                step,
                reason,
                last_good,
            }) => {
                if let Some(c) = &last_good {
                    save_checkpoint(c, spec.paths.dir.join("ckpt-last-good.bin"))?;
                }
                Err(Error::Diverged {
                    step,
                    reason,
                    last_good: None,
                })
            }
            Err(e) => Err(e),
        }
    });
    for (spec, r) in pending.iter().zip(results) {
        match r {
            Ok(()) => {
                summary.trained.push(spec.label());
                summary.steps_run += spec.train_cfg.max_steps;
            }
            Err(e) => summary.failed.push((spec.label(), e.to_string())),
        }
    }
    Ok(summary)
}

/// Outcome of a dump run over all refits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DumpSummary {
    pub dumped: Vec<String>,
    pub skipped: Vec<String>,
}

fn prompt_set_digest(set: &PromptSet) -> String {
    sha256_hex(set.digests().join("\n").as_bytes())
}

/// Write attention, residual and signature dumps over the primary prompts,
/// and an attention dump per sweep prompt set, for every refit.
pub fn cmd_dump(exp: &Experiment) -> Result<DumpSummary> {
    let refits = exp.refits()?;
    for spec in &refits {
        let ckpt = spec.paths.checkpoint();
        if !ckpt.exists() {
            return Err(Error::MissingInput {
                path: ckpt,
                command: "train",
            });
        }
    }
    let primary = exp.primary_prompts()?;
    let sweeps = exp.sweep_sets()?;
    let params = json!({ "sets": std::iter::once(&primary).chain(&sweeps).map(|s| s.name.clone()).collect::<Vec<_>>() });

    let results = run_parallel(exp.workers, &refits, |spec| -> Result<bool> {
        let p = &spec.paths;
        let manifest_path = p.dir.join("dumps.json");
        let mut inputs = BTreeMap::new();
        inputs.insert(exp.rel(&p.checkpoint()), file_digest(&p.checkpoint())?);
        for s in std::iter::once(&primary).chain(&sweeps) {
            inputs.insert(format!("prompts/{}", s.name), prompt_set_digest(s));
        }
        if Manifest::is_current(&manifest_path, &exp.out_root, "dump", &params, &inputs) {
            return Ok(false);
        }
        let ckpt = load_checkpoint(p.checkpoint())?;
        let (attn, resid, sig) = dump_traces(&ckpt.params, &primary)?;
        let mut written = vec![p.attention(), p.residual(), p.signature()];
        attn.write(p.attention())?;
        resid.write(p.residual())?;
        sig.write(p.signature())?;
        for s in &sweeps {
            let path = p.attention_for(&s.name);
            dump_attention(&ckpt.params, s)?.write(&path)?;
            written.push(path);
        }
        let outputs = written
            .iter()
            .map(|f| Ok((exp.rel(f), file_digest(f)?)))
            .collect::<Result<_>>()?;
        write_json(
            &manifest_path,
            &Manifest {
                analysis: "dump".into(),
                params: params.clone(),
                inputs,
                outputs,
            },
        )?;
        Ok(true)
    });
    let mut summary = DumpSummary::default();
    for (spec, r) in refits.iter().zip(results) {
        if r? {
            summary.dumped.push(spec.label());
        } else {
            summary.skipped.push(spec.label());
        }
    }
    Ok(summary)
}
