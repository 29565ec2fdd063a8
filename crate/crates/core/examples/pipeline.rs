// SPDX-License-Identifier: MIT OR Apache-2.0

//! The whole experiment pipeline through the library: train every refit of
//! a configuration, dump traces, run every analysis and build the report.
//! The same steps back the `seedstab` command.
//!
//! ```text
//! cargo run --release --example pipeline -- [config.toml] [out-dir]
//! ```

use std::path::PathBuf;

use seedstab::experiment::{
    cmd_analyze, cmd_dump, cmd_report, cmd_train, Experiment, Overrides, Which,
};

const TINY: &str = r#"
name = "tiny"
seeds = [0, 1, 2]
out = "runs/tiny"
corpus = "data/shakespeare.txt"
prompts = "data/prompts/primary.json"
sweep = "data/prompts/sweep.json"

[arch]
depths = [2]
heads = [2]
attn_only = [false]
d_model = 16
n_ctx = 256

[train]
lr = 3e-3
batch_size = 4
max_steps = 200
n_ctx_train = 64

[[optimizers]]
kind = "Adam"

[[optimizers]]
kind = "AdamW"
weight_decay = 0.1

[analysis]
tsne_iters = 500
"#;

fn main() -> seedstab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args
        .get(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("seedstab-pipeline"));
    let overrides = Overrides {
        out: Some(out.clone()),
        ..Overrides::default()
    };
    let exp = match args.first() {
        Some(path) => Experiment::load(path, &overrides)?,
        None => Experiment::from_config(
            seedstab::experiment::ExperimentConfig::parse(TINY)?,
            PathBuf::from(env!("CARGO_MANIFEST_DIR")),
            &overrides,
        )?,
    };

    let t = cmd_train(&exp)?;
    println!(
        "train: {} trained, {} already current",
        t.trained.len(),
        t.skipped.len()
    );
    let d = cmd_dump(&exp)?;
    println!(
        "dump: {} dumped, {} already current",
        d.dumped.len(),
        d.skipped.len()
    );
    let a = cmd_analyze(&exp, &Which::ALL)?;
    println!(
        "analyze: {} ran, {} already current",
        a.ran.len(),
        a.skipped.len()
    );
    let r = cmd_report(&exp)?;
    for (panel, present) in &r.panels {
        println!(
            "  {panel}: {}",
            if *present { "present" } else { "missing" }
        );
    }
    println!("report written to {}", out.join("report").display());
    Ok(())
}
