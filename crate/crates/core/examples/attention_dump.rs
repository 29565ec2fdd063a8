// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dump the attention patterns, mean-pooled residual streams and head
//! signatures of a trained model, then read them back from disk.

mod common;

use seedstab::store::{AttentionDump, ResidualDump, SignatureDump};

fn main() -> seedstab::Result<()> {
    let ckpt = common::train_seeds(&[0], &common::short_training(200))?.remove(0);
    let prompts = common::prompts(8)?;
    let (attn, resid, sig) = common::dumps(std::slice::from_ref(&ckpt), &prompts)?.remove(0);

    let dir = tempfile_dir();
    attn.write(dir.join("attn.bin"))?;
    resid.write(dir.join("resid.bin"))?;
    sig.write(dir.join("sig.bin"))?;

    // Reading validates every pattern: causal and rows summing to one.
    let attn = AttentionDump::read(dir.join("attn.bin"))?;
    let resid = ResidualDump::read(dir.join("resid.bin"))?;
    let sig = SignatureDump::read(dir.join("sig.bin"))?;

    println!(
        "{} prompts, {} layers x {} heads",
        attn.n_prompts(),
        attn.n_layers,
        attn.n_heads
    );
    let t = attn.seq_lens[0];
    let a = attn.pattern(0, 0, 0);
    println!("prompt 0 has {t} tokens; layer 1 head 1, last query row:");
    let last: Vec<String> = a[(t - 1) * t..]
        .iter()
        .take(8)
        .map(|v| format!("{v:.3}"))
        .collect();
    println!("  [{} ...]", last.join(", "));
    println!(
        "residual point cloud per layer: {} x {}",
        resid.n_prompts(),
        resid.d_model
    );
    println!(
        "signatures of one head: {} x {}",
        sig.n_prompts(),
        sig.d_head
    );
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join("seedstab-attention-dump");
    std::fs::create_dir_all(&d).expect("temp dir");
    d
}
