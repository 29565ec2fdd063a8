// SPDX-License-Identifier: MIT OR Apache-2.0

//! Adam and AdamW side by side. With zero weight decay they take identical
//! steps; with decay and no gradient every weight shrinks by `1 - lr * wd`
//! per step. The last part trains a few seeds with each and compares the
//! mean head stability.

mod common;

use seedstab::optim::{adam_update, TrainConfig};
use seedstab::stability::{sorted_mean, MatchMode, RefitComparison};

fn mean_stability(train: &TrainConfig) -> seedstab::Result<f64> {
    let seeds = [0, 1, 2];
    let ckpts = common::train_seeds(&seeds, train)?;
    let dumps = common::dumps(&ckpts, &common::prompts(20)?)?;
    let pairs: Vec<(u64, _)> = seeds[1..]
        .iter()
        .zip(&dumps[1..])
        .map(|(&s, d)| (s, &d.0))
        .collect();
    let heads = RefitComparison::new(0, &dumps[0].0, &pairs)?.all_heads(MatchMode::SameLayer)?;
    Ok(sorted_mean(
        &heads.iter().map(|h| h.overall).collect::<Vec<_>>(),
    ))
}

fn main() -> seedstab::Result<()> {
    // Zero decay: AdamW reduces to Adam.
    let grads = [0.3f32, -1.2, 0.05];
    let (mut a, mut b) = ([1.0f32, -2.0, 0.5], [1.0f32, -2.0, 0.5]);
    let (mut ma, mut va, mut mb, mut vb) = ([0.0; 3], [0.0; 3], [0.0; 3], [0.0; 3]);
    let adam = TrainConfig::adam(1e-2, 1, 10);
    let adamw0 = TrainConfig::adamw(1e-2, 0.0, 1, 10);
    for t in 1..=10 {
        adam_update(&mut a, &grads, &mut ma, &mut va, t, &adam);
        adam_update(&mut b, &grads, &mut mb, &mut vb, t, &adamw0);
    }
    println!("Adam    {a:?}\nAdamW0  {b:?}");

    // Decay with zero gradients: pure contraction.
    let wd = TrainConfig::adamw(1e-2, 0.1, 1, 10);
    let mut w = [1.0f32, -2.0, 0.5];
    let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
    adam_update(&mut w, &[0.0; 3], &mut m, &mut v, 1, &wd);
    println!("one decayed step: {w:?} (factor {})", 1.0 - 1e-2 * 0.1);

    let s_adam = mean_stability(&TrainConfig::adam(3e-3, 4, 300).with_n_ctx_train(64))?;
    let s_adamw = mean_stability(&common::short_training(300))?;
    println!("mean S: Adam {s_adam:.4}, AdamW {s_adamw:.4}");
    Ok(())
}
