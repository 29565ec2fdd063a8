// SPDX-License-Identifier: MIT OR Apache-2.0

//! Compare residual-stream geometry across seeds with RBF kernel CKA and
//! set it beside the head stability of the same layer.

mod common;

use seedstab::cka::{residual_stability, DEFAULT_THRESHOLD};
use seedstab::stability::{layer_profile, MatchMode, RefitComparison};

fn main() -> seedstab::Result<()> {
    let seeds = [0, 1, 2, 3];
    let ckpts = common::train_seeds(&seeds, &common::short_training(300))?;
    let dumps = common::dumps(&ckpts, &common::prompts(40)?)?;

    let resid_pairs: Vec<_> = dumps[1..].iter().map(|d| &d.1).collect();
    let cka = residual_stability(&dumps[0].1, &resid_pairs, DEFAULT_THRESHOLD)?;

    let attn_pairs: Vec<(u64, _)> = seeds[1..]
        .iter()
        .zip(&dumps[1..])
        .map(|(&s, d)| (s, &d.0))
        .collect();
    let heads =
        RefitComparison::new(0, &dumps[0].0, &attn_pairs)?.all_heads(MatchMode::SameLayer)?;
    let profile = layer_profile(&heads, dumps[0].0.n_layers, dumps[0].0.n_heads)?;

    println!("layer   CKA    S_l");
    for (l, (c, s)) in cka.iter().zip(&profile.s_l).enumerate() {
        println!("{:>5}  {c:.4} {s:.4}", l + 1);
    }
    Ok(())
}
