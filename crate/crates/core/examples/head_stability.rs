// SPDX-License-Identifier: MIT OR Apache-2.0

//! Score how reproducible each attention head is across training seeds.
//!
//! Seed 0 is the anchor. For every anchor head, each other refit contributes
//! its best-matching head in the same layer, and the head's stability S is
//! the mean of those best scores.

mod common;

use seedstab::stability::{layer_profile, MatchMode, RefitComparison};

fn main() -> seedstab::Result<()> {
    let seeds = [0, 1, 2, 3];
    let ckpts = common::train_seeds(&seeds, &common::short_training(300))?;
    let prompts = common::prompts(20)?;
    let dumps = common::dumps(&ckpts, &prompts)?;

    let anchor = &dumps[0].0;
    let pairs: Vec<(u64, _)> = seeds[1..]
        .iter()
        .zip(&dumps[1..])
        .map(|(&s, d)| (s, &d.0))
        .collect();
    let cmp = RefitComparison::new(seeds[0], anchor, &pairs)?;
    let heads = cmp.all_heads(MatchMode::SameLayer)?;

    println!("layer head     S   min pair  max pair");
    for h in &heads {
        println!(
            "{:>5} {:>4} {:.4}   {:.4}    {:.4}",
            h.layer + 1,
            h.head + 1,
            h.overall,
            h.min_pair(),
            h.max_pair()
        );
    }
    let p = layer_profile(&heads, anchor.n_layers, anchor.n_heads)?;
    println!(
        "S_l per layer: {:?}",
        p.s_l.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>()
    );
    println!(
        "most stable layer {}, least stable layer {}, gap {:.4}",
        p.l_max, p.l_min, p.delta_s
    );
    Ok(())
}
