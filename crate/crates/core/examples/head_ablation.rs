// SPDX-License-Identifier: MIT OR Apache-2.0

//! Zero each head's output in turn, measure the perplexity change, and
//! correlate it with the head's stability across seeds.

mod common;

use seedstab::ablation::{ablate_all_heads, stability_ablation_correlation};
use seedstab::stability::{MatchMode, RefitComparison};

fn main() -> seedstab::Result<()> {
    let seeds = [0, 1, 2];
    let ckpts = common::train_seeds(&seeds, &common::short_training(300))?;
    let prompts = common::prompts(20)?;
    let dumps = common::dumps(&ckpts, &prompts)?;
    let pairs: Vec<(u64, _)> = seeds[1..]
        .iter()
        .zip(&dumps[1..])
        .map(|(&s, d)| (s, &d.0))
        .collect();
    let heads = RefitComparison::new(0, &dumps[0].0, &pairs)?.all_heads(MatchMode::SameLayer)?;

    let records = ablate_all_heads(&ckpts[0].params, &prompts)?;
    println!("baseline perplexity {:.3}", records[0].ppl_baseline);
    for (r, h) in records.iter().zip(&heads) {
        println!(
            "layer {} head {}: S {:.3}, delta PPL {:+.4}",
            r.layer + 1,
            r.head + 1,
            h.overall,
            r.delta_ppl
        );
    }
    for c in stability_ablation_correlation(&records, &heads)? {
        match c.r {
            Some(r) => println!(
                "layer {}: pearson r = {r:+.3} over {} heads",
                c.layer + 1,
                c.n_heads
            ),
            None => println!("layer {}: correlation undefined", c.layer + 1),
        }
    }
    Ok(())
}
