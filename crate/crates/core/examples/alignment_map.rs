// SPDX-License-Identifier: MIT OR Apache-2.0

//! Let anchor heads match any layer of the pair refits and tally where the
//! best matches land. Row `i` of the map is the distribution of matched
//! layers for anchor layer `i`.

mod common;

use seedstab::stability::{alignment_map, MatchMode, RefitComparison};

fn main() -> seedstab::Result<()> {
    let seeds = [0, 1, 2];
    let ckpts = common::train_seeds(&seeds, &common::short_training(300))?;
    let dumps = common::dumps(&ckpts, &common::prompts(20)?)?;
    let pairs: Vec<(u64, _)> = seeds[1..]
        .iter()
        .zip(&dumps[1..])
        .map(|(&s, d)| (s, &d.0))
        .collect();
    let cmp = RefitComparison::new(0, &dumps[0].0, &pairs)?;

    let same = cmp.all_heads(MatchMode::SameLayer)?;
    let cross = cmp.all_heads(MatchMode::CrossLayer)?;
    for (s, c) in same.iter().zip(&cross) {
        // A larger candidate pool can only raise the best score.
        assert!(c.overall >= s.overall);
    }
    let map = alignment_map(&cross, dumps[0].0.n_layers)?;
    println!("anchor layer -> fraction of best matches per pair layer");
    for (i, row) in map.h.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
        println!("  {}: [{}]", i + 1, cells.join(", "));
    }
    Ok(())
}
