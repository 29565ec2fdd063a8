// SPDX-License-Identifier: MIT OR Apache-2.0

//! Recompute layer stability on prompt sets of growing length. Each longer
//! prompt extends the shorter one, so only the context length changes.

mod common;

use seedstab::stability::{prompt_length_sweep, SweepInput};
use seedstab::store::dump_attention;

fn main() -> seedstab::Result<()> {
    let seeds = [0, 1, 2];
    let ckpts = common::train_seeds(&seeds, &common::short_training(300))?;
    let sets = common::sweep_sets()?;

    let dumps: Vec<Vec<_>> = sets
        .iter()
        .map(|s| {
            ckpts
                .iter()
                .map(|c| dump_attention(&c.params, s))
                .collect::<seedstab::Result<_>>()
        })
        .collect::<seedstab::Result<_>>()?;
    let inputs: Vec<SweepInput> = sets
        .iter()
        .zip(&dumps)
        .map(|(s, d)| SweepInput {
            nominal_length: s.nominal_length.unwrap_or(0),
            anchor: &d[0],
            pairs: seeds[1..].iter().copied().zip(&d[1..]).collect(),
        })
        .collect();

    for (len, p) in prompt_length_sweep(0, &inputs)? {
        let s: Vec<String> = p.s_l.iter().map(|v| format!("{v:.4}")).collect();
        println!("{len:>3} words: S_l = [{}]", s.join(", "));
    }
    Ok(())
}
