// SPDX-License-Identifier: MIT OR Apache-2.0

//! Measure how much each head resembles its neighbours within one model.
//! High commonness means the layer's heads attend alike.

mod common;

use seedstab::stability::commonness;

fn main() -> seedstab::Result<()> {
    let ckpt = common::train_seeds(&[0], &common::short_training(300))?;
    let (attn, _, _) = common::dumps(&ckpt, &common::prompts(20)?)?.remove(0);
    for layer in 0..attn.n_layers {
        let c = commonness(&attn, layer)?;
        let per: Vec<String> = c.per_head.iter().map(|v| format!("{v:.3}")).collect();
        println!(
            "layer {}: mean {:.3}, per head [{}]",
            layer + 1,
            c.mean,
            per.join(", ")
        );
    }
    Ok(())
}
