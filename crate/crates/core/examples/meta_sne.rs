// SPDX-License-Identifier: MIT OR Apache-2.0

//! Embed every head of several refits in two dimensions by the geometry of
//! its signature cloud. Each head becomes the upper triangle of its pairwise
//! distance matrix over the prompts, and t-SNE lays those vectors out.

mod common;

use seedstab::metasne::{head_distance_matrix, meta_feature, tsne, TsneConfig};

fn main() -> seedstab::Result<()> {
    let seeds = [0, 1, 2];
    let ckpts = common::train_seeds(&seeds, &common::short_training(300))?;
    let dumps = common::dumps(&ckpts, &common::prompts(16)?)?;

    let mut geoms = Vec::new();
    for (&seed, (_, _, sig)) in seeds.iter().zip(&dumps) {
        for l in 0..sig.n_layers {
            for h in 0..sig.n_heads {
                geoms.push(head_distance_matrix(sig, format!("seed{seed}"), (l, h))?);
            }
        }
    }
    let features: Vec<Vec<f64>> = geoms.iter().map(meta_feature).collect();
    let cfg = TsneConfig::for_points(features.len(), 0);
    println!("{} heads, perplexity {:.2}", features.len(), cfg.perplexity);
    let emb = tsne(&features, &cfg)?;

    let after = emb.kl_at(cfg.exaggeration_iters).unwrap_or(f64::NAN);
    println!(
        "KL after exaggeration {after:.4}, final {:.4}",
        emb.final_kl()
    );
    for (g, p) in geoms.iter().zip(&emb.points).take(8) {
        println!(
            "{} L{} H{} (r = {:.2}): ({:+.3}, {:+.3})",
            g.refit,
            g.layer + 1,
            g.head + 1,
            g.relative_depth,
            p[0],
            p[1]
        );
    }
    Ok(())
}
