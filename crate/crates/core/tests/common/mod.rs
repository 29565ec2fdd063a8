// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixtures and brute-force reference implementations shared by the
//! integration tests and the acceptance suite.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seedstab::store::AttentionDump;

/// Random causal row-stochastic attention dump with square `t x t` matrices.
pub fn random_dump(
    seed: u64,
    n_layers: usize,
    n_heads: usize,
    n_prompts: usize,
    t: usize,
) -> AttentionDump {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns = (0..n_prompts)
        .map(|_| {
            let mut buf = Vec::with_capacity(n_layers * n_heads * t * t);
            for _ in 0..n_layers * n_heads {
                for i in 0..t {
                    let w: Vec<f64> = (0..=i).map(|_| rng.random::<f64>() + 1e-3).collect();
                    let s: f64 = w.iter().sum();
                    buf.extend((0..t).map(|j| if j <= i { (w[j] / s) as f32 } else { 0.0 }));
                }
            }
            buf
        })
        .collect();
    AttentionDump {
        n_layers,
        n_heads,
        prompt_set: "synthetic".into(),
        prompt_digests: (0..n_prompts).map(|p| format!("prompt-{p}")).collect(),
        seq_lens: vec![t; n_prompts],
        patterns,
    }
}

/// Mean of the values added smallest first.
pub fn ascending_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut s = 0.0;
    for x in &v {
        s += x;
    }
    s / v.len() as f64
}

fn matrix(d: &AttentionDump, p: usize, l: usize, h: usize) -> Vec<f64> {
    let t = d.seq_lens[p];
    let base = (l * d.n_heads + h) * t * t;
    d.patterns[p][base..base + t * t]
        .iter()
        .map(|&x| f64::from(x))
        .collect()
}

/// Cosine of two flattened matrices, accumulated in index order.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        dot += a[i] * b[i];
    }
    for x in a {
        na += x * x;
    }
    for x in b {
        nb += x * x;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub fn pair_similarity(
    a: &AttentionDump,
    b: &AttentionDump,
    ha: (usize, usize),
    hb: (usize, usize),
) -> f64 {
    let sims: Vec<f64> = (0..a.patterns.len())
        .map(|p| cosine(&matrix(a, p, ha.0, ha.1), &matrix(b, p, hb.0, hb.1)))
        .collect();
    ascending_mean(&sims)
}

/// Per anchor head in `(layer, head)` order: the overall score and, per
/// pair, the best score and best-matching head. Candidates are enumerated
/// layer-major and a later candidate only wins with a strictly higher score.
pub fn brute_stability(
    anchor: &AttentionDump,
    pairs: &[&AttentionDump],
    cross: bool,
) -> Vec<(f64, Vec<(f64, (usize, usize))>)> {
    let mut out = Vec::new();
    for l in 0..anchor.n_layers {
        for h in 0..anchor.n_heads {
            let mut per_pair = Vec::new();
            for pair in pairs {
                let mut best = (f64::NEG_INFINITY, (0, 0));
                for l2 in 0..pair.n_layers {
                    if !cross && l2 != l {
                        continue;
                    }
                    for h2 in 0..pair.n_heads {
                        let s = pair_similarity(anchor, pair, (l, h), (l2, h2));
                        if s > best.0 {
                            best = (s, (l2, h2));
                        }
                    }
                }
                per_pair.push(best);
            }
            let overall = ascending_mean(&per_pair.iter().map(|b| b.0).collect::<Vec<_>>());
            out.push((overall, per_pair));
        }
    }
    out
}

/// Row-normalised counts of cross-layer best-match layers.
pub fn brute_alignment(anchor: &AttentionDump, pairs: &[&AttentionDump]) -> Vec<Vec<f64>> {
    let l = anchor.n_layers;
    let mut counts = vec![vec![0usize; l]; l];
    for (i, (_, per_pair)) in brute_stability(anchor, pairs, true).iter().enumerate() {
        for (_, (ml, _)) in per_pair {
            counts[i / anchor.n_heads][*ml] += 1;
        }
    }
    counts
        .into_iter()
        .map(|row| {
            let t: usize = row.iter().sum();
            row.into_iter().map(|c| c as f64 / t as f64).collect()
        })
        .collect()
}

/// Per head: mean similarity to the other heads of the layer.
pub fn brute_commonness(d: &AttentionDump, layer: usize) -> Vec<f64> {
    (0..d.n_heads)
        .map(|i| {
            let peers: Vec<f64> = (0..d.n_heads)
                .filter(|&j| j != i)
                .map(|j| pair_similarity(d, d, (layer, i.min(j)), (layer, i.max(j))))
                .collect();
            ascending_mean(&peers)
        })
        .collect()
}

/// Random orthogonal `n x n` matrix by Gram-Schmidt.
pub fn random_orthogonal(seed: u64, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q
}

pub fn random_cloud(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
        .collect()
}

/// `x Q + shift` row by row.
pub fn rotate_and_shift(x: &[Vec<f64>], q: &[Vec<f64>], shift: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| {
            (0..q.len())
                .map(|j| (0..r.len()).map(|k| r[k] * q[k][j]).sum::<f64>() + shift)
                .collect()
        })
        .collect()
}

/// Embed 20 points where points 0 and 1 are identical; true when the pair
/// ends up mutually nearest in the embedding.
pub fn duplicate_stays_together(seed: u64) -> bool {
    use seedstab::metasne::{tsne, TsneConfig};
    let mut x = random_cloud(1000 + seed, 20, 10);
    x[1] = x[0].clone();
    let emb = tsne(&x, &TsneConfig::for_points(20, seed)).expect("tsne");
    let dist = |a: usize, b: usize| {
        let (p, q) = (emb.points[a], emb.points[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    };
    let d01 = dist(0, 1);
    (2..20).all(|k| d01 < dist(0, k) && d01 < dist(1, k))
}
