// SPDX-License-Identifier: MIT OR Apache-2.0

//! Geometry-aware embedding of attention heads (meta-SNE).
//!
//! Each head is summarised by the pairwise Euclidean distances between its
//! signature vectors over the prompt set. The upper triangle of that
//! distance matrix is the head's meta-feature, which depends only on the
//! geometry of the signature cloud and not on its coordinates or on
//! `d_head`. Meta-features of many heads are then embedded in two
//! dimensions with exact t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::SignatureDump;

/// Pairwise distances between one head's signatures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadGeometry {
    pub refit: String,
    pub layer: usize,
    pub head: usize,
    pub relative_depth: f64,
    pub n: usize,
    /// Row-major `n x n` distance matrix.
    pub d: Vec<f64>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance matrix of the signature cloud of head `(layer, head)`.
pub fn head_distance_matrix(
    dump: &SignatureDump,
    refit: impl Into<String>,
    (layer, head): (usize, usize),
) -> Result<HeadGeometry> {
    if layer >= dump.n_layers || head >= dump.n_heads {
        return Err(Error::usage(format!(
            "head ({layer}, {head}) outside the dump"
        )));
    }
    let sigs = dump.signatures(layer, head);
    if sigs.len() != dump.n_prompts() || sigs.is_empty() {
        return Err(Error::usage("signature dump does not cover its prompt set"));
    }
    Ok(geometry_of(
        refit.into(),
        layer,
        head,
        (layer + 1) as f64 / dump.n_layers as f64,
        &sigs,
    ))
}

/// Distance matrix of an arbitrary point cloud.
pub fn geometry_of(
    refit: String,
    layer: usize,
    head: usize,
    relative_depth: f64,
    points: &[Vec<f64>],
) -> HeadGeometry {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let v = euclid(&points[a], &points[b]);
            d[a * n + b] = v;
            d[b * n + a] = v;
        }
    }
    HeadGeometry {
        refit,
        layer,
        head,
        relative_depth,
        n,
        d,
    }
}

/// Upper triangle of the distance matrix, row by row.
pub fn meta_feature(g: &HeadGeometry) -> Vec<f64> {
    let n = g.n;
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        out.extend_from_slice(&g.d[a * n + a + 1..(a + 1) * n]);
    }
    out
}

/// Optimiser settings for exact t-SNE.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    /// `None` uses `N / early_exaggeration`.
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub final_momentum: f64,
    pub min_gain: f64,
    /// Record the KL divergence every this many iterations.
    pub kl_every: usize,
}

impl TsneConfig {
    /// Standard settings with the perplexity capped at `(N - 1) / 3`.
    pub fn for_points(n: usize, seed: u64) -> Self {
        Self {
            perplexity: 30f64.min((n as f64 - 1.0) / 3.0),
            iters: 1000,
            seed,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: None,
            momentum: 0.5,
            final_momentum: 0.8,
            min_gain: 0.01,
            kl_every: 50,
        }
    }
}

/// Tolerance on each row's entropy when solving for its bandwidth.
pub const ENTROPY_TOLERANCE: f64 = 1e-5;

/// Conditional affinities `p_{j|i}` with the per-row precision `β_i = 1/(2σ_i²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalP {
    pub n: usize,
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Shannon entropy in nats of one distribution.
pub fn entropy(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

fn row_affinities(d2: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let min = d2
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(d2).enumerate() {
        *o = if j == i {
            0.0
        } else {
            (-(d - min) * beta).exp()
        };
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    entropy(out)
}

/// Solve each row's bandwidth by bisection so its entropy equals `ln(perplexity)`.
pub fn conditional_probabilities(d2: &[f64], n: usize, perplexity: f64) -> Result<ConditionalP> {
    if d2.len() != n * n {
        return Err(Error::usage("distance matrix is not square"));
    }
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut betas = vec![0.0; n];
    for i in 0..n {
        let d = &d2[i * n..(i + 1) * n];
        let row = &mut p[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut h = row_affinities(d, i, beta, row);
        for _ in 0..500 {
            if (h - target).abs() < ENTROPY_TOLERANCE {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() {
                    (beta + hi) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            h = row_affinities(d, i, beta, row);
        }
        if (h - target).abs() >= ENTROPY_TOLERANCE {
            return Err(Error::usage(format!(
                "could not reach perplexity {perplexity} for point {i} (entropy {h})"
            )));
        }
        betas[i] = beta;
    }
    Ok(ConditionalP { n, p, beta: betas })
}

/// A 2-D embedding with its optimisation trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    /// `(iteration, KL(P || Q))` at regular intervals and at the end.
    pub kl_trace: Vec<(usize, f64)>,
}

impl Embedding2D {
    pub fn final_kl(&self) -> f64 {
        self.kl_trace.last().map_or(f64::NAN, |x| x.1)
    }

    /// KL recorded at `iter`, if any.
    pub fn kl_at(&self, iter: usize) -> Option<f64> {
        self.kl_trace.iter().find(|x| x.0 == iter).map(|x| x.1)
    }
}

/// Squared Euclidean distances between all feature rows.
pub fn squared_distances(features: &[Vec<f64>]) -> Vec<f64> {
    let n = features.len();
    let mut d2 = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let v: f64 = features[a]
                .iter()
                .zip(&features[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            d2[a * n + b] = v;
            d2[b * n + a] = v;
        }
    }
    d2
}

/// Symmetrised joint affinities `(p_{j|i} + p_{i|j}) / 2N`.
pub fn joint_probabilities(cond: &ConditionalP) -> Vec<f64> {
    let n = cond.n;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond.p[i * n + j] + cond.p[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

/// Student-t affinities `q_ij` of an embedding.
pub fn student_q(y: &[[f64; 2]]) -> Vec<f64> {
    let n = y.len();
    let mut q = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                q[i * n + j] = 1.0 / (1.0 + d);
                z += q[i * n + j];
            }
        }
    }
    q.iter_mut().for_each(|v| *v /= z);
    q
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b.max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// Exact t-SNE of `features` (one row per point).
pub fn tsne(features: &[Vec<f64>], cfg: &TsneConfig) -> Result<Embedding2D> {
    let n = features.len();
    if n < 4 {
        return Err(Error::usage("t-SNE needs at least four points"));
    }
    if !(cfg.perplexity > 1.0) || cfg.perplexity > (n as f64 - 1.0) / 3.0 {
        return Err(Error::usage(format!(
            "perplexity {} infeasible for {n} points (must be in (1, {}])",
            cfg.perplexity,
            (n as f64 - 1.0) / 3.0
        )));
    }
    let p = joint_probabilities(&conditional_probabilities(
        &squared_distances(features),
        n,
        cfg.perplexity,
    )?);
    let lr = cfg
        .learning_rate
        .unwrap_or(n as f64 / cfg.early_exaggeration);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut kl_trace = Vec::new();

    for it in 1..=cfg.iters {
        let exaggerating = it <= cfg.exaggeration_iters;
        let exag = if exaggerating {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if exaggerating {
            cfg.momentum
        } else {
            cfg.final_momentum
        };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    0.0
                } else {
                    1.0 / (1.0 + (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2))
                };
                num[i * n + j] = v;
                z += v;
            }
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                let w = (exag * p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
                grad[0] += 4.0 * w * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * w * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                gains[i][k] = if (grad[k] > 0.0) != (update[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(cfg.min_gain)
                };
                update[i][k] = momentum * update[i][k] - lr * gains[i][k] * grad[k];
            }
        }
        for (yi, u) in y.iter_mut().zip(&update) {
            yi[0] += u[0];
            yi[1] += u[1];
        }
        let mean = [
            y.iter().map(|v| v[0]).sum::<f64>() / n as f64,
            y.iter().map(|v| v[1]).sum::<f64>() / n as f64,
        ];
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }
        if (cfg.kl_every > 0 && it % cfg.kl_every == 0) || it == cfg.iters {
            kl_trace.push((it, kl(&p, &student_q(&y))));
        }
    }
    if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return Err(Error::usage("t-SNE produced non-finite coordinates"));
    }
    Ok(Embedding2D {
        points: y,
        kl_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn distance_matrix_examples() {
        let g = geometry_of("r".into(), 0, 0, 1.0, &[vec![0.0, 0.0], vec![3.0, 4.0]]);
        assert_eq!(g.d[1], 5.0);
        assert_eq!(meta_feature(&g), vec![5.0]);
        let same = geometry_of("r".into(), 0, 0, 1.0, &vec![vec![1.0, 2.0]; 3]);
        assert!(same.d.iter().all(|&x| x == 0.0));
        assert_eq!(meta_feature(&same).len(), 3);
    }

    #[test]
    fn meta_feature_ignores_rotation() {
        let pts = points(5, 2, 1);
        // a quarter turn is exact in floating point
        let rot: Vec<Vec<f64>> = pts.iter().map(|p| vec![-p[1], p[0]]).collect();
        let a = meta_feature(&geometry_of("a".into(), 0, 0, 1.0, &pts));
        let b = meta_feature(&geometry_of("b".into(), 0, 0, 1.0, &rot));
        assert_eq!(a, b);
    }

    #[test]
    fn rows_hit_the_target_entropy() {
        let f = points(30, 3, 2);
        let cond = conditional_probabilities(&squared_distances(&f), 30, 5.0).unwrap();
        for i in 0..30 {
            let row = &cond.p[i * 30..(i + 1) * 30];
            assert!((entropy(row) - 5f64.ln()).abs() < ENTROPY_TOLERANCE);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let p = joint_probabilities(&cond);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn embedding_is_finite_and_improves() {
        let f = points(20, 4, 3);
        let cfg = TsneConfig::for_points(20, 7);
        let e = tsne(&f, &cfg).unwrap();
        assert_eq!(e.points.len(), 20);
        assert!(e.final_kl() < e.kl_at(250).unwrap());
        let q = student_q(&e.points);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_perplexity_is_rejected() {
        let f = points(10, 2, 4);
        let mut cfg = TsneConfig::for_points(10, 0);
        cfg.perplexity = 3.5;
        assert_eq!(tsne(&f, &cfg).unwrap_err().code(), "usage");
        assert!(tsne(&f[..3], &TsneConfig::for_points(3, 0)).is_err());
    }
}
