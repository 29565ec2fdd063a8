// SPDX-License-Identifier: MIT OR Apache-2.0

//! Residual-stream similarity between refits with RBF-kernel CKA.
//!
//! Each refit contributes one point per prompt (its post-attention residual
//! stream at a layer, mean-pooled over positions). Gram matrices use a
//! Gaussian kernel whose bandwidth is a multiple of the median pairwise
//! distance, and CKA is the normalised biased HSIC of the double-centred
//! Gram matrices. Every reduction sums sorted values, so permuting the
//! prompts of both clouds leaves the result unchanged bit for bit.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stability::sorted_mean;
use crate::store::ResidualDump;

/// Bandwidth multiplier applied to the median pairwise distance.
pub const DEFAULT_THRESHOLD: f64 = 1.0;

fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Symmetric kernel matrix over one point cloud.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GramMatrix {
    pub n: usize,
    pub threshold: f64,
    pub sigma: f64,
    /// Row-major `n x n` entries.
    pub k: Vec<f64>,
}

impl GramMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.k[a * self.n + b]
    }

    /// Double-centred copy `H K H` with `H = I - 11ᵀ/n`.
    pub fn centered(&self) -> Vec<f64> {
        let n = self.n;
        let row_means: Vec<f64> = (0..n)
            .map(|a| sorted_sum(&mut self.k[a * n..(a + 1) * n].to_vec()) / n as f64)
            .collect();
        let grand = sorted_sum(&mut self.k.clone()) / (n * n) as f64;
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                // the matrix is symmetric, so column means equal row means
                out[a * n + b] = self.k[a * n + b] - row_means[a] - row_means[b] + grand;
            }
        }
        out
    }
}

/// Squared Euclidean distance between two rows.
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of a list of values (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Gaussian Gram matrix `exp(-|x_a - x_b|² / (2σ²))` with
/// `σ = threshold × median pairwise distance`.
pub fn rbf_gram(x: &[Vec<f64>], threshold: f64) -> Result<GramMatrix> {
    let n = x.len();
    if n < 2 {
        return Err(Error::usage("an RBF Gram matrix needs at least two points"));
    }
    if !(threshold > 0.0) {
        return Err(Error::usage("the RBF threshold must be positive"));
    }
    let mut d2 = vec![0.0; n * n];
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            let d = sq_dist(&x[a], &x[b]);
            d2[a * n + b] = d;
            d2[b * n + a] = d;
            dists.push(d.sqrt());
        }
    }
    let med = median(&dists);
    if !(med > 0.0) {
        return Err(Error::DegenerateKernel(
            "median pairwise distance is zero".into(),
        ));
    }
    let sigma = threshold * med;
    let denom = 2.0 * sigma * sigma;
    let k = d2
        .iter()
        .enumerate()
        .map(|(idx, &d)| {
            if idx / n == idx % n {
                1.0
            } else {
                (-d / denom).exp()
            }
        })
        .collect();
    Ok(GramMatrix {
        n,
        threshold,
        sigma,
        k,
    })
}

fn hsic(a: &[f64], b: &[f64]) -> f64 {
    let mut prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    sorted_sum(&mut prods)
}

/// Centred kernel alignment of two Gram matrices over the same points.
pub fn cka(k1: &GramMatrix, k2: &GramMatrix) -> Result<f64> {
    if k1.n != k2.n {
        return Err(Error::usage(format!(
            "Gram matrices of size {} and {}",
            k1.n, k2.n
        )));
    }
    let (c1, c2) = (k1.centered(), k2.centered());
    let (h11, h22) = (hsic(&c1, &c1), hsic(&c2, &c2));
    if !(h11 > 0.0 && h22 > 0.0) {
        return Err(Error::DegenerateKernel("zero self-HSIC".into()));
    }
    Ok((hsic(&c1, &c2) / (h11 * h22).sqrt()).clamp(0.0, 1.0))
}

/// Mean CKA per layer between an anchor refit and each pair refit.
pub fn residual_stability(
    anchor: &ResidualDump,
    pairs: &[&ResidualDump],
    threshold: f64,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::usage(
            "residual stability needs at least one pair refit",
        ));
    }
    for p in pairs {
        if p.prompt_digests != anchor.prompt_digests || p.n_layers != anchor.n_layers {
            return Err(Error::usage("residual dumps disagree on prompts or depth"));
        }
    }
    (0..anchor.n_layers)
        .map(|l| {
            let ka = rbf_gram(&anchor.point_cloud(l), threshold)?;
            let scores = pairs
                .iter()
                .map(|p| cka(&ka, &rbf_gram(&p.point_cloud(l), threshold)?))
                .collect::<Result<Vec<_>>>()?;
            Ok(sorted_mean(&scores))
        })
        .collect()
}
