// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention-head stability across refits.
//!
//! Two heads are compared by the cosine similarity of their flattened
//! attention matrices, averaged over a prompt set. A head of the anchor
//! refit is scored against each pair refit by its best-matching candidate
//! head, and its stability is the mean of those best scores over all pair
//! refits. Candidates are the heads of the same layer, or every head in
//! cross-layer mode.
//!
//! All means are taken over values sorted in ascending order, so results do
//! not depend on iteration order and are reproducible bit for bit.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::AttentionDump;
use crate::tinylm::Grid;

/// Mean of `values` summed in ascending order. Zero for an empty slice.
pub fn sorted_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn sq_norm(a: &[f32]) -> f64 {
    a.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
}

fn cosine_with_norms(a: &[f32], b: &[f32], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Cosine similarity of two flattened score matrices, or 0 if either is all zero.
pub fn prompt_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::usage(format!(
            "cannot compare matrices with {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_with_norms(a, b, sq_norm(a), sq_norm(b)))
}

fn check_coverage(anchor: &AttentionDump, pair: &AttentionDump) -> Result<()> {
    if anchor.prompt_digests != pair.prompt_digests {
        return Err(Error::usage(format!(
            "dumps cover different prompts (`{}` vs `{}`)",
            anchor.prompt_set, pair.prompt_set
        )));
    }
    if anchor.n_heads != pair.n_heads {
        return Err(Error::usage("dumps have different head counts per layer"));
    }
    Ok(())
}

fn check_head(dump: &AttentionDump, (l, h): (usize, usize)) -> Result<()> {
    if l >= dump.n_layers || h >= dump.n_heads {
        return Err(Error::usage(format!(
            "head ({l}, {h}) outside a {}x{} model",
            dump.n_layers, dump.n_heads
        )));
    }
    Ok(())
}

/// Prompt-averaged similarity between anchor head `a` and pair head `b`.
pub fn head_pair_similarity(
    anchor: &AttentionDump,
    pair: &AttentionDump,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<f64> {
    check_coverage(anchor, pair)?;
    check_head(anchor, a)?;
    check_head(pair, b)?;
    let sims = (0..anchor.n_prompts())
        .map(|p| prompt_similarity(anchor.pattern(p, a.0, a.1), pair.pattern(p, b.0, b.1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(sorted_mean(&sims))
}

/// Which heads of a pair refit may match an anchor head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    SameLayer,
    CrossLayer,
}

impl MatchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchMode::SameLayer => "same_layer",
            MatchMode::CrossLayer => "cross_layer",
        }
    }
}

/// Prompt-averaged similarity of every anchor head against every pair head.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTable {
    pub anchor_layers: usize,
    pub pair_layers: usize,
    pub n_heads: usize,
    /// Row `l * n_heads + i` for the anchor head, column likewise for the pair head.
    pub values: Vec<f64>,
}

impl SimilarityTable {
    /// Compare all heads of two dumps in one sweep over the prompts.
    pub fn compute(anchor: &AttentionDump, pair: &AttentionDump) -> Result<Self> {
        check_coverage(anchor, pair)?;
        let h = anchor.n_heads;
        let (na, np) = (anchor.n_layers * h, pair.n_layers * h);
        let mut per_prompt = vec![Vec::with_capacity(anchor.n_prompts()); na * np];
        for p in 0..anchor.n_prompts() {
            let a_mats: Vec<&[f32]> = (0..na).map(|k| anchor.pattern(p, k / h, k % h)).collect();
            let b_mats: Vec<&[f32]> = (0..np).map(|k| pair.pattern(p, k / h, k % h)).collect();
            let a_norms: Vec<f64> = a_mats.iter().map(|m| sq_norm(m)).collect();
            let b_norms: Vec<f64> = b_mats.iter().map(|m| sq_norm(m)).collect();
            for (i, a) in a_mats.iter().enumerate() {
                for (j, b) in b_mats.iter().enumerate() {
                    per_prompt[i * np + j].push(cosine_with_norms(a, b, a_norms[i], b_norms[j]));
                }
            }
        }
        Ok(Self {
            anchor_layers: anchor.n_layers,
            pair_layers: pair.n_layers,
            n_heads: h,
            values: per_prompt.iter().map(|v| sorted_mean(v)).collect(),
        })
    }

    pub fn get(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let np = self.pair_layers * self.n_heads;
        self.values[(a.0 * self.n_heads + a.1) * np + b.0 * self.n_heads + b.1]
    }

    /// Best candidate for anchor head `a`, ties going to the lowest `(layer, head)`.
    pub fn best_match(&self, a: (usize, usize), mode: MatchMode) -> Result<(f64, (usize, usize))> {
        let layers = match mode {
            MatchMode::SameLayer if a.0 < self.pair_layers => a.0..a.0 + 1,
            MatchMode::SameLayer => 0..0,
            MatchMode::CrossLayer => 0..self.pair_layers,
        };
        let mut best: Option<(f64, (usize, usize))> = None;
        for l in layers {
            for j in 0..self.n_heads {
                let s = self.get(a, (l, j));
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, (l, j)));
                }
            }
        }
        best.ok_or_else(|| Error::usage(format!("no candidate heads for anchor head {a:?}")))
    }
}

/// Best match of one anchor head within one pair refit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairMatch {
    pub pair_seed: u64,
    pub score: f64,
    pub best_match: (usize, usize),
}

/// Stability of one anchor head across all pair refits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadStability {
    pub anchor_seed: u64,
    pub layer: usize,
    pub head: usize,
    pub mode: MatchMode,
    pub pairs: Vec<PairMatch>,
    pub overall: f64,
}

impl HeadStability {
    fn from_matches(
        anchor_seed: u64,
        (layer, head): (usize, usize),
        mode: MatchMode,
        pairs: Vec<PairMatch>,
    ) -> Self {
        let scores: Vec<f64> = pairs.iter().map(|m| m.score).collect();
        Self {
            anchor_seed,
            layer,
            head,
            mode,
            overall: sorted_mean(&scores),
            pairs,
        }
    }

    pub fn min_pair(&self) -> f64 {
        self.pairs
            .iter()
            .map(|m| m.score)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_pair(&self) -> f64 {
        self.pairs
            .iter()
            .map(|m| m.score)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_pairs(
    anchor: &AttentionDump,
    pairs: &[(u64, &AttentionDump)],
    mode: MatchMode,
) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::usage("head stability needs at least one pair refit"));
    }
    for (_, p) in pairs {
        check_coverage(anchor, p)?;
        if mode == MatchMode::SameLayer && p.n_layers != anchor.n_layers {
            return Err(Error::usage("same-layer matching needs equal depths"));
        }
    }
    Ok(())
}

/// Stability of anchor head `head` against each pair refit, computed directly
/// from the candidate similarities.
pub fn head_stability(
    anchor_seed: u64,
    anchor: &AttentionDump,
    pairs: &[(u64, &AttentionDump)],
    head: (usize, usize),
    mode: MatchMode,
) -> Result<HeadStability> {
    check_pairs(anchor, pairs, mode)?;
    check_head(anchor, head)?;
    let mut matches = Vec::with_capacity(pairs.len());
    for &(seed, pair) in pairs {
        let layers = match mode {
            MatchMode::SameLayer => head.0..head.0 + 1,
            MatchMode::CrossLayer => 0..pair.n_layers,
        };
        let mut best: Option<(f64, (usize, usize))> = None;
        for l in layers {
            for j in 0..pair.n_heads {
                let s = head_pair_similarity(anchor, pair, head, (l, j))?;
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, (l, j)));
                }
            }
        }
        let (score, best_match) = best
            .ok_or_else(|| Error::usage(format!("no candidate heads for anchor head {head:?}")))?;
        matches.push(PairMatch {
            pair_seed: seed,
            score,
            best_match,
        });
    }
    Ok(HeadStability::from_matches(
        anchor_seed,
        head,
        mode,
        matches,
    ))
}

/// Similarity tables of one anchor against all its pair refits, from which
/// every head's stability in either mode follows without revisiting the dumps.
#[derive(Debug, Clone)]
pub struct RefitComparison {
    pub anchor_seed: u64,
    pub n_layers: usize,
    pub n_heads: usize,
    pub tables: Vec<(u64, SimilarityTable)>,
}

impl RefitComparison {
    pub fn new(
        anchor_seed: u64,
        anchor: &AttentionDump,
        pairs: &[(u64, &AttentionDump)],
    ) -> Result<Self> {
        check_pairs(anchor, pairs, MatchMode::CrossLayer)?;
        let tables = pairs
            .iter()
            .map(|&(seed, p)| Ok((seed, SimilarityTable::compute(anchor, p)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            anchor_seed,
            n_layers: anchor.n_layers,
            n_heads: anchor.n_heads,
            tables,
        })
    }

    pub fn head(&self, head: (usize, usize), mode: MatchMode) -> Result<HeadStability> {
        let matches = self
            .tables
            .iter()
            .map(|(seed, t)| {
                let (score, best_match) = t.best_match(head, mode)?;
                Ok(PairMatch {
                    pair_seed: *seed,
                    score,
                    best_match,
                })
            })
            .collect::<Result<_>>()?;
        Ok(HeadStability::from_matches(
            self.anchor_seed,
            head,
            mode,
            matches,
        ))
    }

    /// Every anchor head in `(layer, head)` order.
    pub fn all_heads(&self, mode: MatchMode) -> Result<Vec<HeadStability>> {
        let mut out = Vec::with_capacity(self.n_layers * self.n_heads);
        for l in 0..self.n_layers {
            for h in 0..self.n_heads {
                out.push(self.head((l, h), mode)?);
            }
        }
        Ok(out)
    }
}

/// Per-layer mean stability with the most and least stable layers.
///
/// Layer indices `l_max` and `l_min` are 1-based; relative depth is `l / L`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerProfile {
    pub n_layers: usize,
    pub s_l: Vec<f64>,
    pub l_max: usize,
    pub l_min: usize,
    pub delta_s: f64,
    pub r_lmax: f64,
    pub r_lmin: f64,
}

impl LayerProfile {
    /// Profile from per-layer means, ties going to the shallower layer.
    pub fn from_layer_means(s_l: Vec<f64>) -> Result<Self> {
        if s_l.is_empty() {
            return Err(Error::usage("a layer profile needs at least one layer"));
        }
        let (mut imax, mut imin) = (0, 0);
        for (l, &s) in s_l.iter().enumerate() {
            if s > s_l[imax] {
                imax = l;
            }
            if s < s_l[imin] {
                imin = l;
            }
        }
        let n = s_l.len();
        Ok(Self {
            n_layers: n,
            delta_s: s_l[imax] - s_l[imin],
            l_max: imax + 1,
            l_min: imin + 1,
            r_lmax: relative_depth(imax + 1, n),
            r_lmin: relative_depth(imin + 1, n),
            s_l,
        })
    }
}

/// Relative depth `l / L` of 1-based layer `l`.
pub fn relative_depth(layer: usize, n_layers: usize) -> f64 {
    layer as f64 / n_layers as f64
}

/// Average head stability per layer. Every `(layer, head)` must appear exactly once.
pub fn layer_profile(
    heads: &[HeadStability],
    n_layers: usize,
    n_heads: usize,
) -> Result<LayerProfile> {
    let mut grid: Vec<Option<f64>> = vec![None; n_layers * n_heads];
    for h in heads {
        if h.layer >= n_layers || h.head >= n_heads {
            return Err(Error::usage(format!(
                "head ({}, {}) outside the model",
                h.layer, h.head
            )));
        }
        let cell = &mut grid[h.layer * n_heads + h.head];
        if cell.replace(h.overall).is_some() {
            return Err(Error::usage(format!(
                "head ({}, {}) listed twice",
                h.layer, h.head
            )));
        }
    }
    let mut s_l = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let row = (0..n_heads)
            .map(|h| {
                grid[l * n_heads + h]
                    .ok_or_else(|| Error::usage(format!("head ({l}, {h}) missing")))
            })
            .collect::<Result<Vec<_>>>()?;
        s_l.push(sorted_mean(&row));
    }
    LayerProfile::from_layer_means(s_l)
}

/// Row-normalised distribution of best-match layers per anchor layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentMap {
    pub h: Vec<Vec<f64>>,
}

/// Tally where cross-layer best matches land.
pub fn alignment_map(heads: &[HeadStability], n_layers: usize) -> Result<AlignmentMap> {
    let mut counts = vec![vec![0usize; n_layers]; n_layers];
    for h in heads {
        if h.mode != MatchMode::CrossLayer {
            return Err(Error::usage("the alignment map needs cross-layer matches"));
        }
        for m in &h.pairs {
            if h.layer >= n_layers || m.best_match.0 >= n_layers {
                return Err(Error::usage("best match outside the model"));
            }
            counts[h.layer][m.best_match.0] += 1;
        }
    }
    let h = counts
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                return Err(Error::usage(format!("no matches recorded for layer {i}")));
            }
            Ok(row.into_iter().map(|c| c as f64 / total as f64).collect())
        })
        .collect::<Result<_>>()?;
    Ok(AlignmentMap { h })
}

/// How similar each head of one layer is to its peers in the same refit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommonnessProfile {
    pub layer: usize,
    pub per_head: Vec<f64>,
    pub mean: f64,
}

/// Commonness of every head in `layer`: the mean prompt-averaged similarity
/// to the other heads of that layer, excluding itself.
pub fn commonness(dump: &AttentionDump, layer: usize) -> Result<CommonnessProfile> {
    let n = dump.n_heads;
    if n < 2 {
        return Err(Error::usage(
            "commonness needs at least two heads per layer",
        ));
    }
    check_head(dump, (layer, 0))?;
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = head_pair_similarity(dump, dump, (layer, i), (layer, j))?;
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    let per_head: Vec<f64> = (0..n)
        .map(|i| {
            let peers: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| sim[i][j]).collect();
            sorted_mean(&peers)
        })
        .collect();
    Ok(CommonnessProfile {
        layer,
        mean: sorted_mean(&per_head),
        per_head,
    })
}

/// Sample Pearson correlation with two-pass 64-bit accumulation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::usage(format!(
            "pearson: lengths {} and {} differ",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!(
            "only {} points",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Anchor and pair dumps over one sweep prompt set.
#[derive(Debug, Clone)]
pub struct SweepInput<'a> {
    pub nominal_length: usize,
    pub anchor: &'a AttentionDump,
    pub pairs: Vec<(u64, &'a AttentionDump)>,
}

/// Same-layer profile per nominal prompt length, sorted by length.
pub fn prompt_length_sweep(
    anchor_seed: u64,
    inputs: &[SweepInput<'_>],
) -> Result<Vec<(usize, LayerProfile)>> {
    if inputs.is_empty() {
        return Err(Error::usage("no sweep prompt sets given"));
    }
    let mut rows = inputs
        .iter()
        .map(|inp| {
            let cmp = RefitComparison::new(anchor_seed, inp.anchor, &inp.pairs)?;
            let heads = cmp.all_heads(MatchMode::SameLayer)?;
            Ok((
                inp.nominal_length,
                layer_profile(&heads, cmp.n_layers, cmp.n_heads)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.0);
    if rows.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::usage("duplicate sweep length"));
    }
    Ok(rows)
}

/// Pearson correlation over layers between mean query-weight norm and `S_l`.
pub fn norm_stability_correlation(profile: &LayerProfile, query_norms: &Grid) -> Result<f64> {
    if query_norms.rows != profile.n_layers {
        return Err(Error::usage("query norms and profile disagree on depth"));
    }
    pearson(&query_norms.row_means(), &profile.s_l)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dump with one prompt of length `t` whose matrices are given per head.
    fn dump(n_layers: usize, n_heads: usize, t: usize, mats: Vec<Vec<f32>>) -> AttentionDump {
        AttentionDump {
            n_layers,
            n_heads,
            prompt_set: "toy".into(),
            prompt_digests: vec!["d0".into()],
            seq_lens: vec![t],
            patterns: vec![mats.concat()],
        }
    }

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn prompt_similarity_examples() {
        let a = [1.0, 0.0, 0.5, 0.5];
        assert!(approx(prompt_similarity(&a, &a).unwrap(), 1.0, 1e-15));
        let b = [1.0, 0.0, 0.0, 1.0];
        assert!(approx(
            prompt_similarity(&a, &b).unwrap(),
            1.5 / 3f64.sqrt(),
            1e-12
        ));
        let c = [0.0, 1.0, 0.0, 0.0];
        assert_eq!(prompt_similarity(&[1.0, 0.0, 0.0, 0.0], &c).unwrap(), 0.0);
        assert_eq!(prompt_similarity(&[0.0; 4], &c).unwrap(), 0.0);
        assert_eq!(prompt_similarity(&a, &a[..3]).unwrap_err().code(), "usage");
    }

    #[test]
    fn pair_similarity_is_the_prompt_mean() {
        let id = vec![1.0, 0.0, 0.0, 1.0];
        let x = vec![1.0, 0.0, 1.0, 0.0];
        let mut a = dump(1, 1, 2, vec![id.clone()]);
        a.prompt_digests.push("d1".into());
        a.seq_lens.push(2);
        a.patterns.push(id.clone());
        let mut b = dump(1, 1, 2, vec![id.clone()]);
        b.prompt_digests.push("d1".into());
        b.seq_lens.push(2);
        // cos(id, x) = 1/2
        b.patterns.push(x);
        assert!(approx(
            head_pair_similarity(&a, &b, (0, 0), (0, 0)).unwrap(),
            0.75,
            1e-15
        ));
        let mut c = b.clone();
        c.prompt_digests[1] = "other".into();
        assert_eq!(
            head_pair_similarity(&a, &c, (0, 0), (0, 0))
                .unwrap_err()
                .code(),
            "usage"
        );
    }

    #[test]
    fn self_match_is_identity() {
        let m0 = vec![1.0, 0.0, 0.3, 0.7];
        let m1 = vec![1.0, 0.0, 0.9, 0.1];
        let d = dump(1, 2, 2, vec![m0, m1]);
        for mode in [MatchMode::SameLayer, MatchMode::CrossLayer] {
            for h in 0..2 {
                let s = head_stability(3, &d, &[(4, &d)], (0, h), mode).unwrap();
                assert!(approx(s.overall, 1.0, 1e-12));
                assert_eq!(s.pairs[0].best_match, (0, h));
            }
        }
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let m = vec![1.0, 0.0, 0.5, 0.5];
        let d = dump(2, 2, 2, vec![m.clone(), m.clone(), m.clone(), m]);
        let s = head_stability(0, &d, &[(1, &d)], (1, 1), MatchMode::CrossLayer).unwrap();
        assert_eq!(s.pairs[0].best_match, (0, 0));
        let s = head_stability(0, &d, &[(1, &d)], (1, 1), MatchMode::SameLayer).unwrap();
        assert_eq!(s.pairs[0].best_match, (1, 0));
    }

    #[test]
    fn table_agrees_with_direct_computation() {
        let a = dump(
            2,
            2,
            2,
            vec![
                vec![1.0, 0.0, 0.2, 0.8],
                vec![1.0, 0.0, 0.6, 0.4],
                vec![1.0, 0.0, 0.9, 0.1],
                vec![1.0, 0.0, 0.5, 0.5],
            ],
        );
        let b = a.permute_heads(&[vec![1, 0], vec![0, 1]]);
        let cmp = RefitComparison::new(0, &a, &[(1, &b)]).unwrap();
        for mode in [MatchMode::SameLayer, MatchMode::CrossLayer] {
            for l in 0..2 {
                for h in 0..2 {
                    assert_eq!(
                        cmp.head((l, h), mode).unwrap(),
                        head_stability(0, &a, &[(1, &b)], (l, h), mode).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn layer_profile_examples() {
        let mk = |layer, head, overall| HeadStability {
            anchor_seed: 0,
            layer,
            head,
            mode: MatchMode::SameLayer,
            pairs: vec![],
            overall,
        };
        let p = layer_profile(&[mk(0, 0, 1.0), mk(1, 0, 1.0)], 2, 1).unwrap();
        assert_eq!((p.l_max, p.l_min, p.delta_s), (1, 1, 0.0));
        let p = LayerProfile::from_layer_means(vec![0.8, 0.9, 0.7]).unwrap();
        assert!(approx(p.delta_s, 0.2, 1e-12));
        assert_eq!((p.l_max, p.l_min), (2, 3));
        assert_eq!(relative_depth(5, 8), 0.625);
        assert!(layer_profile(&[mk(0, 0, 1.0)], 2, 1).is_err());
        assert!(layer_profile(&[mk(0, 0, 1.0), mk(0, 0, 1.0)], 1, 1).is_err());
    }

    #[test]
    fn alignment_map_examples() {
        let h = HeadStability {
            anchor_seed: 0,
            layer: 0,
            head: 0,
            mode: MatchMode::CrossLayer,
            pairs: vec![
                PairMatch {
                    pair_seed: 1,
                    score: 1.0,
                    best_match: (0, 0),
                },
                PairMatch {
                    pair_seed: 2,
                    score: 1.0,
                    best_match: (1, 0),
                },
            ],
            overall: 1.0,
        };
        let mut h2 = h.clone();
        h2.layer = 1;
        let map = alignment_map(&[h.clone(), h2], 2).unwrap();
        assert_eq!(map.h[0], vec![0.5, 0.5]);
        let mut same = h;
        same.mode = MatchMode::SameLayer;
        assert!(alignment_map(&[same], 1).is_err());
    }

    #[test]
    fn commonness_examples() {
        let m = vec![1.0, 0.0, 0.5, 0.5];
        let d = dump(1, 3, 2, vec![m.clone(), m.clone(), m]);
        let c = commonness(&d, 0).unwrap();
        assert!(c.per_head.iter().all(|&x| approx(x, 1.0, 1e-12)));
        // unit vectors at cosine 0.4
        let a = vec![1.0, 0.0, 0.0, 0.0];
        let b = vec![0.4, 0.0, 0.0, (1.0f32 - 0.16).sqrt()];
        let d = dump(1, 2, 2, vec![a, b]);
        let c = commonness(&d, 0).unwrap();
        assert!(approx(c.per_head[0], 0.4, 1e-6) && approx(c.per_head[1], 0.4, 1e-6));
        let single = dump(1, 1, 1, vec![vec![1.0]]);
        assert!(commonness(&single, 0).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert!(approx(
            pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(),
            1.0,
            1e-15
        ));
        assert!(approx(
            pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0,
            1e-15
        ));
        assert_eq!(
            pearson(&[1.0, 2.0, 3.0], &[1.0; 3]).unwrap_err().code(),
            "undefined-correlation"
        );
        assert_eq!(
            pearson(&[1.0, 2.0], &[1.0, 2.0]).unwrap_err().code(),
            "undefined-correlation"
        );
    }

    #[test]
    fn norm_correlation_of_decreasing_pairs() {
        let profile = LayerProfile::from_layer_means(vec![0.9, 0.8, 0.7]).unwrap();
        let mut g = Grid::zeros(3, 1);
        for (l, v) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            g.set(l, 0, v);
        }
        assert!(approx(
            norm_stability_correlation(&profile, &g).unwrap(),
            -1.0,
            1e-12
        ));
        let flat = LayerProfile::from_layer_means(vec![0.5; 3]).unwrap();
        assert!(norm_stability_correlation(&flat, &g).is_err());
    }

    #[test]
    fn sweep_rows_are_sorted_by_length() {
        let m = vec![1.0, 0.0, 0.5, 0.5];
        let d = dump(1, 1, 2, vec![m]);
        let inputs: Vec<SweepInput> = [10, 5]
            .into_iter()
            .map(|n| SweepInput {
                nominal_length: n,
                anchor: &d,
                pairs: vec![(1, &d)],
            })
            .collect();
        let rows = prompt_length_sweep(0, &inputs).unwrap();
        assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![5, 10]);
        assert!(rows.iter().all(|r| approx(r.1.s_l[0], 1.0, 1e-12)));
    }
}
