// SPDX-License-Identifier: MIT OR Apache-2.0

//! Functional importance of heads by zero-ablation, and its per-layer
//! correlation with head stability.

use serde::Serialize;

use crate::corpus::PromptSet;
use crate::error::{Error, Result};
use crate::stability::{pearson, HeadStability};
use crate::tinylm::{perplexity, HeadMask, Parameters};

/// Perplexity change from zeroing one head's output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRecord {
    pub layer: usize,
    pub head: usize,
    pub ppl_baseline: f64,
    pub ppl_ablated: f64,
    pub delta_ppl: f64,
}

/// Ablate every head in turn against one shared baseline.
pub fn ablate_all_heads(params: &Parameters, prompts: &PromptSet) -> Result<Vec<AblationRecord>> {
    let cfg = &params.config;
    let baseline = perplexity(params, prompts, &HeadMask::all_active(cfg))?;
    let mut out = Vec::with_capacity(cfg.n_layers * cfg.n_heads);
    for layer in 0..cfg.n_layers {
        for head in 0..cfg.n_heads {
            let ablated = perplexity(params, prompts, &HeadMask::ablate(cfg, layer, head))?;
            out.push(AblationRecord {
                layer,
                head,
                ppl_baseline: baseline,
                ppl_ablated: ablated,
                delta_ppl: ablated - baseline,
            });
        }
    }
    Ok(out)
}

/// Correlation between stability and ablation effect over one layer's heads.
/// `r` is `None` when the correlation is undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCorrelation {
    pub layer: usize,
    pub n_heads: usize,
    pub r: Option<f64>,
}

/// Pearson r per layer over heads of `(S, ΔPPL)`.
pub fn stability_ablation_correlation(
    records: &[AblationRecord],
    heads: &[HeadStability],
) -> Result<Vec<LayerCorrelation>> {
    let n_layers = records.iter().map(|r| r.layer + 1).max().unwrap_or(0);
    let mut out = Vec::with_capacity(n_layers);
    for layer in 0..n_layers {
        let mut s = Vec::new();
        let mut d = Vec::new();
        for r in records.iter().filter(|r| r.layer == layer) {
            let h = heads
                .iter()
                .find(|h| h.layer == layer && h.head == r.head)
                .ok_or_else(|| {
                    Error::usage(format!("no stability for head ({layer}, {})", r.head))
                })?;
            s.push(h.overall);
            d.push(r.delta_ppl);
        }
        out.push(LayerCorrelation {
            layer,
            n_heads: s.len(),
            r: pearson(&s, &d).ok(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stability::MatchMode;
    use crate::tinylm::{init_params, ModelConfig};

    fn prompts() -> PromptSet {
        PromptSet::new("t", vec!["the cat".into(), "sat on a mat".into()]).unwrap()
    }

    #[test]
    fn one_record_per_head_with_shared_baseline() {
        let p = init_params(&ModelConfig::new(2, 2, 8, 16).with_seed(1)).unwrap();
        let recs = ablate_all_heads(&p, &prompts()).unwrap();
        assert_eq!(recs.len(), 4);
        assert!(recs
            .iter()
            .all(|r| r.ppl_baseline.to_bits() == recs[0].ppl_baseline.to_bits()));
        assert!(recs
            .iter()
            .all(|r| r.delta_ppl == r.ppl_ablated - r.ppl_baseline));
    }

    #[test]
    fn zeroed_head_has_no_effect() {
        let mut p = init_params(&ModelConfig::new(1, 2, 8, 16).with_seed(1)).unwrap();
        let w_o = p.tensor_mut("blocks.0.attn.W_O").unwrap();
        // W_O is [H, d_head, d_model]; zero the first head's slice
        w_o[..4 * 8].fill(0.0);
        let recs = ablate_all_heads(&p, &prompts()).unwrap();
        assert!(recs[0].delta_ppl.abs() < 1e-6);
        assert!(recs[1].delta_ppl.abs() > 0.0);
    }

    #[test]
    fn correlation_examples() {
        let mk_rec = |head, delta_ppl| AblationRecord {
            layer: 0,
            head,
            ppl_baseline: 1.0,
            ppl_ablated: 1.0 + delta_ppl,
            delta_ppl,
        };
        let mk_s = |head, overall| HeadStability {
            anchor_seed: 0,
            layer: 0,
            head,
            mode: MatchMode::SameLayer,
            pairs: vec![],
            overall,
        };
        let heads = vec![mk_s(0, 0.9), mk_s(1, 0.8), mk_s(2, 0.7)];
        let recs = vec![mk_rec(0, 1.0), mk_rec(1, 2.0), mk_rec(2, 3.0)];
        let r = stability_ablation_correlation(&recs, &heads).unwrap();
        assert!((r[0].r.unwrap() + 1.0).abs() < 1e-12);
        let flat = vec![mk_rec(0, 1.0), mk_rec(1, 1.0), mk_rec(2, 1.0)];
        assert_eq!(
            stability_ablation_correlation(&flat, &heads).unwrap()[0].r,
            None
        );
    }
}
