// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stability, alignment, commonness, CKA and meta-SNE checked against
//! brute-force enumeration and geometric invariances.

mod common;

use common::*;
use proptest::prelude::*;
use seedstab::cka::{cka, rbf_gram, DEFAULT_THRESHOLD};
use seedstab::metasne::{
    conditional_probabilities, entropy, squared_distances, tsne, TsneConfig, ENTROPY_TOLERANCE,
};
use seedstab::stability::{alignment_map, commonness, head_stability, MatchMode, RefitComparison};

fn modes() -> [(MatchMode, bool); 2] {
    [(MatchMode::SameLayer, false), (MatchMode::CrossLayer, true)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stability_equals_brute_force(
        seed in 0u64..10_000,
        n_refits in 2usize..=3,
        n_layers in 1usize..=2,
        n_heads in 2usize..=4,
        n_prompts in 1usize..=3,
    ) {
        let dumps: Vec<_> = (0..n_refits as u64).map(|r| random_dump(seed * 7 + r, n_layers, n_heads, n_prompts, 4)).collect();
        let pair_refs: Vec<_> = dumps[1..].iter().collect();
        let pairs: Vec<(u64, _)> = (1..).zip(pair_refs.iter().copied()).collect();
        let cmp = RefitComparison::new(0, &dumps[0], &pairs).unwrap();
        for (mode, cross) in modes() {
            let want = brute_stability(&dumps[0], &pair_refs, cross);
            let got = cmp.all_heads(mode).unwrap();
            for (g, (s, per_pair)) in got.iter().zip(&want) {
                prop_assert_eq!(g.overall.to_bits(), s.to_bits());
                for (m, (score, best)) in g.pairs.iter().zip(per_pair) {
                    prop_assert_eq!(m.score.to_bits(), score.to_bits());
                    prop_assert_eq!(m.best_match, *best);
                }
                let direct = head_stability(0, &dumps[0], &pairs, (g.layer, g.head), mode).unwrap();
                prop_assert_eq!(direct.overall.to_bits(), s.to_bits());
            }
        }
        let cross = cmp.all_heads(MatchMode::CrossLayer).unwrap();
        prop_assert_eq!(alignment_map(&cross, n_layers).unwrap().h, brute_alignment(&dumps[0], &pair_refs));
        for l in 0..n_layers {
            let c = commonness(&dumps[0], l).unwrap();
            let want = brute_commonness(&dumps[0], l);
            prop_assert_eq!(c.per_head.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), want.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn head_order_within_layers_does_not_change_stability(seed in 0u64..10_000, n_heads in 2usize..=4) {
        let dumps: Vec<_> = (0..3u64).map(|r| random_dump(seed * 5 + r, 2, n_heads, 3, 5)).collect();
        let perm: Vec<Vec<usize>> = (0..2).map(|l| (0..n_heads).map(|h| (h + l + 1 + seed as usize) % n_heads).collect()).collect();
        let shuffled: Vec<_> = dumps[1..].iter().map(|d| d.permute_heads(&perm)).collect();
        let a: Vec<(u64, _)> = vec![(1, &dumps[1]), (2, &dumps[2])];
        let b: Vec<(u64, _)> = vec![(1, &shuffled[0]), (2, &shuffled[1])];
        for (mode, _) in modes() {
            let x = RefitComparison::new(0, &dumps[0], &a).unwrap().all_heads(mode).unwrap();
            let y = RefitComparison::new(0, &dumps[0], &b).unwrap().all_heads(mode).unwrap();
            for (p, q) in x.iter().zip(&y) {
                prop_assert!((p.overall - q.overall).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn a_refit_matches_itself_exactly() {
    let d = random_dump(3, 2, 4, 3, 6);
    let pairs = [(0u64, &d)];
    let cmp = RefitComparison::new(0, &d, &pairs).unwrap();
    for (mode, _) in modes() {
        for h in cmp.all_heads(mode).unwrap() {
            assert!((h.overall - 1.0).abs() < 1e-6);
            assert_eq!(h.pairs[0].best_match, (h.layer, h.head));
        }
    }
    let map = alignment_map(&cmp.all_heads(MatchMode::CrossLayer).unwrap(), 2).unwrap();
    assert_eq!(map.h, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
}

#[test]
fn cka_is_invariant_to_isometries_and_prompt_order() {
    let x = random_cloud(1, 30, 6);
    let y = random_cloud(2, 30, 6);
    let kx = rbf_gram(&x, DEFAULT_THRESHOLD).unwrap();
    assert!((cka(&kx, &kx).unwrap() - 1.0).abs() < 1e-9);
    let moved = rotate_and_shift(&x, &random_orthogonal(9, 6), 3.5);
    let km = rbf_gram(&moved, DEFAULT_THRESHOLD).unwrap();
    assert!((cka(&kx, &km).unwrap() - 1.0).abs() < 1e-6);
    let ky = rbf_gram(&y, DEFAULT_THRESHOLD).unwrap();
    let base = cka(&kx, &ky).unwrap();
    let order: Vec<usize> = (0..30).map(|i| (i * 7 + 3) % 30).collect();
    let px: Vec<_> = order.iter().map(|&i| x[i].clone()).collect();
    let py: Vec<_> = order.iter().map(|&i| y[i].clone()).collect();
    let permuted = cka(
        &rbf_gram(&px, DEFAULT_THRESHOLD).unwrap(),
        &rbf_gram(&py, DEFAULT_THRESHOLD).unwrap(),
    )
    .unwrap();
    assert_eq!(base.to_bits(), permuted.to_bits());
}

#[test]
fn tsne_rows_hit_target_perplexity_and_kl_falls() {
    let x = random_cloud(4, 25, 8);
    let cfg = TsneConfig::for_points(25, 0);
    let cond = conditional_probabilities(&squared_distances(&x), 25, cfg.perplexity).unwrap();
    for i in 0..25 {
        let row = &cond.p[i * 25..(i + 1) * 25];
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((entropy(row) - cfg.perplexity.ln()).abs() < ENTROPY_TOLERANCE);
    }
    let emb = tsne(&x, &cfg).unwrap();
    assert!(emb
        .points
        .iter()
        .all(|p| p[0].is_finite() && p[1].is_finite()));
    assert!(emb.final_kl() < emb.kl_at(cfg.exaggeration_iters).unwrap());
}

#[test]
fn duplicated_points_embed_next_to_each_other() {
    let kept = (0..20).filter(|&s| duplicate_stays_together(s)).count();
    assert!(kept >= 19, "duplicates adjacent in {kept} of 20 seeds");
}
