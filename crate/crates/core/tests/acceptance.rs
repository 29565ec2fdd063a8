// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any hard criterion fails.
//!
//! Criterion 9 trains the acceptance experiment (16 refits of a 4-layer,
//! 4-head model) into `CARGO_TARGET_TMPDIR/acceptance-run`. Later runs
//! reuse whatever is already current there.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use seedstab::ablation::ablate_all_heads;
use seedstab::cka::{cka, rbf_gram, DEFAULT_THRESHOLD};
use seedstab::corpus::{load_corpus, PromptSet, TokenCorpus};
use seedstab::experiment::tables::read_csv;
use seedstab::experiment::{
    cmd_analyze, cmd_dump, cmd_report, cmd_train, Experiment, ExperimentConfig, Overrides, Which,
};
use seedstab::metasne::{
    conditional_probabilities, entropy, squared_distances, tsne, TsneConfig, ENTROPY_TOLERANCE,
};
use seedstab::optim::{adam_update, train_refit, TrainConfig};
use seedstab::stability::{alignment_map, commonness, sorted_mean, MatchMode, RefitComparison};
use seedstab::store::{dump_attention, AttentionDump};
use seedstab::tinylm::{
    init_params, loss_and_grads, perplexity, HeadMask, ModelConfig, Parameters,
};

const MANIFEST: &str = env!("CARGO_MANIFEST_DIR");

enum Outcome {
    Pass(String),
    Fail(String),
}

use Outcome::{Fail, Pass};

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

/// 1. Metric oracle equivalence on synthetic dumps.
fn metric_oracle() -> Outcome {
    let mut cases = 0;
    for seed in 0..60u64 {
        let n_refits = 2 + (seed % 2) as usize;
        let n_layers = 1 + (seed / 2 % 2) as usize;
        let n_heads = 2 + (seed / 4 % 3) as usize;
        let n_prompts = 1 + (seed / 12 % 3) as usize;
        let dumps: Vec<_> = (0..n_refits as u64)
            .map(|r| random_dump(seed * 11 + r, n_layers, n_heads, n_prompts, 4))
            .collect();
        let pair_refs: Vec<&AttentionDump> = dumps[1..].iter().collect();
        let pairs: Vec<(u64, &AttentionDump)> = (1..).zip(pair_refs.iter().copied()).collect();
        let cmp = RefitComparison::new(0, &dumps[0], &pairs).expect("comparison");
        for (mode, cross) in [(MatchMode::SameLayer, false), (MatchMode::CrossLayer, true)] {
            let got = cmp.all_heads(mode).expect("heads");
            for (g, (s, per_pair)) in got
                .iter()
                .zip(brute_stability(&dumps[0], &pair_refs, cross))
            {
                if g.overall.to_bits() != s.to_bits()
                    || g.pairs
                        .iter()
                        .zip(&per_pair)
                        .any(|(m, b)| m.best_match != b.1)
                {
                    return Fail(format!(
                        "seed {seed}: head ({}, {}) differs",
                        g.layer, g.head
                    ));
                }
            }
        }
        let map = alignment_map(&cmp.all_heads(MatchMode::CrossLayer).unwrap(), n_layers).unwrap();
        if map.h != brute_alignment(&dumps[0], &pair_refs) {
            return Fail(format!("seed {seed}: alignment map differs"));
        }
        for l in 0..n_layers {
            let c = commonness(&dumps[0], l).unwrap();
            let want = brute_commonness(&dumps[0], l);
            if c.per_head
                .iter()
                .zip(&want)
                .any(|(a, b)| a.to_bits() != b.to_bits())
            {
                return Fail(format!("seed {seed}: commonness differs"));
            }
        }
        cases += 1;
    }
    Pass(format!(
        "{cases} synthetic configurations bit-equal to brute force"
    ))
}

fn quick_refits(seeds: &[u64], corpus: &TokenCorpus) -> Vec<Parameters> {
    seeds
        .iter()
        .map(|&s| {
            let model = ModelConfig::new(2, 4, 16, 256).with_seed(s);
            let train = TrainConfig::adamw(3e-3, 0.1, 4, 150).with_n_ctx_train(64);
            train_refit(&model, &train, corpus).expect("train").params
        })
        .collect()
}

fn primary_prompts(n: usize) -> PromptSet {
    seedstab::corpus::load_prompts(format!("{MANIFEST}/data/prompts/primary.json"))
        .expect("prompts")
        .remove(0)
        .truncated(n)
}

/// 2. A trained refit compared with itself.
fn self_match(dumps: &[AttentionDump]) -> Outcome {
    let pairs = [(0u64, &dumps[0])];
    let cmp = RefitComparison::new(0, &dumps[0], &pairs).unwrap();
    let mut worst: f64 = 0.0;
    let mut identity = true;
    for mode in [MatchMode::SameLayer, MatchMode::CrossLayer] {
        for h in cmp.all_heads(mode).unwrap() {
            worst = worst.max((h.overall - 1.0).abs());
            identity &= h.pairs[0].best_match == (h.layer, h.head);
        }
    }
    let map = alignment_map(
        &cmp.all_heads(MatchMode::CrossLayer).unwrap(),
        dumps[0].n_layers,
    )
    .unwrap();
    let diag = map.h.iter().enumerate().all(|(i, r)| {
        r.iter()
            .enumerate()
            .all(|(j, &v)| v == if i == j { 1.0 } else { 0.0 })
    });
    check(
        worst <= 1e-6 && identity && diag,
        format!("max |S - 1| = {worst:.2e}, alignment map is identity: {diag}"),
    )
}

/// 3. Shuffling head order within layers of the pair dumps.
fn permutation_invariance(dumps: &[AttentionDump]) -> Outcome {
    let nh = dumps[0].n_heads;
    let perm: Vec<Vec<usize>> = (0..dumps[0].n_layers)
        .map(|l| (0..nh).map(|h| (nh - 1 - h + l) % nh).collect())
        .collect();
    let shuffled: Vec<_> = dumps[1..].iter().map(|d| d.permute_heads(&perm)).collect();
    let a: Vec<(u64, &AttentionDump)> = (1..).zip(&dumps[1..]).collect();
    let b: Vec<(u64, &AttentionDump)> = (1..).zip(&shuffled).collect();
    let mut worst: f64 = 0.0;
    for mode in [MatchMode::SameLayer, MatchMode::CrossLayer] {
        let x = RefitComparison::new(0, &dumps[0], &a)
            .unwrap()
            .all_heads(mode)
            .unwrap();
        let y = RefitComparison::new(0, &dumps[0], &b)
            .unwrap()
            .all_heads(mode)
            .unwrap();
        for (p, q) in x.iter().zip(&y) {
            worst = worst.max((p.overall - q.overall).abs());
        }
    }
    check(
        worst <= 1e-12,
        format!("max |delta S| = {worst:.2e} over trained refits"),
    )
}

/// 5. Full finite-difference gradient check.
fn gradient_check() -> Outcome {
    let cfg = ModelConfig::new(2, 2, 8, 16).with_d_mlp(32).with_seed(3);
    let mut p = init_params(&cfg).unwrap().cast::<f64>();
    for (i, x) in p.data.iter_mut().enumerate() {
        *x += 0.05 * ((i as f64 * 0.754_877_666).fract() - 0.5);
    }
    let batch = vec![
        vec![256u32, 72, 101, 108, 108, 111, 44, 32],
        vec![256u32, 119, 111, 114, 108, 100],
    ];
    let (_, grads) = loss_and_grads(&p, &batch).unwrap();
    let eps = 1e-3;
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p.data[i];
        p.data[i] = orig + eps;
        let up = loss_and_grads(&p, &batch).unwrap().0;
        p.data[i] = orig - eps;
        let down = loss_and_grads(&p, &batch).unwrap().0;
        p.data[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max((grads.data[i] - fd).abs() / (grads.data[i].abs() + fd.abs()).max(1e-6));
    }
    check(
        worst < 1e-3,
        format!("max relative error {worst:.2e} over {} parameters", p.len()),
    )
}

/// 6. Adam and AdamW mirror each other.
fn optimizer_equivalence(corpus: &TokenCorpus) -> Outcome {
    let model = ModelConfig::new(2, 2, 16, 64).with_seed(4);
    let a = train_refit(
        &model,
        &TrainConfig::adam(1e-3, 2, 100).with_n_ctx_train(32),
        corpus,
    )
    .unwrap();
    let w = train_refit(
        &model,
        &TrainConfig::adamw(1e-3, 0.0, 2, 100).with_n_ctx_train(32),
        corpus,
    )
    .unwrap();
    let diff = a
        .params
        .data
        .iter()
        .zip(&w.params.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);

    let cfg = TrainConfig::adamw(1e-3, 0.1, 1, 10);
    let factor = (1.0 - 1e-3 * 0.1) as f32;
    let mut params = init_params(&model).unwrap().data;
    let n = params.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut exact = true;
    for t in 1..=5 {
        let before = params.clone();
        adam_update(&mut params, &vec![0.0; n], &mut m, &mut v, t, &cfg);
        exact &= params.iter().zip(&before).all(|(x, b)| *x == b * factor);
    }
    check(
        f64::from(diff) <= 1e-5 && exact,
        format!("Adam vs AdamW(wd=0) max |delta| = {diff:.2e}; zero-gradient decay exact: {exact}"),
    )
}

/// 7. CKA identities and invariances.
fn cka_suite() -> Outcome {
    let x = random_cloud(11, 40, 8);
    let y = random_cloud(12, 40, 8);
    let kx = rbf_gram(&x, DEFAULT_THRESHOLD).unwrap();
    let self_err = (cka(&kx, &kx).unwrap() - 1.0).abs();
    let moved = rotate_and_shift(&x, &random_orthogonal(13, 8), -2.25);
    let iso_err = (cka(&kx, &rbf_gram(&moved, DEFAULT_THRESHOLD).unwrap()).unwrap() - 1.0).abs();
    let base = cka(&kx, &rbf_gram(&y, DEFAULT_THRESHOLD).unwrap()).unwrap();
    let order: Vec<usize> = (0..40).map(|i| (i * 17 + 5) % 40).collect();
    let px: Vec<_> = order.iter().map(|&i| x[i].clone()).collect();
    let py: Vec<_> = order.iter().map(|&i| y[i].clone()).collect();
    let perm = cka(
        &rbf_gram(&px, DEFAULT_THRESHOLD).unwrap(),
        &rbf_gram(&py, DEFAULT_THRESHOLD).unwrap(),
    )
    .unwrap();
    let bit = base.to_bits() == perm.to_bits();
    check(
        self_err <= 1e-9 && iso_err <= 1e-6 && bit,
        format!("|cka(K,K) - 1| = {self_err:.1e}, isometry error {iso_err:.1e}, permutation bit-identical: {bit}"),
    )
}

/// 8. Perplexity anchors.
fn perplexity_anchor() -> Outcome {
    let prompts = PromptSet::new(
        "anchor",
        vec!["To be, or not to be".into(), "that is the question".into()],
    )
    .unwrap();
    let cfg = ModelConfig::new(2, 2, 8, 32).with_d_vocab(256).with_seed(1);
    let mut uniform = init_params(&cfg).unwrap();
    uniform.tensor_mut("unembed.W_U").unwrap().fill(0.0);
    let ppl = perplexity(&uniform, &prompts, &HeadMask::all_active(&cfg)).unwrap();

    let cfg = ModelConfig::new(2, 2, 8, 32).with_seed(2);
    let mut p = init_params(&cfg).unwrap();
    let (l, h) = (1, 0);
    let n = cfg.d_head * cfg.d_model;
    p.tensor_mut(&format!("blocks.{l}.attn.W_O")).unwrap()[h * n..(h + 1) * n].fill(0.0);
    let rec = ablate_all_heads(&p, &prompts).unwrap();
    let dz = rec
        .iter()
        .find(|r| (r.layer, r.head) == (l, h))
        .unwrap()
        .delta_ppl;
    check(
        (ppl - 256.0).abs() <= 1e-6 && dz.abs() <= 1e-6,
        format!("uniform perplexity {ppl:.9}, zeroed-head delta PPL {dz:.2e}"),
    )
}

fn num(r: &BTreeMap<String, String>, k: &str) -> f64 {
    r[k].parse().unwrap_or(f64::NAN)
}

struct AcceptanceRun {
    exp: Experiment,
}

impl AcceptanceRun {
    fn group_csv(&self, arch_variant: (&str, &str), file: &str) -> Vec<BTreeMap<String, String>> {
        let g = self
            .exp
            .groups()
            .unwrap()
            .into_iter()
            .find(|g| g.arch_id == arch_variant.0 && g.variant == arch_variant.1)
            .unwrap();
        read_csv(&self.exp.out_root.join(g.rel_dir()).join(file)).expect(file)
    }

    fn groups(&self) -> Vec<(String, String)> {
        self.exp
            .groups()
            .unwrap()
            .into_iter()
            .map(|g| (g.arch_id, g.variant))
            .collect()
    }
}

fn acceptance_run() -> seedstab::Result<AcceptanceRun> {
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-run");
    let workers = std::thread::available_parallelism().map_or(1, usize::from);
    let exp = Experiment::load(
        format!("{MANIFEST}/configs/acceptance.toml"),
        &Overrides {
            out: Some(out),
            workers: Some(workers),
            anchor_seed: None,
        },
    )?;
    let t = cmd_train(&exp)?;
    if !t.failed.is_empty() {
        return Err(seedstab::Error::Usage(format!(
            "refits failed: {:?}",
            t.failed
        )));
    }
    cmd_dump(&exp)?;
    cmd_analyze(&exp, &Which::ALL)?;
    cmd_report(&exp)?;
    Ok(AcceptanceRun { exp })
}

/// 4. Cross-layer stability dominates same-layer stability for every head.
fn mode_dominance(run: &AcceptanceRun) -> Outcome {
    let (mut total, mut ok) = (0, 0);
    for (a, v) in run.groups() {
        let same = run.group_csv((&a, &v), "head_stability_same_layer.csv");
        let cross = run.group_csv((&a, &v), "head_stability_cross_layer.csv");
        for (s, c) in same.iter().zip(&cross) {
            total += 1;
            ok += usize::from(num(c, "S") >= num(s, "S"));
        }
    }
    check(
        ok == total && total > 0,
        format!("{ok}/{total} heads have cross-layer S >= same-layer S"),
    )
}

/// 9. Qualitative trends. Returns the hard outcome and a soft note.
fn trends(run: &AcceptanceRun) -> (Outcome, String) {
    let mut lines = Vec::new();
    let mut hard_ok = true;
    let mut mean_s = BTreeMap::new();
    for (a, v) in run.groups() {
        let overlay = run.group_csv((&a, &v), "cka_overlay.csv");
        let above = overlay
            .iter()
            .filter(|r| num(r, "cka") >= num(r, "S_l"))
            .count();
        let pairs: Vec<String> = overlay
            .iter()
            .map(|r| format!("{:.3}/{:.3}", num(r, "cka"), num(r, "S_l")))
            .collect();
        let a_ok = 2 * above > overlay.len();
        let layers = run.group_csv((&a, &v), "layers_same_layer.csv");
        let s_l: Vec<f64> = layers.iter().map(|r| num(r, "S_l")).collect();
        let p = seedstab::stability::LayerProfile::from_layer_means(s_l.clone()).unwrap();
        let b_ok = p.l_min >= p.l_max;
        hard_ok &= a_ok && b_ok;
        mean_s.insert(
            v.clone(),
            sorted_mean(
                &run.group_csv((&a, &v), "head_stability_same_layer.csv")
                    .iter()
                    .map(|r| num(r, "S"))
                    .collect::<Vec<_>>(),
            ),
        );
        lines.push(format!(
            "{v}: (a) CKA >= S_l in {above}/{} layers [CKA/S_l {}] {}; (b) l_max {} l_min {} {}",
            overlay.len(),
            pairs.join(" "),
            if a_ok { "ok" } else { "FAILED" },
            p.l_max,
            p.l_min,
            if b_ok { "ok" } else { "FAILED" }
        ));
    }
    let adam = mean_s.get("adam").copied().unwrap_or(f64::NAN);
    let adamw = mean_s
        .iter()
        .find(|(k, _)| k.starts_with("adamw"))
        .map_or(f64::NAN, |x| *x.1);
    let soft = format!("(c) mean S AdamW {adamw:.4} vs Adam {adam:.4}");
    let c_ok = adamw >= adam;
    let detail = lines.join("; ");
    let outcome = check(hard_ok, detail);
    (
        outcome,
        if c_ok {
            format!("{soft} ok")
        } else {
            format!("WARN {soft}: AdamW below Adam")
        },
    )
}

/// 10. meta-SNE contract.
fn metasne_contract() -> Outcome {
    let x = random_cloud(21, 30, 12);
    let cfg = TsneConfig::for_points(30, 0);
    let cond = conditional_probabilities(&squared_distances(&x), 30, cfg.perplexity).unwrap();
    let target = cfg.perplexity.ln();
    let worst = (0..30)
        .map(|i| (entropy(&cond.p[i * 30..(i + 1) * 30]) - target).abs())
        .fold(0.0, f64::max);
    let emb = tsne(&x, &cfg).unwrap();
    let (after, last) = (
        emb.kl_at(cfg.exaggeration_iters).unwrap_or(f64::NAN),
        emb.final_kl(),
    );
    let kept = (0..20).filter(|&s| duplicate_stays_together(s)).count();
    check(
        worst <= ENTROPY_TOLERANCE && last < after && kept >= 19,
        format!("max entropy error {worst:.1e}; KL {after:.4} -> {last:.4}; duplicates adjacent in {kept}/20 seeds"),
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("read dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

/// 11. Two full runs of one config produce identical trees.
fn pipeline_determinism() -> Outcome {
    let cfg = format!(
        r#"
name = "determinism"
seeds = [0, 1, 2]
workers = 2
out = "out"
corpus = "{MANIFEST}/data/shakespeare.txt"
prompts = "{MANIFEST}/data/prompts/primary.json"
sweep = "{MANIFEST}/data/prompts/sweep.json"

[arch]
depths = [2]
heads = [2]
attn_only = [true, false]
d_model = 8
n_ctx = 256

[train]
lr = 3e-3
batch_size = 2
max_steps = 30
n_ctx_train = 32

[[optimizers]]
kind = "Adam"

[[optimizers]]
kind = "AdamW"
weight_decay = 0.1

[analysis]
tsne_iters = 300
"#
    );
    let mut trees = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment::from_config(
            ExperimentConfig::parse(&cfg).unwrap(),
            dir.path().to_path_buf(),
            &Overrides::default(),
        )
        .unwrap();
        cmd_train(&exp).unwrap();
        cmd_dump(&exp).unwrap();
        cmd_analyze(&exp, &Which::ALL).unwrap();
        cmd_report(&exp).unwrap();
        trees.push(tree(&exp.out_root));
    }
    let differing: Vec<_> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let same_keys = trees[0].keys().eq(trees[1].keys());
    check(
        differing.is_empty() && same_keys,
        format!(
            "{} files compared, {} differ {:?}",
            trees[0].len(),
            differing.len(),
            differing.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn report(n: usize, name: &str, t0: Instant, outcome: Outcome, failures: &mut usize) {
    let secs = t0.elapsed().as_secs_f64();
    match outcome {
        Pass(d) => println!("criterion {n:>2} PASS {name}: {d} ({secs:.2}s)"),
        Fail(d) => {
            *failures += 1;
            println!("criterion {n:>2} FAIL {name}: {d} ({secs:.2}s)");
        }
    }
}

fn main() {
    let mut failures = 0;
    let corpus = load_corpus(format!("{MANIFEST}/data/shakespeare.txt"), 0.1).expect("corpus");

    let t = Instant::now();
    report(
        1,
        "metric oracle equivalence",
        t,
        metric_oracle(),
        &mut failures,
    );

    let t = Instant::now();
    let prompts = primary_prompts(20);
    let refits = quick_refits(&[0, 1, 2], &corpus);
    let dumps: Vec<_> = refits
        .iter()
        .map(|p| dump_attention(p, &prompts).unwrap())
        .collect();
    let t_self = Instant::now();
    report(
        2,
        "self-match identity",
        t_self,
        self_match(&dumps),
        &mut failures,
    );
    report(
        3,
        "permutation invariance",
        t,
        permutation_invariance(&dumps),
        &mut failures,
    );

    let run_start = Instant::now();
    let run = acceptance_run();
    let run_secs = run_start.elapsed().as_secs_f64();

    let t = Instant::now();
    match &run {
        Ok(r) => report(4, "mode dominance", t, mode_dominance(r), &mut failures),
        Err(e) => report(
            4,
            "mode dominance",
            t,
            Fail(format!("acceptance run failed: {e}")),
            &mut failures,
        ),
    }
    let t = Instant::now();
    report(5, "gradient check", t, gradient_check(), &mut failures);
    let t = Instant::now();
    report(
        6,
        "optimizer equivalence",
        t,
        optimizer_equivalence(&corpus),
        &mut failures,
    );
    let t = Instant::now();
    report(7, "CKA suite", t, cka_suite(), &mut failures);
    let t = Instant::now();
    report(
        8,
        "perplexity anchor",
        t,
        perplexity_anchor(),
        &mut failures,
    );
    let t = Instant::now();
    match &run {
        Ok(r) => {
            let (outcome, soft) = trends(r);
            report(
                9,
                &format!("paper trends (run took {run_secs:.0}s)"),
                t,
                outcome,
                &mut failures,
            );
            println!("            {soft}");
        }
        Err(e) => report(
            9,
            "paper trends",
            t,
            Fail(format!("acceptance run failed: {e}")),
            &mut failures,
        ),
    }
    let t = Instant::now();
    report(
        10,
        "meta-SNE contract",
        t,
        metasne_contract(),
        &mut failures,
    );
    let t = Instant::now();
    report(
        11,
        "pipeline determinism",
        t,
        pipeline_determinism(),
        &mut failures,
    );

    println!("acceptance: {} of 11 criteria passed", 11 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
