// SPDX-License-Identifier: MIT OR Apache-2.0

//! The analyses run over dumped refits.
//!
//! Each analysis of each (architecture, optimizer variant) group writes its
//! tables below `analysis/<arch_id>/<variant>/` together with a manifest
//! naming every input by digest. A rerun whose manifest still matches its
//! inputs and outputs does nothing.

use std::cell::OnceCell;
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Value};

use super::tables::{self, file_digest, write_json, Cell, Manifest, Table};
use super::{Experiment, Group};
use crate::ablation::{ablate_all_heads, stability_ablation_correlation};
use crate::cka::residual_stability;
use crate::corpus::{sha256_hex, PromptSet};
use crate::error::{Error, Result};
use crate::metasne::{head_distance_matrix, meta_feature, tsne, TsneConfig};
use crate::optim::trailing_mean;
use crate::stability::{
    alignment_map, commonness, layer_profile, norm_stability_correlation, prompt_length_sweep,
    relative_depth, sorted_mean, HeadStability, LayerProfile, MatchMode, RefitComparison,
    SweepInput,
};
use crate::store::{load_checkpoint, AttentionDump, ResidualDump, SignatureDump};
use crate::tinylm::{head_output_norms, perplexity, query_norms, HeadMask};

/// One selectable analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Which {
    Stability,
    CrossLayer,
    Uniqueness,
    Cka,
    Ablate,
    Metasne,
    Sweep,
    Norms,
}

impl Which {
    pub const ALL: [Which; 8] = [
        Which::Stability,
        Which::CrossLayer,
        Which::Uniqueness,
        Which::Cka,
        Which::Ablate,
        Which::Metasne,
        Which::Sweep,
        Which::Norms,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Which::Stability => "stability",
            Which::CrossLayer => "cross_layer",
            Which::Uniqueness => "uniqueness",
            Which::Cka => "cka",
            Which::Ablate => "ablate",
            Which::Metasne => "metasne",
            Which::Sweep => "sweep",
            Which::Norms => "norms",
        }
    }

    /// Parse a comma-separated list; `all` selects every analysis.
    pub fn parse_list(s: &str) -> Result<Vec<Which>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(Which::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::usage("no analyses selected"));
        }
        Ok(out)
    }
}

impl FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Which::ALL
            .into_iter()
            .find(|w| w.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Which::ALL.iter().map(|w| w.as_str()).collect();
                Error::usage(format!(
                    "unknown analysis `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Which analyses ran and which were already current.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalyzeSummary {
    pub ran: Vec<String>,
    pub skipped: Vec<String>,
}

/// File digests computed at most once per command.
#[derive(Default)]
struct Digests(HashMap<PathBuf, String>);

impl Digests {
    fn get(&mut self, path: &Path) -> Result<String> {
        if let Some(d) = self.0.get(path) {
            return Ok(d.clone());
        }
        let d = file_digest(path)?;
        self.0.insert(path.to_path_buf(), d.clone());
        Ok(d)
    }
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingInput {
            path,
            command: "dump",
        })
    }
}

fn prompt_digest(set: &PromptSet) -> String {
    sha256_hex(set.digests().join("\n").as_bytes())
}

/// Lazily loaded data of one group, shared by its analyses.
struct GroupData<'a> {
    exp: &'a Experiment,
    group: &'a Group,
    attn: OnceCell<Vec<AttentionDump>>,
    comparison: OnceCell<RefitComparison>,
    same_layer: OnceCell<(Vec<HeadStability>, LayerProfile)>,
}

impl<'a> GroupData<'a> {
    fn new(exp: &'a Experiment, group: &'a Group) -> Self {
        Self {
            exp,
            group,
            attn: OnceCell::new(),
            comparison: OnceCell::new(),
            same_layer: OnceCell::new(),
        }
    }

    fn anchor_index(&self) -> usize {
        self.group
            .refits
            .iter()
            .position(|r| r.seed() == self.exp.anchor_seed)
            .expect("anchor seed is one of the seeds")
    }

    fn attention(&self) -> Result<&Vec<AttentionDump>> {
        if let Some(a) = self.attn.get() {
            return Ok(a);
        }
        let dumps = self
            .group
            .refits
            .iter()
            .map(|r| AttentionDump::read(require(r.paths.attention())?))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.attn.get_or_init(|| dumps))
    }

    fn comparison(&self) -> Result<&RefitComparison> {
        if let Some(c) = self.comparison.get() {
            return Ok(c);
        }
        let dumps = self.attention()?;
        let a = self.anchor_index();
        let pairs: Vec<(u64, &AttentionDump)> = self
            .group
            .refits
            .iter()
            .zip(dumps)
            .enumerate()
            .filter(|(i, _)| *i != a)
            .map(|(_, (r, d))| (r.seed(), d))
            .collect();
        // A single-seed experiment compares the anchor with itself.
        let pairs = if pairs.is_empty() {
            vec![(self.exp.anchor_seed, &dumps[a])]
        } else {
            pairs
        };
        let c = RefitComparison::new(self.exp.anchor_seed, &dumps[a], &pairs)?;
        Ok(self.comparison.get_or_init(|| c))
    }

    fn heads(&self, mode: MatchMode) -> Result<(Vec<HeadStability>, LayerProfile)> {
        if mode == MatchMode::SameLayer {
            if let Some(x) = self.same_layer.get() {
                return Ok(x.clone());
            }
        }
        let c = self.comparison()?;
        let heads = c.all_heads(mode)?;
        let profile = layer_profile(&heads, c.n_layers, c.n_heads)?;
        if mode == MatchMode::SameLayer {
            let _ = self.same_layer.set((heads.clone(), profile.clone()));
        }
        Ok((heads, profile))
    }
}

/// Run the selected analyses for every group (and meta-SNE across groups).
pub fn cmd_analyze(exp: &Experiment, which: &[Which]) -> Result<AnalyzeSummary> {
    let groups = exp.groups()?;
    let mut digests = Digests::default();
    let mut summary = AnalyzeSummary::default();
    let primary = exp.primary_prompts()?;
    let sweeps = exp.sweep_sets()?;
    for group in &groups {
        let data = GroupData::new(exp, group);
        for &w in which.iter().filter(|&&w| w != Which::Metasne) {
            let label = format!("{} {} {}", w.as_str(), group.arch.label(), group.variant);
            let inputs = group_inputs(exp, group, w, &primary, &sweeps, &mut digests)?;
            let params = group_params(exp, w);
            let dir = exp.out_root.join(group.rel_dir());
            let manifest = dir.join(format!("manifest-{}.json", w.as_str()));
            if Manifest::is_current(&manifest, &exp.out_root, w.as_str(), &params, &inputs) {
                summary.skipped.push(label);
                continue;
            }
            log::info!("analysis {label}");
            let outputs = run_group(&data, w, &dir, &primary, &sweeps)?;
            finish(exp, &manifest, w, params, inputs, &outputs)?;
            summary.ran.push(label);
        }
    }
    if which.contains(&Which::Metasne) {
        let label = "metasne all groups".to_string();
        let mut inputs = BTreeMap::new();
        for r in groups.iter().flat_map(|g| &g.refits) {
            let p = require(r.paths.signature())?;
            inputs.insert(exp.rel(&p), digests.get(&p)?);
        }
        let params = metasne_params(exp);
        let dir = exp.out_root.join("analysis").join("metasne");
        let manifest = dir.join("manifest-metasne.json");
        if Manifest::is_current(&manifest, &exp.out_root, "metasne", &params, &inputs) {
            summary.skipped.push(label);
        } else {
            log::info!("analysis {label}");
            let outputs = run_metasne(exp, &groups, &dir)?;
            finish(exp, &manifest, Which::Metasne, params, inputs, &outputs)?;
            summary.ran.push(label);
        }
    }
    Ok(summary)
}

fn finish(
    exp: &Experiment,
    manifest: &Path,
    w: Which,
    params: Value,
    inputs: BTreeMap<String, String>,
    outputs: &[PathBuf],
) -> Result<()> {
    let outputs = outputs
        .iter()
        .map(|p| Ok((exp.rel(p), file_digest(p)?)))
        .collect::<Result<_>>()?;
    write_json(
        manifest,
        &Manifest {
            analysis: w.as_str().into(),
            params,
            inputs,
            outputs,
        },
    )
}

fn group_inputs(
    exp: &Experiment,
    group: &Group,
    w: Which,
    primary: &PromptSet,
    sweeps: &[PromptSet],
    digests: &mut Digests,
) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    let mut extra = BTreeMap::new();
    for r in &group.refits {
        let p = &r.paths;
        match w {
            Which::Stability | Which::CrossLayer | Which::Uniqueness => files.push(p.attention()),
            Which::Cka => files.extend([p.attention(), p.residual()]),
            Which::Ablate | Which::Norms => files.extend([p.attention(), p.checkpoint()]),
            Which::Sweep => {
                if sweeps.is_empty() {
                    return Err(Error::config(
                        "the sweep analysis needs a `sweep` prompt file",
                    ));
                }
                files.extend(sweeps.iter().map(|s| p.attention_for(&s.name)));
            }
            Which::Metasne => unreachable!("meta-SNE spans all groups"),
        }
    }
    if matches!(w, Which::Ablate | Which::Norms) {
        extra.insert(format!("prompts/{}", primary.name), prompt_digest(primary));
    }
    let mut out = BTreeMap::new();
    for f in files {
        let f = require(f)?;
        out.insert(exp.rel(&f), digests.get(&f)?);
    }
    out.extend(extra);
    Ok(out)
}

fn group_params(exp: &Experiment, w: Which) -> Value {
    let mut p = json!({ "anchor_seed": exp.anchor_seed });
    if w == Which::Cka {
        p["cka_threshold"] = json!(exp.config.analysis.cka_threshold);
    }
    p
}

fn metasne_params(exp: &Experiment) -> Value {
    let a = &exp.config.analysis;
    json!({ "tsne_iters": a.tsne_iters, "tsne_seed": a.tsne_seed, "tsne_perplexity": a.tsne_perplexity })
}

fn row(cells: impl IntoIterator<Item = Cell>) -> Vec<Cell> {
    cells.into_iter().collect()
}

#[derive(Serialize)]
struct StabilityJson<'a> {
    arch_id: &'a str,
    variant: &'a str,
    anchor_seed: u64,
    mode: MatchMode,
    heads: &'a [HeadStability],
    profile: &'a LayerProfile,
}

fn write_stability(data: &GroupData, dir: &Path, mode: MatchMode) -> Result<Vec<PathBuf>> {
    let g = data.group;
    let (heads, profile) = data.heads(mode)?;
    let mut t = Table::new(tables::HEAD_STABILITY);
    for h in &heads {
        t.push(row([
            g.arch_id.as_str().into(),
            g.variant.as_str().into(),
            h.anchor_seed.into(),
            h.layer.into(),
            h.head.into(),
            h.overall.into(),
            h.min_pair().into(),
            h.max_pair().into(),
        ]));
    }
    let mut lt = Table::new(tables::LAYERS);
    for (l, &s) in profile.s_l.iter().enumerate() {
        lt.push(row([
            g.arch_id.as_str().into(),
            g.variant.as_str().into(),
            mode.as_str().into(),
            l.into(),
            relative_depth(l + 1, profile.n_layers).into(),
            s.into(),
        ]));
    }
    let m = mode.as_str();
    let files = [
        dir.join(format!("head_stability_{m}.csv")),
        dir.join(format!("layers_{m}.csv")),
        dir.join(format!("stability_{m}.json")),
    ];
    t.write(&files[0])?;
    lt.write(&files[1])?;
    write_json(
        &files[2],
        &StabilityJson {
            arch_id: &g.arch_id,
            variant: &g.variant,
            anchor_seed: data.exp.anchor_seed,
            mode,
            heads: &heads,
            profile: &profile,
        },
    )?;
    let mut out = files.to_vec();
    if mode == MatchMode::CrossLayer {
        let map = alignment_map(&heads, profile.n_layers)?;
        let mut at = Table::new(tables::ALIGNMENT);
        for (i, r) in map.h.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                at.push(row([
                    g.arch_id.as_str().into(),
                    g.variant.as_str().into(),
                    i.into(),
                    j.into(),
                    v.into(),
                ]));
            }
        }
        let (csv, js) = (dir.join("alignment.csv"), dir.join("alignment.json"));
        at.write(&csv)?;
        write_json(&js, &map)?;
        out.extend([csv, js]);
    }
    Ok(out)
}

fn run_group(
    data: &GroupData,
    w: Which,
    dir: &Path,
    primary: &PromptSet,
    sweeps: &[PromptSet],
) -> Result<Vec<PathBuf>> {
    let exp = data.exp;
    let g = data.group;
    let anchor = exp.anchor_seed;
    let id = g.arch_id.as_str();
    let var = g.variant.as_str();
    match w {
        Which::Stability => write_stability(data, dir, MatchMode::SameLayer),
        Which::CrossLayer => write_stability(data, dir, MatchMode::CrossLayer),
        Which::Uniqueness => {
            let dump = &data.attention()?[data.anchor_index()];
            let layers = (0..dump.n_layers)
                .map(|l| commonness(dump, l))
                .collect::<Result<Vec<_>>>()?;
            let mut t = Table::new(tables::COMMONNESS);
            for c in &layers {
                for (h, &v) in c.per_head.iter().enumerate() {
                    t.push(row([
                        id.into(),
                        var.into(),
                        anchor.into(),
                        c.layer.into(),
                        h.into(),
                        v.into(),
                    ]));
                }
            }
            let (csv, js) = (dir.join("commonness.csv"), dir.join("commonness.json"));
            t.write(&csv)?;
            write_json(
                &js,
                &json!({ "anchor_seed": anchor, "self_excluded": true, "divisor": "n_heads - 1", "layers": layers }),
            )?;
            Ok(vec![csv, js])
        }
        Which::Cka => {
            let resid = g
                .refits
                .iter()
                .map(|r| ResidualDump::read(require(r.paths.residual())?))
                .collect::<Result<Vec<_>>>()?;
            let a = data.anchor_index();
            let pairs: Vec<&ResidualDump> = resid
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != a)
                .map(|x| x.1)
                .collect();
            let threshold = exp.config.analysis.cka_threshold;
            let per_layer = residual_stability(&resid[a], &pairs, threshold)?;
            let (_, profile) = data.heads(MatchMode::SameLayer)?;
            let mut t = Table::new(tables::CKA);
            let mut o = Table::new(tables::CKA_OVERLAY);
            for (l, &c) in per_layer.iter().enumerate() {
                t.push(row([id.into(), var.into(), l.into(), c.into()]));
                o.push(row([
                    id.into(),
                    var.into(),
                    l.into(),
                    c.into(),
                    profile.s_l[l].into(),
                ]));
            }
            let files = [
                dir.join("cka.csv"),
                dir.join("cka_overlay.csv"),
                dir.join("cka.json"),
            ];
            t.write(&files[0])?;
            o.write(&files[1])?;
            write_json(
                &files[2],
                &json!({
                    "anchor_seed": anchor,
                    "kernel": "rbf",
                    "threshold": threshold,
                    "bandwidth": "threshold * median pairwise distance",
                    "pooling": "mean over positions",
                    "hsic": "biased",
                    "cka": per_layer,
                    "S_l": profile.s_l,
                }),
            )?;
            Ok(files.to_vec())
        }
        Which::Ablate => {
            let spec = &g.refits[data.anchor_index()];
            let ckpt = load_checkpoint(spec.paths.checkpoint())?;
            let records = ablate_all_heads(&ckpt.params, primary)?;
            let (heads, _) = data.heads(MatchMode::SameLayer)?;
            let corr = stability_ablation_correlation(&records, &heads)?;
            let mut t = Table::new(tables::ABLATION);
            for r in &records {
                let s = heads
                    .iter()
                    .find(|h| h.layer == r.layer && h.head == r.head)
                    .map(|h| h.overall)
                    .expect("every head has a stability");
                t.push(row([
                    id.into(),
                    var.into(),
                    anchor.into(),
                    r.layer.into(),
                    r.head.into(),
                    s.into(),
                    r.ppl_baseline.into(),
                    r.ppl_ablated.into(),
                    r.delta_ppl.into(),
                ]));
            }
            let (csv, js) = (dir.join("ablation.csv"), dir.join("ablation_corr.json"));
            t.write(&csv)?;
            write_json(&js, &json!({ "anchor_seed": anchor, "layers": corr }))?;
            Ok(vec![csv, js])
        }
        Which::Sweep => {
            let a = data.anchor_index();
            let per_set = sweeps
                .iter()
                .map(|s| {
                    g.refits
                        .iter()
                        .map(|r| AttentionDump::read(r.paths.attention_for(&s.name)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let inputs: Vec<SweepInput> = sweeps
                .iter()
                .zip(&per_set)
                .map(|(s, dumps)| SweepInput {
                    nominal_length: s.nominal_length.expect("sweep sets carry a length"),
                    anchor: &dumps[a],
                    pairs: g
                        .refits
                        .iter()
                        .zip(dumps)
                        .enumerate()
                        .filter(|(i, _)| *i != a)
                        .map(|(_, (r, d))| (r.seed(), d))
                        .collect(),
                })
                .collect();
            let rows = prompt_length_sweep(anchor, &inputs)?;
            let tokens: BTreeMap<usize, f64> = sweeps
                .iter()
                .map(|s| (s.nominal_length.unwrap_or(0), s.mean_byte_tokens()))
                .collect();
            let mut t = Table::new(tables::SWEEP);
            for (n, p) in &rows {
                for (l, &s) in p.s_l.iter().enumerate() {
                    t.push(row([
                        id.into(),
                        var.into(),
                        (*n).into(),
                        tokens[n].into(),
                        l.into(),
                        s.into(),
                    ]));
                }
            }
            let means: Vec<f64> = rows.iter().map(|(_, p)| sorted_mean(&p.s_l)).collect();
            let monotone = means.windows(2).all(|w| w[1] <= w[0]);
            let (csv, js) = (dir.join("sweep.csv"), dir.join("sweep.json"));
            t.write(&csv)?;
            write_json(
                &js,
                &json!({
                    "anchor_seed": anchor,
                    "rows": rows.iter().map(|(n, p)| json!({"nominal_length": n, "mean_byte_tokens": tokens[n], "profile": p})).collect::<Vec<_>>(),
                    "mean_S_by_length": means,
                    "monotone_non_increasing": monotone,
                }),
            )?;
            Ok(vec![csv, js])
        }
        Which::Norms => {
            let mut nt = Table::new(tables::NORMS);
            let mut rt = Table::new(tables::REFITS);
            let mut anchor_q = None;
            for r in &g.refits {
                let ckpt = load_checkpoint(r.paths.checkpoint())?;
                let q = query_norms(&ckpt.params);
                let o = head_output_norms(&ckpt.params, primary)?;
                for l in 0..q.rows {
                    for h in 0..q.cols {
                        nt.push(row([
                            id.into(),
                            var.into(),
                            r.seed().into(),
                            l.into(),
                            h.into(),
                            q.get(l, h).into(),
                            o.get(l, h).into(),
                        ]));
                    }
                }
                let ppl = perplexity(
                    &ckpt.params,
                    primary,
                    &HeadMask::all_active(&ckpt.model_cfg),
                )?;
                rt.push(row([
                    id.into(),
                    var.into(),
                    r.seed().into(),
                    ppl.into(),
                    sorted_mean(&o.values).into(),
                    trailing_mean(&ckpt.loss_history, 50).into(),
                ]));
                if r.seed() == anchor {
                    anchor_q = Some(q);
                }
            }
            let q = anchor_q.expect("anchor among refits");
            let (_, profile) = data.heads(MatchMode::SameLayer)?;
            let corr = norm_stability_correlation(&profile, &q);
            let files = [
                dir.join("norms.csv"),
                dir.join("refits.csv"),
                dir.join("norm_corr.json"),
            ];
            nt.write(&files[0])?;
            rt.write(&files[1])?;
            write_json(
                &files[2],
                &json!({
                    "anchor_seed": anchor,
                    "layer_mean_query_norm": q.row_means(),
                    "S_l": profile.s_l,
                    "pearson_r": corr.as_ref().ok(),
                    "missing_reason": corr.as_ref().err().map(|e| e.to_string()),
                }),
            )?;
            Ok(files.to_vec())
        }
        Which::Metasne => unreachable!("meta-SNE spans all groups"),
    }
}

fn run_metasne(exp: &Experiment, groups: &[Group], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut keys = Vec::new();
    let mut features = Vec::new();
    for g in groups {
        for r in &g.refits {
            let sig = SignatureDump::read(require(r.paths.signature())?)?;
            for l in 0..sig.n_layers {
                for h in 0..sig.n_heads {
                    let geo = head_distance_matrix(&sig, r.label(), (l, h))?;
                    keys.push((
                        g.arch_id.clone(),
                        g.variant.clone(),
                        r.seed(),
                        l,
                        h,
                        geo.relative_depth,
                    ));
                    features.push(meta_feature(&geo));
                }
            }
        }
    }
    let a = &exp.config.analysis;
    let mut cfg = TsneConfig::for_points(features.len(), a.tsne_seed);
    cfg.iters = a.tsne_iters;
    if let Some(p) = a.tsne_perplexity {
        cfg.perplexity = p;
    }
    let emb = tsne(&features, &cfg)?;
    let mut t = Table::new(tables::METASNE_POINTS);
    for (k, p) in keys.iter().zip(&emb.points) {
        t.push(row([
            k.0.as_str().into(),
            k.1.as_str().into(),
            k.2.into(),
            k.3.into(),
            k.4.into(),
            k.5.into(),
            p[0].into(),
            p[1].into(),
        ]));
    }
    let (csv, js) = (dir.join("points.csv"), dir.join("metasne.json"));
    t.write(&csv)?;
    write_json(
        &js,
        &json!({
            "n_points": features.len(),
            "meta_feature": "upper triangle of the per-head Euclidean distance matrix over prompts",
            "config": cfg,
            "kl_trace": emb.kl_trace,
        }),
    )?;
    Ok(vec![csv, js])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn which_lists_parse() {
        assert_eq!(
            Which::parse_list("cka, stability").unwrap(),
            vec![Which::Stability, Which::Cka]
        );
        assert_eq!(Which::parse_list("all").unwrap().len(), 8);
        assert_eq!(Which::parse_list("nope").unwrap_err().code(), "usage");
        assert!(Which::parse_list("").is_err());
    }
}
