// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment orchestration: a TOML configuration describing an
//! architecture matrix, seeds and optimizer variants, the refit farm that
//! trains and dumps every refit, the analyses, and the report.
//!
//! Every path in a configuration file is resolved against the directory
//! holding that file. All outputs live under one output root, reference
//! each other by root-relative paths and carry no timestamps, so the whole
//! pipeline is a pure function of the configuration, corpus and prompts.

mod analyze;
mod farm;
mod report;
pub mod svg;
pub mod tables;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use analyze::{cmd_analyze, AnalyzeSummary, Which};
pub use farm::{cmd_dump, cmd_train, DumpSummary, TrainSummary};
pub use report::{cmd_report, ReportSummary, REPORT_TABLES};

use crate::corpus::{load_prompts, PromptSet};
use crate::error::{Error, Result};
use crate::optim::{OptimizerKind, TrainConfig};
use crate::store::RefitPaths;
use crate::tinylm::ModelConfig;

fn default_workers() -> usize {
    1
}
fn default_val_fraction() -> f64 {
    0.1
}
fn default_threshold() -> f64 {
    crate::cka::DEFAULT_THRESHOLD
}
fn default_tsne_iters() -> usize {
    1000
}

/// The architecture matrix: every combination of depth, head count and
/// `attn_only` flag is one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchMatrix {
    pub depths: Vec<usize>,
    pub heads: Vec<usize>,
    pub attn_only: Vec<bool>,
    pub d_model: usize,
    #[serde(default)]
    pub d_mlp: Option<usize>,
    pub n_ctx: usize,
    #[serde(default)]
    pub init_range: Option<f64>,
}

/// Optimizer settings shared by all variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub n_ctx_train: Option<usize>,
}

/// One optimizer variant of the mirror comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerVariant {
    pub kind: OptimizerKind,
    #[serde(default)]
    pub weight_decay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    #[serde(default = "default_threshold")]
    pub cka_threshold: f64,
    #[serde(default = "default_tsne_iters")]
    pub tsne_iters: usize,
    #[serde(default)]
    pub tsne_seed: u64,
    /// Defaults to `min(30, (N - 1) / 3)` for `N` embedded heads.
    #[serde(default)]
    pub tsne_perplexity: Option<f64>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            cka_threshold: default_threshold(),
            tsne_iters: default_tsne_iters(),
            tsne_seed: 0,
            tsne_perplexity: None,
        }
    }
}

/// Contents of an experiment TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub out: PathBuf,
    pub corpus: PathBuf,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    pub prompts: PathBuf,
    #[serde(default)]
    pub sweep: Option<PathBuf>,
    #[serde(default)]
    pub anchor_seed: Option<u64>,
    pub arch: ArchMatrix,
    pub train: TrainSettings,
    pub optimizers: Vec<OptimizerVariant>,
    #[serde(default)]
    pub analysis: AnalysisSettings,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        Ok(cfg)
    }

    /// Every architecture of the matrix with seed 0, in depth, head, flag order.
    pub fn archs(&self) -> Result<Vec<ModelConfig>> {
        let a = &self.arch;
        let mut out = Vec::new();
        for &l in &a.depths {
            for &h in &a.heads {
                for &attn_only in &a.attn_only {
                    let mut c =
                        ModelConfig::new(l, h, a.d_model, a.n_ctx).with_attn_only(attn_only);
                    if let Some(d_mlp) = a.d_mlp {
                        c = c.with_d_mlp(d_mlp);
                    }
                    if let Some(r) = a.init_range {
                        c = c.with_init_range(r);
                    }
                    c.validate()?;
                    out.push(c);
                }
            }
        }
        Ok(out)
    }

    pub fn variants(&self) -> Result<Vec<TrainConfig>> {
        let t = &self.train;
        self.optimizers
            .iter()
            .map(|v| {
                let mut c = match v.kind {
                    OptimizerKind::Adam => TrainConfig::adam(t.lr, t.batch_size, t.max_steps),
                    OptimizerKind::AdamW => TrainConfig::adamw(
                        t.lr,
                        v.weight_decay
                            .ok_or_else(|| Error::config("AdamW variant needs weight_decay"))?,
                        t.batch_size,
                        t.max_steps,
                    ),
                };
                if v.kind == OptimizerKind::Adam && v.weight_decay.is_some() {
                    return Err(Error::config("Adam takes no weight_decay; use AdamW"));
                }
                if let Some(every) = t.checkpoint_every {
                    c.checkpoint_every = every;
                }
                c.n_ctx_train = t.n_ctx_train.unwrap_or(self.arch.n_ctx.min(128));
                c.validate()?;
                Ok(c)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        if s.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seed list has duplicates"));
        }
        if self.optimizers.is_empty() {
            return Err(Error::config("no optimizer variants"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction must lie in (0, 1)"));
        }
        if self.archs()?.is_empty() {
            return Err(Error::config("architecture matrix is empty"));
        }
        let variants = self.variants()?;
        let mut tags: Vec<String> = variants.iter().map(TrainConfig::variant_tag).collect();
        tags.sort();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("two optimizer variants share a tag"));
        }
        if let Some(a) = self.anchor_seed {
            if !self.seeds.contains(&a) {
                return Err(Error::config(format!(
                    "anchor seed {a} is not in the seed list"
                )));
            }
        }
        Ok(())
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Command-line overrides of configuration values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub anchor_seed: Option<u64>,
}

/// One trained model: an architecture, an optimizer variant and a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RefitSpec {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub paths: RefitPaths,
}

impl RefitSpec {
    pub fn seed(&self) -> u64 {
        self.model_cfg.seed
    }

    pub fn label(&self) -> String {
        format!(
            "{} {} seed {}",
            self.model_cfg.label(),
            self.train_cfg.variant_tag(),
            self.model_cfg.seed
        )
    }
}

/// All refits of one architecture trained with one optimizer variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub arch: ModelConfig,
    pub arch_id: String,
    pub variant: String,
    pub refits: Vec<RefitSpec>,
}

impl Group {
    /// Path below the output root for this group's analysis outputs.
    pub fn rel_dir(&self) -> PathBuf {
        Path::new("analysis")
            .join(&self.arch_id)
            .join(&self.variant)
    }
}

/// A loaded configuration with resolved paths and overrides applied.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub out_root: PathBuf,
    pub workers: usize,
    pub anchor_seed: u64,
}

impl Experiment {
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_config(ExperimentConfig::parse(&text)?, base, overrides)
    }

    pub fn from_config(
        config: ExperimentConfig,
        base_dir: PathBuf,
        overrides: &Overrides,
    ) -> Result<Self> {
        config.validate()?;
        let out_root = overrides
            .out
            .clone()
            .unwrap_or_else(|| base_dir.join(&config.out));
        let workers = overrides.workers.unwrap_or(config.workers).max(1);
        let anchor_seed = overrides
            .anchor_seed
            .or(config.anchor_seed)
            .unwrap_or_else(|| *config.seeds.iter().min().expect("validated nonempty"));
        if !config.seeds.contains(&anchor_seed) {
            return Err(Error::config(format!(
                "anchor seed {anchor_seed} is not in the seed list"
            )));
        }
        Ok(Self {
            config,
            base_dir,
            out_root,
            workers,
            anchor_seed,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.resolve(&self.config.corpus)
    }

    pub fn primary_prompts(&self) -> Result<PromptSet> {
        let mut sets = load_prompts(self.resolve(&self.config.prompts))?;
        if sets.len() != 1 {
            return Err(Error::config(
                "the primary prompt file must hold a single JSON array",
            ));
        }
        let mut set = sets.remove(0);
        set.name = "primary".into();
        Ok(set)
    }

    /// Length-sweep prompt sets, empty if none are configured.
    pub fn sweep_sets(&self) -> Result<Vec<PromptSet>> {
        match &self.config.sweep {
            None => Ok(Vec::new()),
            Some(p) => {
                let mut sets = load_prompts(self.resolve(p))?;
                for s in &mut sets {
                    let n = s
                        .nominal_length
                        .ok_or_else(|| Error::config("sweep file must map lengths to prompts"))?;
                    s.name = format!("sweep-len{n:02}");
                }
                Ok(sets)
            }
        }
    }

    /// Every refit in architecture, variant, seed order.
    pub fn refits(&self) -> Result<Vec<RefitSpec>> {
        Ok(self.groups()?.into_iter().flat_map(|g| g.refits).collect())
    }

    pub fn groups(&self) -> Result<Vec<Group>> {
        let mut seeds = self.config.seeds.clone();
        seeds.sort_unstable();
        let mut out = Vec::new();
        for arch in self.config.archs()? {
            let arch_id = arch.arch_id();
            for train_cfg in self.config.variants()? {
                let variant = train_cfg.variant_tag();
                let refits = seeds
                    .iter()
                    .map(|&seed| RefitSpec {
                        model_cfg: arch.clone().with_seed(seed),
                        train_cfg: train_cfg.clone(),
                        paths: RefitPaths::new(&self.out_root, &arch_id, &variant, seed),
                    })
                    .collect();
                out.push(Group {
                    arch: arch.clone(),
                    arch_id: arch_id.clone(),
                    variant,
                    refits,
                });
            }
        }
        Ok(out)
    }

    /// `path` relative to the output root, with `/` separators.
    pub fn rel(&self, path: &Path) -> String {
        let r = path.strip_prefix(&self.out_root).unwrap_or(path);
        r.components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }
}
