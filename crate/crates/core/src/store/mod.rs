// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk artifacts: the tensor container, checkpoints and activation dumps.
//!
//! Every refit owns one directory
//! `refits/<arch_id>/<variant_tag>/<seed>/` holding `ckpt.bin`, `attn.bin`,
//! `resid.bin`, `sig.bin` and one `attn-<set>.bin` per extra prompt set.
//! Files are written atomically and never modified afterwards.

mod checkpoint;
mod dumps;
mod tensorfile;

use std::path::{Path, PathBuf};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dumps::{
    dump_attention, dump_traces, AttentionDump, ResidualDump, SignatureDump, ROW_SUM_TOLERANCE,
};
pub(crate) use tensorfile::write_atomic;
pub use tensorfile::{TensorEntry, TensorFile, FORMAT_VERSION};

/// File locations of one refit below an output root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefitPaths {
    pub dir: PathBuf,
}

impl RefitPaths {
    pub fn new(root: &Path, arch_id: &str, variant_tag: &str, seed: u64) -> Self {
        Self {
            dir: root
                .join("refits")
                .join(arch_id)
                .join(variant_tag)
                .join(seed.to_string()),
        }
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("ckpt.bin")
    }

    pub fn attention(&self) -> PathBuf {
        self.dir.join("attn.bin")
    }

    pub fn residual(&self) -> PathBuf {
        self.dir.join("resid.bin")
    }

    pub fn signature(&self) -> PathBuf {
        self.dir.join("sig.bin")
    }

    /// Attention dump over a named auxiliary prompt set such as one sweep length.
    pub fn attention_for(&self, set_name: &str) -> PathBuf {
        self.dir.join(format!("attn-{set_name}.bin"))
    }
}
