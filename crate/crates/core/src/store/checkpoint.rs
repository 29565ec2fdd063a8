// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use serde_json::json;

use super::tensorfile::TensorFile;
use crate::error::{Error, Result};
use crate::optim::TrainConfig;
use crate::tinylm::{ModelConfig, Parameters, Params};

const LOSS_TENSOR: &str = "meta.loss_history";

/// Parameters of one trained refit together with everything needed to
/// reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub seed: u64,
    pub step: usize,
    pub params: Parameters,
    pub loss_history: Vec<f32>,
}

impl Checkpoint {
    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        f.set_meta("kind", json!("checkpoint"));
        f.set_meta(
            "model_cfg",
            serde_json::to_value(&self.model_cfg).expect("config"),
        );
        f.set_meta(
            "train_cfg",
            serde_json::to_value(&self.train_cfg).expect("config"),
        );
        f.set_meta("seed", json!(self.seed));
        f.set_meta("step", json!(self.step));
        for (slot, values) in self.params.tensors() {
            f.insert(slot.name.clone(), slot.shape.clone(), values.to_vec());
        }
        f.insert(
            LOSS_TENSOR,
            vec![self.loss_history.len()],
            self.loss_history.clone(),
        );
        f
    }

    pub fn from_tensor_file(f: &TensorFile) -> Result<Self> {
        if f.meta_as::<String>("kind")? != "checkpoint" {
            return Err(Error::CorruptHeader("file is not a checkpoint".into()));
        }
        let model_cfg: ModelConfig = f.meta_as("model_cfg")?;
        let train_cfg: TrainConfig = f.meta_as("train_cfg")?;
        let mut params = Params::<f32>::zeros(&model_cfg)
            .map_err(|e| Error::CorruptHeader(format!("stored model config is invalid: {e}")))?;
        let layout = params.layout.clone();
        for slot in &layout.slots {
            let t = f.tensor(&slot.name)?;
            if t.shape != slot.shape {
                return Err(Error::CorruptHeader(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    slot.name, t.shape, slot.shape
                )));
            }
            params.data[slot.range()].copy_from_slice(&t.data);
        }
        let expected = layout.slots.len() + 1;
        if f.tensors.len() != expected {
            return Err(Error::CorruptHeader(format!(
                "checkpoint holds {} tensors, expected {expected}",
                f.tensors.len()
            )));
        }
        Ok(Self {
            seed: f.meta_as("seed")?,
            step: f.meta_as("step")?,
            loss_history: f.tensor(LOSS_TENSOR)?.data.clone(),
            model_cfg,
            train_cfg,
            params,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.to_tensor_file().write(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_tensor_file(&TensorFile::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinylm::{forward_unmasked, init_params};

    fn ckpt() -> Checkpoint {
        let cfg = ModelConfig::new(2, 2, 8, 8).with_seed(4);
        Checkpoint {
            params: init_params(&cfg).unwrap(),
            model_cfg: cfg,
            train_cfg: TrainConfig::adamw(1e-3, 0.1, 2, 3),
            seed: 4,
            step: 3,
            loss_history: vec![5.5, 5.4, 5.2],
        }
    }

    #[test]
    fn roundtrip_preserves_logits_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let c = ckpt();
        save_checkpoint(&c, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        let probe = [256, 104, 105];
        assert_eq!(
            forward_unmasked(&back.params, &probe).unwrap().logits,
            forward_unmasked(&c.params, &probe).unwrap().logits
        );
    }

    #[test]
    fn truncated_checkpoint_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save_checkpoint(&ckpt(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, bytes).unwrap();
        assert_eq!(
            load_checkpoint(&path).unwrap_err().code(),
            "truncated-payload"
        );
    }
}
