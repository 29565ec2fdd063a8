// SPDX-License-Identifier: MIT OR Apache-2.0

//! Byte-level tokenizer, training corpus batching and prompt sets.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Number of byte tokens; ids `0..256` are raw bytes.
pub const BYTE_VOCAB: usize = 256;
/// Beginning-of-sequence token id.
pub const BOS_TOKEN: u32 = 256;

pub fn tokenize(bytes: &[u8]) -> Vec<u32> {
    bytes.iter().map(|&b| u32::from(b)).collect()
}

/// Inverse of [`tokenize`]; BOS tokens are dropped.
pub fn detokenize(tokens: &[u32]) -> Result<Vec<u8>> {
    tokens
        .iter()
        .filter(|&&t| t != BOS_TOKEN)
        .map(|&t| {
            u8::try_from(t).map_err(|_| Error::TokenOutOfRange {
                token: t,
                d_vocab: BYTE_VOCAB + 1,
            })
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A tokenized text file with a train/validation boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenCorpus {
    pub tokens: Vec<u32>,
    pub source_digest: String,
    /// Tokens `[0, split)` are training data, `[split, len)` validation.
    pub split: usize,
}

impl TokenCorpus {
    pub fn from_bytes(bytes: &[u8], val_fraction: f64) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::usage("corpus is empty"));
        }
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::config(format!(
                "val_fraction must lie in (0, 1), got {val_fraction}"
            )));
        }
        let split = ((1.0 - val_fraction) * bytes.len() as f64).floor() as usize;
        Ok(Self {
            tokens: tokenize(bytes),
            source_digest: sha256_hex(bytes),
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn train(&self) -> &[u32] {
        &self.tokens[..self.split]
    }

    pub fn validation(&self) -> &[u32] {
        &self.tokens[self.split..]
    }

    /// Number of non-overlapping training windows of `window` tokens.
    pub fn train_windows(&self, window: usize) -> usize {
        if window == 0 {
            0
        } else {
            self.split / window
        }
    }

    /// Seed of the shuffle used for one pass over the training windows.
    fn epoch_seed(&self, seed: u64, epoch: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(self.source_digest.as_bytes());
        h.update(seed.to_le_bytes());
        h.update(epoch.to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }

    fn epoch_order(&self, n_windows: usize, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n_windows).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.epoch_seed(seed, epoch));
        order.shuffle(&mut rng);
        order
    }
}

/// Deterministic iterator over training batches.
///
/// Each sequence is a contiguous window of the training split, optionally
/// prefixed with BOS so its total length is `seq_len`. Window order is a
/// seeded shuffle per pass, so the batch at a given step depends only on the
/// corpus digest, the seed and the step.
#[derive(Debug)]
pub struct Batcher<'a> {
    corpus: &'a TokenCorpus,
    seed: u64,
    seq_len: usize,
    batch_size: usize,
    bos: Option<u32>,
    window: usize,
    n_windows: usize,
    cached_epoch: Option<(u64, Vec<usize>)>,
}

impl<'a> Batcher<'a> {
    pub fn new(
        corpus: &'a TokenCorpus,
        seed: u64,
        seq_len: usize,
        batch_size: usize,
        bos: Option<u32>,
    ) -> Result<Self> {
        let window = seq_len.saturating_sub(usize::from(bos.is_some()));
        if window < 1 || batch_size == 0 {
            return Err(Error::config(
                "sequence length and batch size must be positive",
            ));
        }
        let n_windows = corpus.train_windows(window);
        if n_windows < batch_size {
            return Err(Error::usage(format!(
                "training split holds {n_windows} windows of {window} tokens, fewer than one batch of {batch_size}"
            )));
        }
        Ok(Self {
            corpus,
            seed,
            seq_len,
            batch_size,
            bos,
            window,
            n_windows,
            cached_epoch: None,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn window_at(&mut self, global: usize) -> usize {
        let epoch = (global / self.n_windows) as u64;
        let fresh = !matches!(&self.cached_epoch, Some((e, _)) if *e == epoch);
        if fresh {
            let order = self.corpus.epoch_order(self.n_windows, self.seed, epoch);
            self.cached_epoch = Some((epoch, order));
        }
        let (_, order) = self.cached_epoch.as_ref().expect("cached above");
        order[global % self.n_windows]
    }

    pub fn batch(&mut self, step: usize) -> Vec<Vec<u32>> {
        (0..self.batch_size)
            .map(|i| {
                let w = self.window_at(step * self.batch_size + i);
                let start = w * self.window;
                let mut seq = Vec::with_capacity(self.seq_len);
                seq.extend(self.bos);
                seq.extend_from_slice(&self.corpus.train()[start..start + self.window]);
                seq
            })
            .collect()
    }
}

pub fn load_corpus(path: impl AsRef<Path>, val_fraction: f64) -> Result<TokenCorpus> {
    let bytes = std::fs::read(path.as_ref())?;
    TokenCorpus::from_bytes(&bytes, val_fraction).map_err(|e| match e {
        Error::Usage(m) => Error::Usage(format!("{}: {m}", path.as_ref().display())),
        other => other,
    })
}

/// An ordered, named list of prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub name: String,
    pub prompts: Vec<String>,
    /// Whitespace word count of every prompt, for length-sweep sets.
    pub nominal_length: Option<usize>,
}

impl PromptSet {
    pub fn new(name: impl Into<String>, prompts: Vec<String>) -> Result<Self> {
        let name = name.into();
        if prompts.is_empty() {
            return Err(Error::usage(format!("prompt set `{name}` is empty")));
        }
        Ok(Self {
            name,
            prompts,
            nominal_length: None,
        })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn encode_one(prompt: &str, bos: Option<u32>) -> Vec<u32> {
        let mut t = Vec::with_capacity(prompt.len() + 1);
        t.extend(bos);
        t.extend(tokenize(prompt.as_bytes()));
        t
    }

    pub fn encode(&self, bos: Option<u32>) -> Vec<Vec<u32>> {
        self.prompts
            .iter()
            .map(|p| Self::encode_one(p, bos))
            .collect()
    }

    /// Content digest of each prompt, in order.
    pub fn digests(&self) -> Vec<String> {
        self.prompts
            .iter()
            .map(|p| sha256_hex(p.as_bytes()))
            .collect()
    }

    /// Mean byte-token count (without BOS).
    pub fn mean_byte_tokens(&self) -> f64 {
        self.prompts.iter().map(|p| p.len() as f64).sum::<f64>() / self.len() as f64
    }

    /// Keep only the first `n` prompts.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            name: self.name.clone(),
            prompts: self.prompts.iter().take(n).cloned().collect(),
            nominal_length: self.nominal_length,
        }
    }
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Parse a prompt file: a JSON array of strings yields one set; an object
/// mapping integer lengths to arrays yields one length-sweep set per key,
/// sorted by length.
pub fn parse_prompts(name: &str, text: &str) -> Result<Vec<PromptSet>> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
    match value {
        serde_json::Value::Array(_) => {
            let prompts: Vec<String> = serde_json::from_value(value).map_err(parse_error)?;
            Ok(vec![PromptSet::new(name, prompts)?])
        }
        serde_json::Value::Object(_) => {
            let raw: BTreeMap<String, Vec<String>> =
                serde_json::from_value(value).map_err(parse_error)?;
            let mut by_len = BTreeMap::new();
            for (key, prompts) in raw {
                let len: usize = key.trim().parse().map_err(|_| {
                    Error::usage(format!("sweep key `{key}` is not an integer length"))
                })?;
                let mut set = PromptSet::new(format!("{name}-len{len:02}"), prompts)?;
                set.nominal_length = Some(len);
                by_len.insert(len, set);
            }
            validate_sweep(&by_len)?;
            Ok(by_len.into_values().collect())
        }
        _ => Err(Error::usage(
            "prompt file must hold a JSON array or an object of arrays",
        )),
    }
}

fn validate_sweep(sets: &BTreeMap<usize, PromptSet>) -> Result<()> {
    let Some(longest) = sets.values().next_back() else {
        return Err(Error::usage("sweep file has no lengths"));
    };
    for (&len, set) in sets {
        if set.len() != longest.len() {
            return Err(Error::usage(format!(
                "sweep length {len} has {} prompts, expected {}",
                set.len(),
                longest.len()
            )));
        }
        for (k, (prompt, base)) in set.prompts.iter().zip(&longest.prompts).enumerate() {
            let w = words(prompt);
            if w.len() != len {
                return Err(Error::usage(format!(
                    "sweep length {len}, prompt {k}: has {} whitespace tokens",
                    w.len()
                )));
            }
            let b = words(base);
            if b.len() < w.len() || b[..w.len()] != w[..] {
                return Err(Error::usage(format!(
                    "sweep length {len}, prompt {k} is not a prefix of the longest prompt {k}"
                )));
            }
        }
    }
    Ok(())
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<Vec<PromptSet>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("prompts");
    parse_prompts(name, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_index_is_floored() {
        let c = TokenCorpus::from_bytes(b"0123456789", 0.2).unwrap();
        assert_eq!(c.split, 8);
    }

    #[test]
    fn digest_is_stable_and_token_count_is_byte_count() {
        let text = "naïve café ☕".as_bytes();
        let a = TokenCorpus::from_bytes(text, 0.5).unwrap();
        let b = TokenCorpus::from_bytes(text, 0.5).unwrap();
        assert_eq!(a.source_digest, b.source_digest);
        assert_eq!(a.len(), text.len());
    }

    #[test]
    fn empty_corpus_is_a_usage_error() {
        assert!(matches!(
            TokenCorpus::from_bytes(b"", 0.1),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn batches_are_pure_functions_of_step() {
        let text: Vec<u8> = (0..4000u32).map(|i| (i * 7 % 251) as u8).collect();
        let c = TokenCorpus::from_bytes(&text, 0.1).unwrap();
        let mut a = Batcher::new(&c, 3, 16, 4, Some(BOS_TOKEN)).unwrap();
        let mut b = Batcher::new(&c, 3, 16, 4, Some(BOS_TOKEN)).unwrap();
        let late = a.batch(500);
        let _ = b.batch(1);
        assert_eq!(b.batch(500), late);
        assert_eq!(a.batch(2), b.batch(2));
        let first = &a.batch(0)[0];
        assert_eq!(first.len(), 16);
        assert_eq!(first[0], BOS_TOKEN);
        let mut other_seed = Batcher::new(&c, 4, 16, 4, Some(BOS_TOKEN)).unwrap();
        assert_ne!(other_seed.batch(0), a.batch(0));
    }

    #[test]
    fn array_prompts_preserve_order() {
        let sets = parse_prompts("p", r#"["a","b"]"#).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].prompts, vec!["a", "b"]);
    }

    #[test]
    fn empty_array_is_a_usage_error() {
        assert!(matches!(parse_prompts("p", "[]"), Err(Error::Usage(_))));
    }

    #[test]
    fn malformed_json_reports_position() {
        match parse_prompts("p", "[\"a\",\n  oops]") {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sweep_object_yields_one_set_per_length() {
        let base = (1..=50).map(|i| format!("w{i}")).collect::<Vec<_>>();
        let mut obj = serde_json::Map::new();
        for n in [5, 10, 20, 30, 40, 50] {
            obj.insert(n.to_string(), serde_json::json!([base[..n].join(" ")]));
        }
        let sets = parse_prompts("sweep", &serde_json::Value::Object(obj).to_string()).unwrap();
        let lens: Vec<_> = sets.iter().map(|s| s.nominal_length.unwrap()).collect();
        assert_eq!(lens, vec![5, 10, 20, 30, 40, 50]);
    }

    #[test]
    fn sweep_prefix_violation_is_rejected() {
        let json = r#"{"2": ["a c"], "3": ["a b c"]}"#;
        assert!(matches!(parse_prompts("s", json), Err(Error::Usage(_))));
        let ok = r#"{"2": ["a b"], "3": ["a b c"]}"#;
        assert!(parse_prompts("s", ok).is_ok());
    }

    #[test]
    fn sweep_word_count_must_match_key() {
        let json = r#"{"2": ["a b c"], "3": ["a b c"]}"#;
        assert!(matches!(parse_prompts("s", json), Err(Error::Usage(_))));
    }

    proptest! {
        #[test]
        fn tokenize_roundtrip(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            prop_assert_eq!(detokenize(&tokenize(&bytes)).unwrap(), bytes);
        }
    }
}
