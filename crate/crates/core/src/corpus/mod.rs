//! Multilingual corpora with train / validation / probe splits.

mod dir;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use dir::{load_corpus_dir, load_parallel_dir, write_corpus_dir, write_parallel_dir};
pub use synth::{synth_documents, synth_language, synth_parallel, toy_specs, transition_table, SynthSpec, TransitionTable, MIN_SYNTH_BYTES,
    TOY_PRETRAIN_BYTES, TOY_TARGET_BYTES};

use crate::error::{data_err, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageCorpus {
    pub lang_id: String,
    pub train: Vec<Vec<u8>>,
    pub validation: Vec<Vec<u8>>,
    /// Held out for activation-probability collection only.
    pub probe: Vec<Vec<u8>>,
    /// Sentences aligned by index with the other languages of a bundle.
    pub parallel: Option<Vec<Vec<u8>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Probe,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Probe => "probe",
        }
    }
}

impl LanguageCorpus {
    pub fn split(&self, split: Split) -> &[Vec<u8>] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Probe => &self.probe,
        }
    }

    pub fn split_bytes(&self, split: Split) -> usize {
        self.split(split).iter().map(|d| d.len()).sum()
    }
}

fn index_hash(i: usize) -> u64 {
    let digest = Sha256::digest((i as u64).to_le_bytes());
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

/// Assigns documents to train / validation / probe by ranking document
/// indices by hash: the first `max(1, n/10)` go to validation, the next
/// `max(1, n/10)` to probe, the rest to train. Within a split, documents keep
/// their original order.
pub fn split_documents(docs: Vec<Vec<u8>>) -> Result<(Vec<Vec<u8>>, Vec<Vec<u8>>, Vec<Vec<u8>>)> {
    let n = docs.len();
    if n < 3 {
        return Err(data_err!("need at least 3 documents to form three splits, got {n}"));
    }
    let held = (n / 10).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (index_hash(i), i));
    let mut assignment = vec![Split::Train; n];
    for &i in &order[..held] {
        assignment[i] = Split::Validation;
    }
    for &i in &order[held..2 * held] {
        assignment[i] = Split::Probe;
    }
    let (mut train, mut val, mut probe) = (Vec::new(), Vec::new(), Vec::new());
    for (doc, split) in docs.into_iter().zip(assignment) {
        match split {
            Split::Train => train.push(doc),
            Split::Validation => val.push(doc),
            Split::Probe => probe.push(doc),
        }
    }
    Ok((train, val, probe))
}

/// Concatenates documents and cuts the byte stream into consecutive
/// non-overlapping windows of `seq_len` tokens. A shorter trailing window is
/// kept when it still has something to predict.
pub fn windows(docs: &[Vec<u8>], seq_len: usize) -> Vec<Vec<u32>> {
    assert!(seq_len >= 2, "seq_len must be at least 2");
    let stream: Vec<u32> = docs.iter().flatten().map(|&b| b as u32).collect();
    stream
        .chunks(seq_len)
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect()
}

/// Shuffled batches of windows over one split; one pass is one epoch.
#[derive(Debug, Clone)]
pub struct Batches {
    windows: Vec<Vec<u32>>,
    batch_size: usize,
    pos: usize,
}

impl Batches {
    pub fn new(mut windows: Vec<Vec<u32>>, batch_size: usize, seed: u64) -> Result<Self> {
        if windows.is_empty() {
            return Err(data_err!("no windows to batch"));
        }
        if batch_size == 0 {
            return Err(data_err!("batch_size must be positive"));
        }
        windows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Batches {
            windows,
            batch_size,
            pos: 0,
        })
    }

    pub fn n_batches(&self) -> usize {
        self.windows.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches {
    type Item = Vec<Vec<u32>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.windows.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.windows.len());
        let batch = self.windows[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

/// Seeded batches over one split of a corpus.
pub fn batches(corpus: &LanguageCorpus, split: Split, seq_len: usize, batch_size: usize, seed: u64) -> Result<Batches> {
    let docs = corpus.split(split);
    if docs.iter().all(|d| d.is_empty()) {
        return Err(data_err!("{}: {} split is empty", corpus.lang_id, split.name()));
    }
    Batches::new(windows(docs, seq_len), batch_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus_with_train(train: Vec<Vec<u8>>) -> LanguageCorpus {
        LanguageCorpus {
            lang_id: "xx".into(),
            train,
            validation: vec![],
            probe: vec![],
            parallel: None,
        }
    }

    #[test]
    fn ten_documents_split_eight_one_one() {
        let docs: Vec<Vec<u8>> = (0..10u8).map(|i| vec![i; 3]).collect();
        let (t, v, p) = split_documents(docs).unwrap();
        assert_eq!((t.len(), v.len(), p.len()), (8, 1, 1));
    }

    #[test]
    fn split_is_stable_and_disjoint() {
        let docs: Vec<Vec<u8>> = (0..57u8).map(|i| vec![i]).collect();
        let a = split_documents(docs.clone()).unwrap();
        let b = split_documents(docs).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<u8> = a.0.iter().chain(&a.1).chain(&a.2).map(|d| d[0]).collect();
        all.sort();
        assert_eq!(all, (0..57).collect::<Vec<u8>>());
        assert_eq!((a.1.len(), a.2.len()), (5, 5));
    }

    #[test]
    fn batch_count_arithmetic() {
        let c = corpus_with_train(vec![vec![7u8; 1000]]);
        let b = batches(&c, Split::Train, 100, 2, 0).unwrap();
        assert_eq!(b.n_batches(), 5);
        assert_eq!(b.count(), 5);
    }

    #[test]
    fn batches_are_reproducible_and_cover_split() {
        let docs: Vec<Vec<u8>> = (0..7).map(|i| (0..=255u8).map(|b| b.wrapping_mul(i + 1)).collect()).collect();
        let c = corpus_with_train(docs.clone());
        let a: Vec<_> = batches(&c, Split::Train, 37, 3, 11).unwrap().collect();
        let b: Vec<_> = batches(&c, Split::Train, 37, 3, 11).unwrap().collect();
        assert_eq!(a, b);
        let other: Vec<_> = batches(&c, Split::Train, 37, 3, 12).unwrap().collect();
        assert_ne!(a, other);

        // each window appears exactly once and windows tile the raw stream
        let mut seen: Vec<Vec<u32>> = a.into_iter().flatten().collect();
        seen.sort();
        let mut expected = windows(&docs, 37);
        expected.sort();
        assert_eq!(seen, expected);
        let raw: Vec<u32> = docs.iter().flatten().map(|&b| b as u32).collect();
        let tiled: Vec<u32> = windows(&docs, 37).into_iter().flatten().collect();
        assert_eq!(tiled, raw);
    }

    #[test]
    fn empty_split_is_an_error() {
        let c = corpus_with_train(vec![]);
        assert!(batches(&c, Split::Train, 10, 2, 0).is_err());
        assert!(split_documents(vec![vec![1]]).is_err());
    }
}
