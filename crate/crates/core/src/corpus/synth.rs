//! Synthetic languages: order-2 Markov chains over a contiguous byte range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{split_documents, LanguageCorpus};
use crate::error::{config_err, Result};

pub const MIN_SYNTH_BYTES: usize = 10_000;

/// Weight of the uniform component mixed into every transition row, which
/// keeps the chain irreducible.
const UNIFORM_MIX: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub lang_id: String,
    /// Inclusive byte range `[lo, hi]` forming the alphabet.
    pub alphabet: (u8, u8),
    pub seed: u64,
    /// Dirichlet concentration of each transition row; small values give
    /// peaked, more predictable languages.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default = "default_doc_len")]
    pub doc_len: usize,
}

fn default_concentration() -> f64 {
    0.2
}

fn default_doc_len() -> usize {
    2000
}

impl SynthSpec {
    pub fn new(lang_id: &str, alphabet: (u8, u8), seed: u64) -> Self {
        SynthSpec {
            lang_id: lang_id.to_string(),
            alphabet,
            seed,
            concentration: default_concentration(),
            doc_len: default_doc_len(),
        }
    }

    pub fn alphabet_size(&self) -> usize {
        if self.alphabet.1 < self.alphabet.0 {
            0
        } else {
            (self.alphabet.1 - self.alphabet.0) as usize + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet_size() == 0 {
            return Err(config_err!("{}: empty alphabet {:?}", self.lang_id, self.alphabet));
        }
        if !(self.concentration > 0.0) {
            return Err(config_err!("{}: concentration must be positive", self.lang_id));
        }
        if self.doc_len < 2 {
            return Err(config_err!("{}: doc_len must be at least 2", self.lang_id));
        }
        Ok(())
    }

    pub fn symbol_byte(&self, symbol: usize) -> u8 {
        self.alphabet.0 + symbol as u8
    }
}

/// Row-stochastic transition table of an order-2 chain over `a` symbols:
/// `probs[(prev2 * a + prev1) * a + next]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    pub alphabet_size: usize,
    pub probs: Vec<f64>,
}

impl TransitionTable {
    pub fn row(&self, prev2: usize, prev1: usize) -> &[f64] {
        let a = self.alphabet_size;
        &self.probs[(prev2 * a + prev1) * a..(prev2 * a + prev1 + 1) * a]
    }
}

pub fn transition_table(spec: &SynthSpec) -> Result<TransitionTable> {
    spec.validate()?;
    let a = spec.alphabet_size();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7472_616e_7369_7469);
    let gamma = Gamma::new(spec.concentration, 1.0).map_err(|e| config_err!("concentration: {e}"))?;
    let mut probs = vec![0.0; a * a * a];
    for row in probs.chunks_exact_mut(a) {
        for p in row.iter_mut() {
            *p = gamma.sample(&mut rng);
        }
        let z: f64 = row.iter().sum();
        for p in row.iter_mut() {
            let dir = if z > 0.0 { *p / z } else { 1.0 / a as f64 };
            *p = (1.0 - UNIFORM_MIX) * dir + UNIFORM_MIX / a as f64;
        }
    }
    Ok(TransitionTable { alphabet_size: a, probs })
}

fn sample_row(row: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Runs the chain for `n` symbols from a uniformly drawn initial pair.
pub(crate) fn sample_symbols(table: &TransitionTable, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let a = table.alphabet_size;
    let mut out = Vec::with_capacity(n);
    let (mut p2, mut p1) = (rng.gen_range(0..a), rng.gen_range(0..a));
    for _ in 0..n {
        let next = sample_row(table.row(p2, p1), rng);
        out.push(next);
        p2 = p1;
        p1 = next;
    }
    out
}

/// Generates `n_bytes` of a synthetic language as one continuous chain run,
/// cut into `doc_len` documents.
pub fn synth_documents(spec: &SynthSpec, n_bytes: usize) -> Result<Vec<Vec<u8>>> {
    spec.validate()?;
    if n_bytes < MIN_SYNTH_BYTES {
        return Err(config_err!(
            "{}: n_bytes {n_bytes} below minimum {MIN_SYNTH_BYTES}",
            spec.lang_id
        ));
    }
    let table = transition_table(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bytes: Vec<u8> = sample_symbols(&table, n_bytes, &mut rng)
        .into_iter()
        .map(|s| spec.symbol_byte(s))
        .collect();
    Ok(bytes.chunks(spec.doc_len).map(|c| c.to_vec()).collect())
}

/// [`synth_documents`] split 80/10/10 exactly as [`load_corpus_dir`](super::load_corpus_dir)
/// would split the same documents written to disk.
pub fn synth_language(spec: &SynthSpec, n_bytes: usize) -> Result<LanguageCorpus> {
    let docs = synth_documents(spec, n_bytes)?;
    let (train, validation, probe) = split_documents(docs)?;
    Ok(LanguageCorpus {
        lang_id: spec.lang_id.clone(),
        train,
        validation,
        probe,
        parallel: None,
    })
}

/// Sentence-aligned text across languages. A shared pivot chain draws a
/// symbol sequence per sentence; each language renders symbol `s` as the
/// `s mod |alphabet|`-th byte of its own alphabet.
pub fn synth_parallel(specs: &[SynthSpec], n_sentences: usize, sentence_len: usize, seed: u64) -> Result<Vec<Vec<Vec<u8>>>> {
    if specs.is_empty() {
        return Err(config_err!("parallel bundle needs at least one language"));
    }
    for s in specs {
        s.validate()?;
    }
    let pivot_size = specs.iter().map(|s| s.alphabet_size()).min().unwrap();
    let pivot = SynthSpec {
        lang_id: "pivot".into(),
        alphabet: (0, (pivot_size - 1) as u8),
        seed,
        concentration: default_concentration(),
        doc_len: default_doc_len(),
    };
    let table = transition_table(&pivot)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences: Vec<Vec<usize>> = (0..n_sentences)
        .map(|_| sample_symbols(&table, sentence_len, &mut rng))
        .collect();
    Ok(specs
        .iter()
        .map(|spec| {
            sentences
                .iter()
                .map(|sent| sent.iter().map(|&s| spec.symbol_byte(s % spec.alphabet_size())).collect())
                .collect()
        })
        .collect())
}

pub const TOY_PRETRAIN_BYTES: usize = 500_000;
pub const TOY_TARGET_BYTES: usize = 100_000;

/// The default desk-scale setting: four pretraining languages (generate
/// [`TOY_PRETRAIN_BYTES`] each) and one low-resource target language
/// ([`TOY_TARGET_BYTES`]).
///
/// Alphabets are printable ASCII so corpora round-trip through UTF-8 text
/// files. Neighbouring pretraining alphabets half-overlap, so a model has to
/// read language identity from context rather than from single bytes. The
/// target is a relative of the fourth language: its alphabet is a sub-range
/// of that language's, with its own transition structure.
pub fn toy_specs(seed: u64) -> (Vec<SynthSpec>, SynthSpec) {
    let pretrain = vec![
        SynthSpec::new("l1", (0x41, 0x58), seed.wrapping_add(1)),
        SynthSpec::new("l2", (0x4d, 0x64), seed.wrapping_add(2)),
        SynthSpec::new("l3", (0x59, 0x70), seed.wrapping_add(3)),
        SynthSpec::new("l4", (0x65, 0x7c), seed.wrapping_add(4)),
    ];
    let target = SynthSpec::new("tgt", (0x67, 0x7c), seed.wrapping_add(5));
    (pretrain, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_stochastic() {
        let t = transition_table(&SynthSpec::new("x", (10, 19), 5)).unwrap();
        for row in t.probs.chunks(10) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn deterministic_and_confined_to_alphabet() {
        let spec = SynthSpec::new("x", (b'a', b'k'), 9);
        let a = synth_language(&spec, 20_000).unwrap();
        let b = synth_language(&spec, 20_000).unwrap();
        assert_eq!(a, b);
        for doc in a.train.iter().chain(&a.validation).chain(&a.probe) {
            assert!(doc.iter().all(|c| (b'a'..=b'k').contains(c)));
        }
        let total: usize = a.train.iter().chain(&a.validation).chain(&a.probe).map(|d| d.len()).sum();
        assert_eq!(total, 20_000);
    }

    #[test]
    fn disjoint_alphabets_give_disjoint_byte_sets() {
        let a = synth_language(&SynthSpec::new("a", (0x21, 0x30), 1), 10_000).unwrap();
        let b = synth_language(&SynthSpec::new("b", (0x31, 0x40), 1), 10_000).unwrap();
        let set = |c: &LanguageCorpus| {
            let mut s = std::collections::BTreeSet::new();
            for d in c.train.iter().chain(&c.validation).chain(&c.probe) {
                s.extend(d.iter().copied());
            }
            s
        };
        assert!(set(&a).is_disjoint(&set(&b)));
    }

    #[test]
    fn rejects_bad_specs() {
        let empty = SynthSpec::new("e", (20, 10), 1);
        assert!(synth_language(&empty, 20_000).is_err());
        let ok = SynthSpec::new("o", (20, 30), 1);
        assert!(synth_language(&ok, 9_999).is_err());
    }

    #[test]
    fn parallel_sentences_are_aligned_transliterations() {
        let (pre, tgt) = toy_specs(0);
        let mut specs = pre.clone();
        specs.push(tgt);
        let par = synth_parallel(&specs, 6, 30, 42).unwrap();
        assert_eq!(par.len(), 5);
        for lang in &par {
            assert_eq!(lang.len(), 6);
            assert!(lang.iter().all(|s| s.len() == 30));
        }
        // l1 and l2 both have 24-symbol alphabets: same symbols, shifted bytes
        for (a, b) in par[0][0].iter().zip(&par[1][0]) {
            assert_eq!(b - a, 0x4d - 0x41);
        }
    }
}
