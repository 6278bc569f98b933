//! Language activation probability entropy (LAPE).
//!
//! For every FFN neuron we estimate, per language, the probability that its
//! gate pre-activation is positive on a token of that language. Normalizing
//! that vector across languages and taking its Shannon entropy gives a score
//! that is low for neurons which fire for few languages. Selection keeps the
//! lowest-scoring neurons that also fire reliably for some language, and
//! assigns each one to every language it fires for.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::windows;
use crate::error::{config_err, data_err, Error, Result};
use crate::model::{fingerprint, forward, record_ffn_firings, ModelBundle};

/// Firing counts per `(layer, neuron, language)` and token totals per language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationStats {
    pub languages: Vec<String>,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Row-major `n_layers x d_ff x n_languages`.
    pub counts: Vec<u64>,
    pub totals: Vec<u64>,
    pub model_fingerprint: String,
}

impl ActivationStats {
    pub fn zeros(languages: Vec<String>, n_layers: usize, d_ff: usize, model_fingerprint: String) -> Self {
        let l = languages.len();
        ActivationStats {
            counts: vec![0; n_layers * d_ff * l],
            totals: vec![0; l],
            languages,
            n_layers,
            d_ff,
            model_fingerprint,
        }
    }

    pub fn n_languages(&self) -> usize {
        self.languages.len()
    }

    pub fn n_neurons(&self) -> usize {
        self.n_layers * self.d_ff
    }

    #[inline]
    pub fn count(&self, layer: usize, neuron: usize, lang: usize) -> u64 {
        self.counts[(layer * self.d_ff + neuron) * self.n_languages() + lang]
    }

    /// `p^k_{layer, neuron}`; zero when the language saw no tokens.
    pub fn prob(&self, layer: usize, neuron: usize, lang: usize) -> f64 {
        let total = self.totals[lang];
        if total == 0 {
            0.0
        } else {
            self.count(layer, neuron, lang) as f64 / total as f64
        }
    }

    /// Probability row of a flat neuron index (`layer * d_ff + neuron`).
    pub fn prob_row(&self, flat: usize) -> Vec<f64> {
        let (layer, neuron) = (flat / self.d_ff, flat % self.d_ff);
        (0..self.n_languages()).map(|k| self.prob(layer, neuron, k)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.n_languages();
        if l == 0 {
            return Err(data_err!("activation stats have no languages"));
        }
        if self.counts.len() != self.n_neurons() * l || self.totals.len() != l {
            return Err(data_err!("activation stats tensor has inconsistent shape"));
        }
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.totals[i % l] {
                return Err(data_err!(
                    "count {c} exceeds token total {} for {}",
                    self.totals[i % l],
                    self.languages[i % l]
                ));
            }
        }
        Ok(())
    }

    /// Adds another partial count over the same model and languages.
    pub fn merge(&mut self, other: &ActivationStats) -> Result<()> {
        if self.languages != other.languages || self.n_layers != other.n_layers || self.d_ff != other.d_ff {
            return Err(Error::Consistency("merging stats of different shape".into()));
        }
        if self.model_fingerprint != other.model_fingerprint {
            return Err(Error::Consistency("merging stats of different models".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("stats serialize");
        short_hash(&json)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let stats: ActivationStats = serde_json::from_slice(&bytes)?;
        stats.validate()?;
        Ok(stats)
    }
}

/// Leading 64 bits of SHA-256, as 16 hex digits.
pub fn short_hash(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    format!("{:016x}", u64::from_be_bytes(d[..8].try_into().unwrap()))
}

/// Counts gate firings of `model` over each language's probe documents.
///
/// Each document is cut into `max_seq_len` windows on its own, so counts are
/// additive over documents. Windows are processed in parallel; integer counts merge by addition, so the result is
/// independent of scheduling.
pub fn collect_stats(model: &ModelBundle<f32>, probes: &[(String, Vec<Vec<u8>>)]) -> Result<ActivationStats> {
    if probes.is_empty() {
        return Err(data_err!("no probe languages"));
    }
    let cfg = &model.config;
    let languages: Vec<String> = probes.iter().map(|(l, _)| l.clone()).collect();
    let mut stats = ActivationStats::zeros(languages, cfg.n_layers, cfg.d_ff, fingerprint(model));
    let l = stats.n_languages();
    for (k, (lang, docs)) in probes.iter().enumerate() {
        let wins: Vec<Vec<u32>> = docs
            .iter()
            .flat_map(|d| windows(std::slice::from_ref(d), cfg.max_seq_len))
            .collect();
        if wins.is_empty() {
            return Err(data_err!("{lang}: empty probe split"));
        }
        let partial = wins
            .par_iter()
            .map(|w| -> Result<(Vec<u64>, u64)> {
                let (_, trace) = forward(model, w, true)?;
                let f = record_ffn_firings(&trace.expect("trace requested"))?;
                Ok((f.counts, f.positions))
            })
            .try_reduce(
                || (vec![0u64; cfg.n_neurons()], 0u64),
                |(mut a, na), (b, nb)| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    Ok((a, na + nb))
                },
            )?;
        for (flat, c) in partial.0.into_iter().enumerate() {
            stats.counts[flat * l + k] = c;
        }
        stats.totals[k] = partial.1;
    }
    Ok(stats)
}

/// Normalized probability rows and their entropies.
#[derive(Debug, Clone, PartialEq)]
pub struct LapeTable {
    pub n_layers: usize,
    pub d_ff: usize,
    pub n_languages: usize,
    /// Row-major `n_layers x d_ff x n_languages`; rows of undefined neurons are zero.
    pub normalized: Vec<f64>,
    /// Entropy in nats, `NaN` for undefined neurons.
    pub score: Vec<f64>,
    /// Neurons that never fired in any language.
    pub undefined: Vec<bool>,
}

impl LapeTable {
    pub fn normalized_row(&self, flat: usize) -> &[f64] {
        &self.normalized[flat * self.n_languages..(flat + 1) * self.n_languages]
    }
}

/// Normalizes a probability row to sum one and returns it with its Shannon
/// entropy (natural log, `0 ln 0 = 0`), or `None` if the row is all zero.
pub fn row_entropy(p: &[f64]) -> Option<(Vec<f64>, f64)> {
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sum: f64 = sorted.iter().sum();
    if sum <= 0.0 {
        return None;
    }
    let norm: Vec<f64> = p.iter().map(|&x| x / sum).collect();
    // sums run in sorted order so the score is invariant to language order
    // and permuted rows tie exactly
    let mut terms: Vec<f64> = norm.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).collect();
    terms.sort_by(f64::total_cmp);
    let h: f64 = terms.iter().sum::<f64>() + 0.0;
    let max = (p.len() as f64).ln();
    Some((norm, h.clamp(0.0, max)))
}

pub fn lape_scores(stats: &ActivationStats) -> Result<LapeTable> {
    stats.validate()?;
    if let Some(k) = stats.totals.iter().position(|&t| t == 0) {
        return Err(data_err!("language {} has no probe tokens", stats.languages[k]));
    }
    let l = stats.n_languages();
    let n = stats.n_neurons();
    let mut table = LapeTable {
        n_layers: stats.n_layers,
        d_ff: stats.d_ff,
        n_languages: l,
        normalized: vec![0.0; n * l],
        score: vec![f64::NAN; n],
        undefined: vec![true; n],
    };
    for flat in 0..n {
        if let Some((norm, h)) = row_entropy(&stats.prob_row(flat)) {
            table.normalized[flat * l..(flat + 1) * l].copy_from_slice(&norm);
            table.score[flat] = h;
            table.undefined[flat] = false;
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Fraction of all FFN neurons to keep, in `(0, 1]`.
    pub k_percent: f64,
    pub tau_activity: f64,
    pub tau_selectivity: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            k_percent: 0.05,
            tau_activity: 0.95,
            tau_selectivity: 0.95,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_percent > 0.0 && self.k_percent <= 1.0) {
            return Err(config_err!("k_percent must be in (0, 1], got {}", self.k_percent));
        }
        for (name, t) in [("tau_activity", self.tau_activity), ("tau_selectivity", self.tau_selectivity)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(config_err!("{name} must be in [0, 1], got {t}"));
            }
        }
        Ok(())
    }

    /// Number of neurons kept out of `n_neurons`, before capping at the
    /// candidate count. The small slack absorbs binary representation error
    /// in products such as `0.07 * 100`.
    pub fn budget(&self, n_neurons: usize) -> usize {
        (self.k_percent * n_neurons as f64 + 1e-9).floor() as usize
    }
}

/// The neurons selected for one language, in the release format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetworkSpec {
    pub lang: String,
    pub model_fingerprint: String,
    pub k_percent: f64,
    pub tau_activity: f64,
    pub tau_selectivity: f64,
    /// Sorted, unique `(layer, neuron)` pairs.
    pub neurons: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl SubnetworkSpec {
    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            k_percent: self.k_percent,
            tau_activity: self.tau_activity,
            tau_selectivity: self.tau_selectivity,
        }
    }

    pub fn check_bounds(&self, n_layers: usize, d_ff: usize) -> Result<()> {
        for &(l, j) in &self.neurons {
            if l >= n_layers || j >= d_ff {
                return Err(data_err!(
                    "{}: neuron ({l}, {j}) outside model bounds {n_layers} x {d_ff}",
                    self.lang
                ));
            }
        }
        if self.neurons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(data_err!("{}: neuron list not sorted and unique", self.lang));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json();
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// One spec per language, in stats language order.
    pub specs: Vec<SubnetworkSpec>,
    /// Set when no neuron passed the threshold filter.
    pub no_candidates: bool,
}

impl Selection {
    pub fn by_lang(&self) -> BTreeMap<&str, &SubnetworkSpec> {
        self.specs.iter().map(|s| (s.lang.as_str(), s)).collect()
    }
}

/// Threshold filter, then bottom-K cut by entropy over all FFN neurons, then
/// assignment to every language whose firing probability reaches
/// `tau_selectivity`. Ties at the cut are broken by `(layer, neuron)`.
pub fn select_subnetworks(table: &LapeTable, stats: &ActivationStats, cfg: &SelectionConfig) -> Result<Selection> {
    cfg.validate()?;
    if table.n_layers != stats.n_layers || table.d_ff != stats.d_ff || table.n_languages != stats.n_languages() {
        return Err(Error::Consistency("LAPE table and stats differ in shape".into()));
    }
    let n = stats.n_neurons();
    let l = stats.n_languages();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&flat| !table.undefined[flat])
        .filter(|&flat| {
            let row = stats.prob_row(flat);
            let max = row.iter().cloned().fold(0.0, f64::max);
            max >= cfg.tau_activity && row.iter().any(|&p| p >= cfg.tau_selectivity)
        })
        .collect();
    let no_candidates = candidates.is_empty();
    if no_candidates {
        log::warn!("no neuron passed the activity/selectivity thresholds");
    }
    candidates.sort_by(|&a, &b| {
        table.score[a]
            .partial_cmp(&table.score[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    candidates.truncate(cfg.budget(n));

    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); l];
    for &flat in &candidates {
        let (layer, neuron) = (flat / stats.d_ff, flat % stats.d_ff);
        for (k, m) in members.iter_mut().enumerate() {
            if stats.prob(layer, neuron, k) >= cfg.tau_selectivity {
                m.push((layer, neuron));
            }
        }
    }
    let stats_fp = stats.fingerprint();
    let specs = stats
        .languages
        .iter()
        .zip(members)
        .map(|(lang, mut neurons)| {
            neurons.sort_unstable();
            SubnetworkSpec {
                lang: lang.clone(),
                model_fingerprint: stats.model_fingerprint.clone(),
                k_percent: cfg.k_percent,
                tau_activity: cfg.tau_activity,
                tau_selectivity: cfg.tau_selectivity,
                neurons,
                stats_fingerprint: Some(stats_fp.clone()),
                seed: None,
                config_hash: None,
            }
        })
        .collect();
    Ok(Selection { specs, no_candidates })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Stats with totals of 1000 per language and counts set from probabilities.
    pub(crate) fn stats_from_probs(n_layers: usize, d_ff: usize, rows: &[Vec<f64>]) -> ActivationStats {
        let l = rows[0].len();
        let mut s = ActivationStats::zeros((0..l).map(|k| format!("x{k}")).collect(), n_layers, d_ff, "fp".into());
        s.totals = vec![1000; l];
        for (flat, row) in rows.iter().enumerate() {
            for (k, &p) in row.iter().enumerate() {
                s.counts[flat * l + k] = (p * 1000.0).round() as u64;
            }
        }
        s
    }

    #[test]
    fn uniform_row_has_max_entropy() {
        let (_, h) = row_entropy(&[0.3, 0.3, 0.3, 0.3]).unwrap();
        assert!((h - 4f64.ln()).abs() < 1e-15);
        assert!((h - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn one_hot_row_has_zero_entropy() {
        let (norm, h) = row_entropy(&[0.0, 0.7, 0.0]).unwrap();
        assert_eq!(norm, vec![0.0, 1.0, 0.0]);
        assert_eq!(h, 0.0);
    }

    #[test]
    fn two_language_entropy() {
        let (norm, h) = row_entropy(&[0.9, 0.1]).unwrap();
        assert!((norm[0] - 0.9).abs() < 1e-15);
        // -(0.9 ln 0.9 + 0.1 ln 0.1)
        assert!((h - 0.325_082_973_391_448_2).abs() < 1e-12);
    }

    #[test]
    fn all_zero_row_is_undefined() {
        assert!(row_entropy(&[0.0, 0.0]).is_none());
        let s = stats_from_probs(1, 2, &[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let t = lape_scores(&s).unwrap();
        assert_eq!(t.undefined, vec![true, false]);
        assert!(t.score[0].is_nan());
    }

    #[test]
    fn zero_total_is_an_error() {
        let mut s = stats_from_probs(1, 1, &[vec![0.5, 0.5]]);
        s.totals[1] = 0;
        s.counts[1] = 0;
        assert!(lape_scores(&s).is_err());
    }

    #[test]
    fn strict_thresholds_select_nothing() {
        let s = stats_from_probs(1, 3, &[vec![0.99, 0.2], vec![0.5, 0.1], vec![0.0, 0.999]]);
        let t = lape_scores(&s).unwrap();
        let cfg = SelectionConfig {
            k_percent: 1.0,
            tau_activity: 1.0,
            tau_selectivity: 1.0,
        };
        let sel = select_subnetworks(&t, &s, &cfg).unwrap();
        assert!(sel.no_candidates);
        assert!(sel.specs.iter().all(|sp| sp.is_empty()));
    }

    #[test]
    fn neuron_can_belong_to_two_languages() {
        // neuron 0 fires for two of three languages; others are unselective
        let rows = vec![
            vec![0.96, 0.96, 0.01],
            vec![0.5, 0.5, 0.5],
            vec![0.2, 0.3, 0.1],
            vec![0.6, 0.1, 0.1],
        ];
        let s = stats_from_probs(1, 4, &rows);
        let t = lape_scores(&s).unwrap();
        let sel = select_subnetworks(&t, &s, &SelectionConfig { k_percent: 0.25, ..Default::default() }).unwrap();
        assert_eq!(sel.specs[0].neurons, vec![(0, 0)]);
        assert_eq!(sel.specs[1].neurons, vec![(0, 0)]);
        assert!(sel.specs[2].neurons.is_empty());
    }

    #[test]
    fn budget_absorbs_representation_error() {
        let c = SelectionConfig {
            k_percent: 0.07,
            ..Default::default()
        };
        assert_eq!(c.budget(100), 7);
        let c = SelectionConfig {
            k_percent: 0.29,
            ..Default::default()
        };
        assert_eq!(c.budget(100), 29);
        assert_eq!(SelectionConfig::default().budget(2 * 64), 6);
    }

    #[test]
    fn spec_json_has_release_keys() {
        let s = stats_from_probs(1, 2, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let t = lape_scores(&s).unwrap();
        let sel = select_subnetworks(&t, &s, &SelectionConfig { k_percent: 1.0, ..Default::default() }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&sel.specs[0].to_json()).unwrap();
        for key in ["lang", "model_fingerprint", "k_percent", "tau_activity", "tau_selectivity", "neurons"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["neurons"], serde_json::json!([[0, 0]]));
    }

    #[test]
    fn merge_rejects_foreign_stats() {
        let mut a = stats_from_probs(1, 2, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut b = a.clone();
        b.model_fingerprint = "other".into();
        assert!(a.merge(&b).is_err());
    }
}
