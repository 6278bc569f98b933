//! Reports over identified subnetworks and fine-tuned models: neurons per
//! layer, pairwise language overlap, FFN weight deltas, and layerwise
//! cross-lingual similarity of post-FFN states.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{data_err, Error, Result};
use crate::lape::SubnetworkSpec;
use crate::model::{forward, ModelBundle, ParamId, ParamKind};
use crate::sparse_ft::ParamMask;

/// Identifies the inputs a report was computed from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub model_fingerprint: String,
    pub config_hash: String,
}

impl Provenance {
    /// `# seed=..., model_fingerprint=..., config_hash=...` comment line.
    pub fn header(&self) -> String {
        format!(
            "# seed={}, model_fingerprint={}, config_hash={}\n",
            self.seed, self.model_fingerprint, self.config_hash
        )
    }
}

/// Number of selected neurons in each layer.
pub fn layer_histogram(spec: &SubnetworkSpec, n_layers: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0; n_layers];
    for &(layer, _) in &spec.neurons {
        *counts
            .get_mut(layer)
            .ok_or_else(|| data_err!("{}: layer {layer} outside a {n_layers}-layer model", spec.lang))? += 1;
    }
    Ok(counts)
}

pub fn histogram_csv(counts: &[usize], prov: &Provenance) -> String {
    let mut out = prov.header();
    out.push_str("layer,count\n");
    for (l, c) in counts.iter().enumerate() {
        writeln!(out, "{l},{c}").unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    pub languages: Vec<String>,
    pub intersection: Vec<Vec<usize>>,
    /// `|a ∩ b| / |a ∪ b|`, zero when both sets are empty.
    pub jaccard: Vec<Vec<f64>>,
}

pub fn overlap(specs: &[SubnetworkSpec]) -> Result<OverlapMatrix> {
    if let Some(first) = specs.first() {
        if let Some(other) = specs.iter().find(|s| s.model_fingerprint != first.model_fingerprint) {
            return Err(Error::Consistency(format!(
                "{} and {} were identified on different models",
                first.lang, other.lang
            )));
        }
    }
    let sets: Vec<BTreeSet<(usize, usize)>> = specs.iter().map(|s| s.neurons.iter().copied().collect()).collect();
    let n = specs.len();
    let mut intersection = vec![vec![0; n]; n];
    let mut jaccard = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            let inter = sets[a].intersection(&sets[b]).count();
            let union = sets[a].len() + sets[b].len() - inter;
            intersection[a][b] = inter;
            jaccard[a][b] = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
        }
    }
    Ok(OverlapMatrix {
        languages: specs.iter().map(|s| s.lang.clone()).collect(),
        intersection,
        jaccard,
    })
}

pub fn overlap_csv(m: &OverlapMatrix, prov: &Provenance) -> String {
    let mut out = prov.header();
    out.push_str("lang_a,lang_b,intersection,jaccard\n");
    for (a, la) in m.languages.iter().enumerate() {
        for (b, lb) in m.languages.iter().enumerate() {
            writeln!(out, "{la},{lb},{},{}", m.intersection[a][b], m.jaccard[a][b]).unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaScope {
    MaskedOnly,
    All,
}

/// Summary of `|after - before|` over one `(layer, projection)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub layer: usize,
    pub projection: &'static str,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaStats {
    pub scope: DeltaScope,
    pub rows: Vec<DeltaRow>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(layer: usize, projection: &'static str, mut d: Vec<f64>) -> DeltaRow {
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let (mean, std) = if n == 0 {
        (0.0, 0.0)
    } else {
        let mean = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        (mean, var.sqrt())
    };
    DeltaRow {
        layer,
        projection,
        count: n,
        mean,
        std,
        q25: quantile(&d, 0.25),
        q50: quantile(&d, 0.5),
        q75: quantile(&d, 0.75),
        max: d.last().copied().unwrap_or(0.0),
    }
}

/// Per-layer gate / up / down statistics of absolute weight change. With a
/// mask only its trainable entries are compared; without one, every FFN entry.
pub fn weight_deltas(before: &ModelBundle<f32>, after: &ModelBundle<f32>, mask: Option<&ParamMask>) -> Result<DeltaStats> {
    if before.config != after.config {
        return Err(Error::Consistency("models have different configurations".into()));
    }
    if let Some(m) = mask {
        if m.ids != before.params.ids() || m.total_count() != before.params.n_entries() {
            return Err(Error::Consistency("mask does not match the model shape".into()));
        }
    }
    let mut rows = Vec::new();
    for layer in 0..before.config.n_layers {
        for kind in [ParamKind::Gate, ParamKind::Up, ParamKind::Down] {
            let id = ParamId { kind, layer: Some(layer) };
            let (a, b) = (before.params.get(id), after.params.get(id));
            let marks = mask.and_then(|m| m.get(id));
            let d: Vec<f64> = a
                .data
                .iter()
                .zip(&b.data)
                .enumerate()
                .filter(|(i, _)| marks.is_none_or(|m| m[*i]))
                .map(|(_, (&x, &y))| (y as f64 - x as f64).abs())
                .collect();
            rows.push(summarize(layer, kind.name(), d));
        }
    }
    Ok(DeltaStats {
        scope: if mask.is_some() { DeltaScope::MaskedOnly } else { DeltaScope::All },
        rows,
    })
}

pub fn deltas_csv(d: &DeltaStats, prov: &Provenance) -> String {
    let mut out = prov.header();
    out.push_str("layer,projection,count,mean,std,q25,q50,q75,max\n");
    for r in &d.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.layer, r.projection, r.count, r.mean, r.std, r.q25, r.q50, r.q75, r.max
        )
        .unwrap();
    }
    out
}

/// How a sentence's token states become one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    LastToken,
}

/// Cosine similarity; zero-norm inputs give `(0, true)`.
pub fn cosine(a: &[f64], b: &[f64]) -> (f64, bool) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    ((dot / (na * nb)).clamp(-1.0, 1.0), false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSimilarity {
    pub lang_a: String,
    pub lang_b: String,
    /// Mean cosine over aligned sentences, one entry per layer.
    pub per_layer: Vec<f64>,
    pub layer_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub pooling: Pooling,
    pub n_layers: usize,
    pub pairs: Vec<PairSimilarity>,
    pub grand_mean: f64,
    /// Number of (pair, sentence, layer) cosines taken on a zero-norm vector.
    pub degenerate: usize,
}

impl SimilarityReport {
    pub fn pair(&self, a: &str, b: &str) -> Option<&PairSimilarity> {
        self.pairs
            .iter()
            .find(|p| (p.lang_a == a && p.lang_b == b) || (p.lang_a == b && p.lang_b == a))
    }
}

/// Pooled post-FFN state of one sentence at every layer.
pub fn sentence_states(model: &ModelBundle<f32>, sentence: &[u8], pooling: Pooling) -> Result<Vec<Vec<f64>>> {
    if sentence.is_empty() {
        return Err(data_err!("empty sentence"));
    }
    let n = sentence.len().min(model.config.max_seq_len);
    let tokens: Vec<u32> = sentence[..n].iter().map(|&b| b as u32).collect();
    let (_, trace) = forward(model, &tokens, true)?;
    let trace = trace.expect("trace requested");
    let d = trace.d_model;
    Ok(trace
        .layers
        .iter()
        .map(|lt| match pooling {
            Pooling::Mean => (0..d)
                .map(|c| (0..n).map(|t| lt.post_ffn[t * d + c] as f64).sum::<f64>() / n as f64)
                .collect(),
            Pooling::LastToken => lt.post_ffn[(n - 1) * d..n * d].iter().map(|&x| x as f64).collect(),
        })
        .collect())
}

/// Layerwise mean cosine between aligned sentences for every language pair
/// `a < b` in bundle order. Sentences longer than the context are truncated.
pub fn cross_lingual_similarity(model: &ModelBundle<f32>, bundle: &[(String, Vec<Vec<u8>>)], pooling: Pooling) -> Result<SimilarityReport> {
    if bundle.len() < 2 {
        return Err(data_err!("similarity needs at least two languages"));
    }
    let n_sent = bundle[0].1.len();
    if n_sent == 0 {
        return Err(data_err!("{}: no parallel sentences", bundle[0].0));
    }
    if let Some((lang, s)) = bundle.iter().find(|(_, s)| s.len() != n_sent) {
        return Err(data_err!("{lang}: {} sentences, expected {n_sent}", s.len()));
    }
    let n_layers = model.config.n_layers;
    let states: Vec<Vec<Vec<Vec<f64>>>> = bundle
        .iter()
        .map(|(_, sents)| {
            sents
                .par_iter()
                .map(|s| sentence_states(model, s, pooling))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    let mut degenerate = 0;
    for a in 0..bundle.len() {
        for b in a + 1..bundle.len() {
            let mut per_layer = vec![0.0; n_layers];
            for (layer, slot) in per_layer.iter_mut().enumerate() {
                let mut sum = 0.0;
                for s in 0..n_sent {
                    let (c, deg) = cosine(&states[a][s][layer], &states[b][s][layer]);
                    sum += c;
                    degenerate += usize::from(deg);
                }
                *slot = sum / n_sent as f64;
            }
            let layer_mean = per_layer.iter().sum::<f64>() / n_layers as f64;
            pairs.push(PairSimilarity {
                lang_a: bundle[a].0.clone(),
                lang_b: bundle[b].0.clone(),
                per_layer,
                layer_mean,
            });
        }
    }
    let grand_mean = pairs.iter().map(|p| p.layer_mean).sum::<f64>() / pairs.len() as f64;
    Ok(SimilarityReport {
        pooling,
        n_layers,
        pairs,
        grand_mean,
        degenerate,
    })
}

pub fn similarity_csv(r: &SimilarityReport, prov: &Provenance) -> String {
    let mut out = prov.header();
    out.push_str("layer,lang_a,lang_b,mean_cosine\n");
    for layer in 0..r.n_layers {
        for p in &r.pairs {
            writeln!(out, "{layer},{},{},{}", p.lang_a, p.lang_b, p.per_layer[layer]).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn spec(lang: &str, neurons: Vec<(usize, usize)>) -> SubnetworkSpec {
        SubnetworkSpec {
            lang: lang.into(),
            model_fingerprint: "fp".into(),
            k_percent: 0.05,
            tau_activity: 0.95,
            tau_selectivity: 0.95,
            neurons,
            stats_fingerprint: None,
            seed: None,
            config_hash: None,
        }
    }

    #[test]
    fn histograms() {
        assert_eq!(layer_histogram(&spec("a", vec![]), 3).unwrap(), vec![0, 0, 0]);
        let s = spec("a", (0..5).map(|j| (0, j)).collect());
        assert_eq!(layer_histogram(&s, 3).unwrap(), vec![5, 0, 0]);
        assert!(layer_histogram(&spec("a", vec![(3, 0)]), 3).is_err());
        assert_eq!(
            histogram_csv(&[2, 1], &Provenance::default()),
            "# seed=0, model_fingerprint=, config_hash=\nlayer,count\n0,2\n1,1\n"
        );
    }

    #[test]
    fn overlap_set_arithmetic() {
        let n = 7;
        let a = spec("a", (0..2 * n).map(|j| (0, j)).collect());
        let b = spec("b", (n..3 * n).map(|j| (0, j)).collect());
        let c = spec("c", (0..4).map(|j| (1, j)).collect());
        let m = overlap(&[a.clone(), b, c, spec("e", vec![])]).unwrap();
        assert_eq!(m.intersection[0][1], n);
        assert!((m.jaccard[0][1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.jaccard[0][2], 0.0);
        assert_eq!(m.jaccard[0][0], 1.0);
        assert_eq!(m.jaccard[3][3], 0.0);
        let mut other = a.clone();
        other.model_fingerprint = "other".into();
        assert!(overlap(&[a, other]).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let r = summarize(0, "gate", vec![4.0, 1.0, 3.0, 2.0]);
        assert_eq!((r.q25, r.q50, r.q75, r.max, r.mean), (1.75, 2.5, 3.25, 4.0, 2.5));
        assert!((r.std - 1.25f64.sqrt()).abs() < 1e-15);
        let empty = summarize(0, "gate", vec![]);
        assert_eq!((empty.count, empty.max, empty.mean), (0, 0.0, 0.0));
    }

    #[test]
    fn cosine_convention() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), (0.0, true));
        let (c, deg) = cosine(&[1.0, 2.0], &[2.0, 4.0]);
        assert!(!deg && (c - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[-3.0, 0.0]).0, -1.0);
    }

    #[test]
    fn zero_state_model_is_flagged() {
        let cfg = ModelConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 8,
            vocab_size: 257,
            max_seq_len: 16,
            seed: 0,
        };
        let mut m = ModelBundle::<f32>::init(cfg).unwrap();
        m.params.token_embedding.data.fill(0.0);
        let s = vec![b"abc".to_vec(), b"de".to_vec()];
        let r = cross_lingual_similarity(&m, &[("x".into(), s.clone()), ("y".into(), s)], Pooling::Mean).unwrap();
        assert_eq!(r.degenerate, 2 * 2);
        assert!(r.pairs[0].per_layer.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn misaligned_bundle_is_rejected() {
        let m = ModelBundle::<f32>::init(ModelConfig::toy()).unwrap();
        let bundle = [("x".to_string(), vec![b"ab".to_vec()]), ("y".to_string(), vec![])];
        assert!(cross_lingual_similarity(&m, &bundle, Pooling::Mean).is_err());
    }
}
