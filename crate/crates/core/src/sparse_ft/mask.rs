//! Trainability masks over every parameter tensor.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::lape::SubnetworkSpec;
use crate::model::{param_ids, ModelConfig, ParamId, ParamKind};

/// Which weights a fine-tuning run may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The selected neurons' gate and up columns and down rows.
    Target,
    /// As `Target`, for a seeded uniform draw of the same number of neurons.
    Random,
    /// Every gate, up and down entry.
    FfnOnly,
    /// Everything.
    Full,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Target, Mode::Random, Mode::FfnOnly, Mode::Full];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Target => "target",
            Mode::Random => "random",
            Mode::FfnOnly => "ffn_only",
            Mode::Full => "full",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| config_err!("unknown mode {s:?}, expected one of target, random, ffn_only, full"))
    }
}

/// Trainable entries of a model written with `3 * d_model` weights per neuron.
pub fn neuron_param_count(n_neurons: u64, d_model: u64) -> u64 {
    3 * d_model * n_neurons
}

/// Per-tensor boolean trainability, in checkpoint declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMask {
    pub mode: Mode,
    pub ids: Vec<ParamId>,
    /// Same shape (flattened) as the tensor with the matching id.
    pub marks: Vec<Vec<bool>>,
    /// The neuron set the mask was built from, for neuron-level modes.
    pub neurons: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MaskSummaryRow {
    pub layer: Option<usize>,
    pub projection: &'static str,
    pub trainable_count: usize,
}

fn shape(cfg: &ModelConfig, kind: ParamKind) -> (usize, usize) {
    let d = cfg.d_model;
    match kind {
        ParamKind::TokenEmbedding => (cfg.vocab_size, d),
        ParamKind::AttnNorm | ParamKind::FfnNorm | ParamKind::FinalNorm => (1, d),
        ParamKind::Query | ParamKind::Key | ParamKind::Value | ParamKind::AttnOut => (d, d),
        ParamKind::Gate | ParamKind::Up => (d, cfg.d_ff),
        ParamKind::Down => (cfg.d_ff, d),
        ParamKind::Unembedding => (d, cfg.vocab_size),
    }
}

impl ParamMask {
    /// Every entry marked `value`.
    pub fn uniform(cfg: &ModelConfig, mode: Mode, value: bool) -> Self {
        Self::by_kind(cfg, mode, |_| value)
    }

    fn by_kind(cfg: &ModelConfig, mode: Mode, f: impl Fn(ParamKind) -> bool) -> Self {
        let ids = param_ids(cfg.n_layers);
        let marks = ids
            .iter()
            .map(|id| {
                let (r, c) = shape(cfg, id.kind);
                vec![f(id.kind); r * c]
            })
            .collect();
        ParamMask {
            mode,
            ids,
            marks,
            neurons: None,
        }
    }

    /// Gate and up column `j` and down row `j` of layer `i`, for every `(i, j)`.
    pub fn from_neurons(cfg: &ModelConfig, mode: Mode, neurons: &[(usize, usize)]) -> Result<Self> {
        let mut mask = Self::uniform(cfg, mode, false);
        let (d, dff) = (cfg.d_model, cfg.d_ff);
        for &(layer, j) in neurons {
            if layer >= cfg.n_layers || j >= dff {
                return Err(config_err!(
                    "neuron ({layer}, {j}) outside model bounds {} x {dff}",
                    cfg.n_layers
                ));
            }
        }
        for (id, marks) in mask.ids.iter().zip(mask.marks.iter_mut()) {
            let Some(layer) = id.layer else { continue };
            for &(_, j) in neurons.iter().filter(|n| n.0 == layer) {
                match id.kind {
                    ParamKind::Gate | ParamKind::Up => (0..d).for_each(|r| marks[r * dff + j] = true),
                    ParamKind::Down => marks[j * d..(j + 1) * d].fill(true),
                    _ => {}
                }
            }
        }
        let mut sorted = neurons.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        mask.neurons = Some(sorted);
        Ok(mask)
    }

    pub fn trainable_count(&self) -> usize {
        self.marks.iter().map(|m| m.iter().filter(|&&b| b).count()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.marks.iter().map(|m| m.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> Option<&[bool]> {
        self.ids.iter().position(|&i| i == id).map(|p| self.marks[p].as_slice())
    }

    /// Trainable counts per tensor, in declaration order.
    pub fn summary(&self) -> Vec<MaskSummaryRow> {
        self.ids
            .iter()
            .zip(&self.marks)
            .map(|(id, m)| MaskSummaryRow {
                layer: id.layer,
                projection: id.kind.name(),
                trainable_count: m.iter().filter(|&&b| b).count(),
            })
            .collect()
    }

    /// `layer,projection,trainable_count` rows; global tensors have an empty layer.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("layer,projection,trainable_count\n");
        for row in self.summary() {
            let layer = row.layer.map(|l| l.to_string()).unwrap_or_default();
            out.push_str(&format!("{layer},{},{}\n", row.projection, row.trainable_count));
        }
        out
    }
}

/// Builds the mask for `mode`. `seed` only matters for [`Mode::Random`].
pub fn build_mask(cfg: &ModelConfig, spec: &SubnetworkSpec, mode: Mode, seed: u64) -> Result<ParamMask> {
    cfg.validate()?;
    spec.check_bounds(cfg.n_layers, cfg.d_ff)?;
    match mode {
        Mode::Target => ParamMask::from_neurons(cfg, mode, &spec.neurons),
        Mode::Random => {
            let total = cfg.n_neurons();
            if spec.len() > total {
                return Err(config_err!("cannot draw {} of {total} neurons", spec.len()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let neurons: Vec<(usize, usize)> = sample(&mut rng, total, spec.len())
                .into_iter()
                .map(|flat| (flat / cfg.d_ff, flat % cfg.d_ff))
                .collect();
            ParamMask::from_neurons(cfg, mode, &neurons)
        }
        Mode::FfnOnly => Ok(ParamMask::by_kind(cfg, mode, ParamKind::is_ffn)),
        Mode::Full => Ok(ParamMask::uniform(cfg, mode, true)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelBundle;

    fn spec(neurons: Vec<(usize, usize)>) -> SubnetworkSpec {
        SubnetworkSpec {
            lang: "xx".into(),
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
    fn target_mask_marks_columns_and_rows() {
        let cfg = ModelConfig::toy();
        let m = build_mask(&cfg, &spec(vec![(0, 3), (1, 0), (1, 255)]), Mode::Target, 0).unwrap();
        assert_eq!(m.trainable_count(), 3 * cfg.d_model * 3);
        let gate = m.get(ParamId { kind: ParamKind::Gate, layer: Some(0) }).unwrap();
        for r in 0..cfg.d_model {
            for c in 0..cfg.d_ff {
                assert_eq!(gate[r * cfg.d_ff + c], c == 3);
            }
        }
        let down = m.get(ParamId { kind: ParamKind::Down, layer: Some(1) }).unwrap();
        for r in 0..cfg.d_ff {
            for c in 0..cfg.d_model {
                assert_eq!(down[r * cfg.d_model + c], r == 0 || r == 255);
            }
        }
        for (id, marks) in m.ids.iter().zip(&m.marks) {
            if !id.kind.is_ffn() {
                assert!(marks.iter().all(|&b| !b), "{id:?}");
            }
        }
    }

    #[test]
    fn empty_spec_freezes_everything() {
        let m = build_mask(&ModelConfig::toy(), &spec(vec![]), Mode::Target, 0).unwrap();
        assert_eq!(m.trainable_count(), 0);
    }

    #[test]
    fn out_of_bounds_and_oversized_draws_are_rejected() {
        let cfg = ModelConfig::toy();
        assert!(build_mask(&cfg, &spec(vec![(2, 0)]), Mode::Target, 0).is_err());
        assert!(build_mask(&cfg, &spec(vec![(0, 256)]), Mode::Target, 0).is_err());
        let mut small = cfg.clone();
        small.d_ff = 2;
        small.n_layers = 1;
        let three = spec(vec![(0, 0), (0, 1), (0, 1)]);
        assert!(build_mask(&small, &three, Mode::Random, 0).is_err());
    }

    #[test]
    fn random_mask_is_seeded_and_sized() {
        let cfg = ModelConfig::toy();
        let s = spec((0..40).map(|j| (0, j)).collect());
        let a = build_mask(&cfg, &s, Mode::Random, 9).unwrap();
        let b = build_mask(&cfg, &s, Mode::Random, 9).unwrap();
        let c = build_mask(&cfg, &s, Mode::Random, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.neurons, c.neurons);
        assert_eq!(a.neurons.as_ref().unwrap().len(), 40);
        assert_eq!(a.trainable_count(), 3 * cfg.d_model * 40);
    }

    #[test]
    fn ffn_and_full_modes() {
        let cfg = ModelConfig::toy();
        let model = ModelBundle::<f32>::init(cfg.clone()).unwrap();
        let full = build_mask(&cfg, &spec(vec![]), Mode::Full, 0).unwrap();
        assert_eq!(full.trainable_count(), model.params.n_entries());
        assert_eq!(full.total_count(), model.params.n_entries());
        let ffn = build_mask(&cfg, &spec(vec![]), Mode::FfnOnly, 0).unwrap();
        assert_eq!(ffn.trainable_count(), cfg.n_layers * 3 * cfg.d_model * cfg.d_ff);
        let all_neurons: Vec<_> = (0..cfg.n_layers).flat_map(|l| (0..cfg.d_ff).map(move |j| (l, j))).collect();
        let target = build_mask(&cfg, &spec(all_neurons), Mode::Target, 0).unwrap();
        assert_eq!(target.marks, ffn.marks);
    }

    #[test]
    fn summary_csv_rows() {
        let cfg = ModelConfig::toy();
        let m = build_mask(&cfg, &spec(vec![(1, 7)]), Mode::Target, 0).unwrap();
        let csv = m.summary_csv();
        assert!(csv.starts_with("layer,projection,trainable_count\n,token_embedding,0\n"));
        assert!(csv.contains("\n1,gate,64\n1,up,64\n1,down,64\n"));
        assert_eq!(csv.lines().count(), 1 + 1 + 9 * cfg.n_layers + 2);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("lora".parse::<Mode>().is_err());
    }
}
