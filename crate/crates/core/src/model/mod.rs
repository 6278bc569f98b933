//! Minimal decoder-only transformer: pre-norm RMSNorm blocks, rotary causal
//! self-attention and a SwiGLU feed-forward network.
//!
//! All weight matrices use `(input_dim x output_dim)` orientation and are
//! stored row-major, so a linear map is `y = x · W`.

mod checkpoint;
mod forward;
mod grad;
mod scalar;
pub(crate) mod linalg;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{fingerprint, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{forward, record_ffn_firings, FfnFirings, ForwardTrace, LayerTrace};
pub use grad::{loss_and_grads, mean_loss, LossAndGrads};
pub use scalar::Scalar;

use crate::error::{config_err, Result};

/// Byte-level vocabulary: 256 raw bytes plus one BOS/pad id.
pub const BYTE_VOCAB: usize = 257;
pub const BOS_ID: u32 = 256;

pub(crate) const NORM_EPS: f64 = 1e-5;
pub(crate) const ROPE_BASE: f64 = 10_000.0;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default used by the toy pipeline.
    pub fn toy() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            vocab_size: BYTE_VOCAB,
            max_seq_len: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(config_err!("model dimensions must be positive: {self:?}"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(config_err!(
                "d_model {} not divisible by n_heads {}",
                self.d_model,
                self.n_heads
            ));
        }
        if self.head_dim() % 2 != 0 {
            return Err(config_err!("head dimension {} must be even for rotary embeddings", self.head_dim()));
        }
        if self.vocab_size < 2 {
            return Err(config_err!("vocab_size must be at least 2"));
        }
        if self.max_seq_len < 2 {
            return Err(config_err!("max_seq_len must be at least 2"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Total FFN neuron count across layers.
    pub fn n_neurons(&self) -> usize {
        self.n_layers * self.d_ff
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match shape");
        Tensor { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut T {
        &mut self.data[r * self.cols + c]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::of(x.widen())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Which weight a tensor is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    TokenEmbedding,
    AttnNorm,
    Query,
    Key,
    Value,
    AttnOut,
    FfnNorm,
    Gate,
    Up,
    Down,
    FinalNorm,
    Unembedding,
}

impl ParamKind {
    pub fn is_ffn(self) -> bool {
        matches!(self, ParamKind::Gate | ParamKind::Up | ParamKind::Down)
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::TokenEmbedding => "token_embedding",
            ParamKind::AttnNorm => "attn_norm",
            ParamKind::Query => "query",
            ParamKind::Key => "key",
            ParamKind::Value => "value",
            ParamKind::AttnOut => "attn_out",
            ParamKind::FfnNorm => "ffn_norm",
            ParamKind::Gate => "gate",
            ParamKind::Up => "up",
            ParamKind::Down => "down",
            ParamKind::FinalNorm => "final_norm",
            ParamKind::Unembedding => "unembedding",
        }
    }
}

/// Identity of one parameter tensor: its kind and, for per-layer weights, the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    pub kind: ParamKind,
    pub layer: Option<usize>,
}

const LAYER_KINDS: [ParamKind; 9] = [
    ParamKind::AttnNorm,
    ParamKind::Query,
    ParamKind::Key,
    ParamKind::Value,
    ParamKind::AttnOut,
    ParamKind::FfnNorm,
    ParamKind::Gate,
    ParamKind::Up,
    ParamKind::Down,
];

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub ffn_norm: Tensor<T>,
    pub gate: Tensor<T>,
    pub up: Tensor<T>,
    pub down: Tensor<T>,
}

impl<T: Scalar> LayerParams<T> {
    fn tensor(&self, kind: ParamKind) -> &Tensor<T> {
        match kind {
            ParamKind::AttnNorm => &self.attn_norm,
            ParamKind::Query => &self.wq,
            ParamKind::Key => &self.wk,
            ParamKind::Value => &self.wv,
            ParamKind::AttnOut => &self.wo,
            ParamKind::FfnNorm => &self.ffn_norm,
            ParamKind::Gate => &self.gate,
            ParamKind::Up => &self.up,
            ParamKind::Down => &self.down,
            other => unreachable!("{other:?} is not a layer parameter"),
        }
    }

    fn tensor_mut(&mut self, kind: ParamKind) -> &mut Tensor<T> {
        match kind {
            ParamKind::AttnNorm => &mut self.attn_norm,
            ParamKind::Query => &mut self.wq,
            ParamKind::Key => &mut self.wk,
            ParamKind::Value => &mut self.wv,
            ParamKind::AttnOut => &mut self.wo,
            ParamKind::FfnNorm => &mut self.ffn_norm,
            ParamKind::Gate => &mut self.gate,
            ParamKind::Up => &mut self.up,
            ParamKind::Down => &mut self.down,
            other => unreachable!("{other:?} is not a layer parameter"),
        }
    }
}

/// Every trainable tensor of the model. Gradients reuse the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub token_embedding: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: Tensor<T>,
    pub unembedding: Tensor<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let layer = LayerParams {
            attn_norm: Tensor::zeros(1, d),
            wq: Tensor::zeros(d, d),
            wk: Tensor::zeros(d, d),
            wv: Tensor::zeros(d, d),
            wo: Tensor::zeros(d, d),
            ffn_norm: Tensor::zeros(1, d),
            gate: Tensor::zeros(d, cfg.d_ff),
            up: Tensor::zeros(d, cfg.d_ff),
            down: Tensor::zeros(cfg.d_ff, d),
        };
        Params {
            token_embedding: Tensor::zeros(cfg.vocab_size, d),
            layers: vec![layer; cfg.n_layers],
            final_norm: Tensor::zeros(1, d),
            unembedding: Tensor::zeros(d, cfg.vocab_size),
        }
    }

    /// Tensor identities in checkpoint declaration order.
    pub fn ids(&self) -> Vec<ParamId> {
        param_ids(self.layers.len())
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        match (id.kind, id.layer) {
            (ParamKind::TokenEmbedding, _) => &self.token_embedding,
            (ParamKind::FinalNorm, _) => &self.final_norm,
            (ParamKind::Unembedding, _) => &self.unembedding,
            (kind, Some(l)) => self.layers[l].tensor(kind),
            (kind, None) => panic!("{kind:?} requires a layer index"),
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        match (id.kind, id.layer) {
            (ParamKind::TokenEmbedding, _) => &mut self.token_embedding,
            (ParamKind::FinalNorm, _) => &mut self.final_norm,
            (ParamKind::Unembedding, _) => &mut self.unembedding,
            (kind, Some(l)) => self.layers[l].tensor_mut(kind),
            (kind, None) => panic!("{kind:?} requires a layer index"),
        }
    }

    /// Tensors in declaration order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.token_embedding];
        for layer in &self.layers {
            out.extend(LAYER_KINDS.iter().map(|&k| layer.tensor(k)));
        }
        out.push(&self.final_norm);
        out.push(&self.unembedding);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.token_embedding];
        for layer in &mut self.layers {
            let LayerParams {
                attn_norm,
                wq,
                wk,
                wv,
                wo,
                ffn_norm,
                gate,
                up,
                down,
            } = layer;
            out.extend([attn_norm, wq, wk, wv, wo, ffn_norm, gate, up, down]);
        }
        out.push(&mut self.final_norm);
        out.push(&mut self.unembedding);
        out
    }

    pub fn n_entries(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Params<T>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            token_embedding: self.token_embedding.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: l.attn_norm.cast(),
                    wq: l.wq.cast(),
                    wk: l.wk.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    ffn_norm: l.ffn_norm.cast(),
                    gate: l.gate.cast(),
                    up: l.up.cast(),
                    down: l.down.cast(),
                })
                .collect(),
            final_norm: self.final_norm.cast(),
            unembedding: self.unembedding.cast(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

pub fn param_ids(n_layers: usize) -> Vec<ParamId> {
    let mut ids = vec![ParamId {
        kind: ParamKind::TokenEmbedding,
        layer: None,
    }];
    for l in 0..n_layers {
        ids.extend(LAYER_KINDS.iter().map(|&kind| ParamId { kind, layer: Some(l) }));
    }
    ids.push(ParamId {
        kind: ParamKind::FinalNorm,
        layer: None,
    });
    ids.push(ParamId {
        kind: ParamKind::Unembedding,
        layer: None,
    });
    ids
}

/// Model configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T = f32> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

impl<T: Scalar> ModelBundle<T> {
    /// Seeded scaled-Gaussian initialization. Norm scales start at one and the
    /// residual output projections (`wo`, `down`) are shrunk by `1/sqrt(2 n_layers)`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        Self::init_with_std(config, INIT_STD)
    }

    pub fn init_with_std(config: ModelConfig, std: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, std).map_err(|e| config_err!("init std: {e}"))?;
        let out_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        let mut params = Params::zeros(&config);
        for id in params.ids() {
            let t = params.get_mut(id);
            match id.kind {
                ParamKind::AttnNorm | ParamKind::FfnNorm | ParamKind::FinalNorm => {
                    t.data.iter_mut().for_each(|x| *x = T::one());
                }
                ParamKind::AttnOut | ParamKind::Down => {
                    for x in &mut t.data {
                        *x = T::of(normal.sample(&mut rng) * out_scale);
                    }
                }
                _ => {
                    for x in &mut t.data {
                        *x = T::of(normal.sample(&mut rng));
                    }
                }
            }
        }
        Ok(ModelBundle { config, params })
    }

    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        ModelBundle {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}
