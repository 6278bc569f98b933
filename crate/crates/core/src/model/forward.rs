use super::linalg::{matmul, silu};
use super::{ModelBundle, ModelConfig, Params, Scalar, NORM_EPS, ROPE_BASE};
use crate::error::{data_err, Result};

/// Per-layer activations exposed to analyses.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace<T> {
    /// Gate projection output before SiLU, `tokens x d_ff`.
    pub gate_pre: Vec<T>,
    /// Residual stream after the FFN output is added, `tokens x d_model`.
    pub post_ffn: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub n_tokens: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub layers: Vec<LayerTrace<T>>,
    pub logits: Vec<T>,
}

/// Everything the backward pass needs for one layer.
pub(crate) struct LayerCache<T> {
    pub x_in: Vec<T>,
    pub attn_inv_rms: Vec<T>,
    pub h_attn: Vec<T>,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    pub probs: Vec<T>,
    pub ctx: Vec<T>,
    pub x_mid: Vec<T>,
    pub ffn_inv_rms: Vec<T>,
    pub h_ffn: Vec<T>,
    pub gate_pre: Vec<T>,
    pub up: Vec<T>,
    pub act: Vec<T>,
    pub x_out: Vec<T>,
}

pub(crate) struct SeqCache<T> {
    pub n: usize,
    pub layers: Vec<LayerCache<T>>,
    pub final_inv_rms: Vec<T>,
    pub h_final: Vec<T>,
    pub logits: Vec<T>,
}

pub(crate) fn check_tokens(cfg: &ModelConfig, tokens: &[u32]) -> Result<()> {
    if tokens.is_empty() {
        return Err(data_err!("empty token sequence"));
    }
    if tokens.len() > cfg.max_seq_len {
        return Err(data_err!(
            "sequence length {} exceeds max_seq_len {}",
            tokens.len(),
            cfg.max_seq_len
        ));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(data_err!("token id {bad} out of range for vocab {}", cfg.vocab_size));
    }
    Ok(())
}

/// RMS-normalizes each row of `x` and scales by `gain`; returns output and the
/// per-row inverse RMS.
pub(crate) fn rms_norm<T: Scalar>(x: &[T], gain: &[T], n: usize, d: usize) -> (Vec<T>, Vec<T>) {
    let mut out = vec![T::zero(); n * d];
    let mut inv = vec![T::zero(); n];
    let eps = T::of(NORM_EPS);
    let df = T::of(d as f64);
    for t in 0..n {
        let row = &x[t * d..(t + 1) * d];
        let ms = row.iter().map(|&v| v * v).sum::<T>() / df;
        let r = T::one() / (ms + eps).sqrt();
        inv[t] = r;
        for j in 0..d {
            out[t * d + j] = row[j] * r * gain[j];
        }
    }
    (out, inv)
}

/// Rotates consecutive pairs within each head by a position-dependent angle.
/// `sign = -1` applies the inverse rotation (used by the backward pass).
pub(crate) fn rope_in_place<T: Scalar>(x: &mut [T], n: usize, n_heads: usize, head_dim: usize, sign: f64) {
    let d = n_heads * head_dim;
    for t in 0..n {
        for i in 0..head_dim / 2 {
            let freq = ROPE_BASE.powf(-(2.0 * i as f64) / head_dim as f64);
            let angle = t as f64 * freq;
            let (s, c) = (T::of(sign * angle.sin()), T::of(angle.cos()));
            for h in 0..n_heads {
                let base = t * d + h * head_dim + 2 * i;
                let (a, b) = (x[base], x[base + 1]);
                x[base] = a * c - b * s;
                x[base + 1] = a * s + b * c;
            }
        }
    }
}

pub(crate) fn run<T: Scalar>(cfg: &ModelConfig, p: &Params<T>, tokens: &[u32]) -> SeqCache<T> {
    let n = tokens.len();
    let d = cfg.d_model;
    let dff = cfg.d_ff;
    let nh = cfg.n_heads;
    let hd = cfg.head_dim();
    let scale = T::of(1.0 / (hd as f64).sqrt());

    let mut x = vec![T::zero(); n * d];
    for (t, &tok) in tokens.iter().enumerate() {
        let row = tok as usize * d;
        x[t * d..(t + 1) * d].copy_from_slice(&p.token_embedding.data[row..row + d]);
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lp in &p.layers {
        let x_in = x;
        let (h_attn, attn_inv_rms) = rms_norm(&x_in, &lp.attn_norm.data, n, d);
        let mut q = matmul(&h_attn, &lp.wq.data, n, d, d);
        let mut k = matmul(&h_attn, &lp.wk.data, n, d, d);
        let v = matmul(&h_attn, &lp.wv.data, n, d, d);
        rope_in_place(&mut q, n, nh, hd, 1.0);
        rope_in_place(&mut k, n, nh, hd, 1.0);

        let mut probs = vec![T::zero(); nh * n * n];
        let mut ctx = vec![T::zero(); n * d];
        for h in 0..nh {
            let off = h * hd;
            for t in 0..n {
                let prow = &mut probs[(h * n + t) * n..(h * n + t + 1) * n];
                let qt = &q[t * d + off..t * d + off + hd];
                let mut max = T::neg_infinity();
                for s in 0..=t {
                    let ks = &k[s * d + off..s * d + off + hd];
                    let dot = qt.iter().zip(ks).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    prow[s] = dot;
                    if dot > max {
                        max = dot;
                    }
                }
                let mut z = T::zero();
                for s in 0..=t {
                    prow[s] = (prow[s] - max).exp();
                    z += prow[s];
                }
                for s in 0..=t {
                    prow[s] /= z;
                }
                let crow = &mut ctx[t * d + off..t * d + off + hd];
                for s in 0..=t {
                    let w = prow[s];
                    for (c, &vv) in crow.iter_mut().zip(&v[s * d + off..s * d + off + hd]) {
                        *c += w * vv;
                    }
                }
            }
        }
        let attn_out = matmul(&ctx, &lp.wo.data, n, d, d);
        let x_mid: Vec<T> = x_in.iter().zip(&attn_out).map(|(&a, &b)| a + b).collect();

        let (h_ffn, ffn_inv_rms) = rms_norm(&x_mid, &lp.ffn_norm.data, n, d);
        let gate_pre = matmul(&h_ffn, &lp.gate.data, n, d, dff);
        let up = matmul(&h_ffn, &lp.up.data, n, d, dff);
        let act: Vec<T> = gate_pre.iter().zip(&up).map(|(&g, &u)| silu(g) * u).collect();
        let ffn_out = matmul(&act, &lp.down.data, n, dff, d);
        let x_out: Vec<T> = x_mid.iter().zip(&ffn_out).map(|(&a, &b)| a + b).collect();

        x = x_out.clone();
        layers.push(LayerCache {
            x_in,
            attn_inv_rms,
            h_attn,
            q,
            k,
            v,
            probs,
            ctx,
            x_mid,
            ffn_inv_rms,
            h_ffn,
            gate_pre,
            up,
            act,
            x_out,
        });
    }

    let (h_final, final_inv_rms) = rms_norm(&x, &p.final_norm.data, n, d);
    let logits = matmul(&h_final, &p.unembedding.data, n, d, cfg.vocab_size);
    SeqCache {
        n,
        layers,
        final_inv_rms,
        h_final,
        logits,
    }
}

/// Runs the model over one sequence, returning `tokens x vocab` logits and,
/// when requested, the per-layer gate pre-activations and post-FFN states.
pub fn forward<T: Scalar>(
    model: &ModelBundle<T>,
    tokens: &[u32],
    want_trace: bool,
) -> Result<(Vec<T>, Option<ForwardTrace<T>>)> {
    check_tokens(&model.config, tokens)?;
    let cache = run(&model.config, &model.params, tokens);
    let trace = want_trace.then(|| ForwardTrace {
        n_tokens: cache.n,
        d_model: model.config.d_model,
        d_ff: model.config.d_ff,
        layers: cache
            .layers
            .iter()
            .map(|l| LayerTrace {
                gate_pre: l.gate_pre.clone(),
                post_ffn: l.x_out.clone(),
            })
            .collect(),
        logits: cache.logits.clone(),
    });
    Ok((cache.logits, trace))
}

/// Firing counts of one trace: `counts[layer * d_ff + j]` is the number of
/// positions whose gate pre-activation for neuron `j` is strictly positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FfnFirings {
    pub counts: Vec<u64>,
    pub positions: u64,
}

/// SiLU is positive exactly where its input is, so the sign of the gate
/// pre-activation decides whether a neuron fired.
pub fn record_ffn_firings<T: Scalar>(trace: &ForwardTrace<T>) -> Result<FfnFirings> {
    let mut counts = vec![0u64; trace.layers.len() * trace.d_ff];
    for (l, layer) in trace.layers.iter().enumerate() {
        if layer.gate_pre.len() != trace.n_tokens * trace.d_ff {
            return Err(data_err!(
                "layer {l}: gate pre-activation has {} values, expected {}",
                layer.gate_pre.len(),
                trace.n_tokens * trace.d_ff
            ));
        }
        let c = &mut counts[l * trace.d_ff..(l + 1) * trace.d_ff];
        for row in layer.gate_pre.chunks_exact(trace.d_ff) {
            for (cnt, &z) in c.iter_mut().zip(row) {
                if z > T::zero() {
                    *cnt += 1;
                }
            }
        }
    }
    Ok(FfnFirings {
        counts,
        positions: trace.n_tokens as u64,
    })
}
