use rayon::prelude::*;

use super::forward::{check_tokens, rope_in_place, run, SeqCache};
use super::linalg::{acc_at_b, matmul_bt, sigmoid};
use super::{ModelBundle, ModelConfig, Params, Scalar};
use crate::error::{data_err, Error, Result};

#[derive(Debug, Clone)]
pub struct LossAndGrads<T> {
    /// Mean next-token cross-entropy over every predicted position.
    pub loss: f64,
    pub n_predictions: usize,
    pub grads: Params<T>,
}

fn check_batch(cfg: &ModelConfig, batch: &[Vec<u32>]) -> Result<usize> {
    if batch.is_empty() {
        return Err(data_err!("empty batch"));
    }
    let mut total = 0;
    for seq in batch {
        if seq.len() < 2 {
            return Err(data_err!("sequence of length {} has nothing to predict", seq.len()));
        }
        check_tokens(cfg, seq)?;
        total += seq.len() - 1;
    }
    Ok(total)
}

/// Softmax cross-entropy of one sequence. Returns the summed loss and, when
/// `scale` is given, `d(loss * scale)/d(logits)`.
fn seq_cross_entropy<T: Scalar>(logits: &[T], tokens: &[u32], vocab: usize, scale: Option<f64>) -> (f64, Option<Vec<T>>) {
    let n = tokens.len();
    let mut sum = 0.0;
    let mut dlogits = scale.map(|_| vec![T::zero(); n * vocab]);
    let mut probs = vec![0.0f64; vocab];
    for t in 0..n - 1 {
        let row = &logits[t * vocab..(t + 1) * vocab];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x.widen()));
        let mut z = 0.0;
        for (p, &x) in probs.iter_mut().zip(row) {
            *p = (x.widen() - max).exp();
            z += *p;
        }
        let target = tokens[t + 1] as usize;
        sum += z.ln() + max - row[target].widen();
        if let (Some(dl), Some(s)) = (dlogits.as_mut(), scale) {
            let drow = &mut dl[t * vocab..(t + 1) * vocab];
            for (j, (d, &p)) in drow.iter_mut().zip(&probs).enumerate() {
                let y = if j == target { 1.0 } else { 0.0 };
                *d = T::of((p / z - y) * s);
            }
        }
    }
    (sum, dlogits)
}

/// Backward through an RMSNorm row block. Accumulates the gain gradient and
/// returns the input gradient.
fn rms_norm_backward<T: Scalar>(
    x: &[T],
    inv_rms: &[T],
    gain: &[T],
    dy: &[T],
    dgain: &mut [T],
    n: usize,
    d: usize,
) -> Vec<T> {
    let mut dx = vec![T::zero(); n * d];
    let df = T::of(d as f64);
    for t in 0..n {
        let r = inv_rms[t];
        let xr = &x[t * d..(t + 1) * d];
        let dyr = &dy[t * d..(t + 1) * d];
        let mut dot = T::zero();
        for j in 0..d {
            dgain[j] += dyr[j] * xr[j] * r;
            dot += gain[j] * dyr[j] * xr[j];
        }
        let coef = dot * r * r * r / df;
        for j in 0..d {
            dx[t * d + j] = gain[j] * dyr[j] * r - xr[j] * coef;
        }
    }
    dx
}

fn backward<T: Scalar>(cfg: &ModelConfig, p: &Params<T>, tokens: &[u32], cache: &SeqCache<T>, dlogits: &[T]) -> Params<T> {
    let n = cache.n;
    let d = cfg.d_model;
    let dff = cfg.d_ff;
    let nh = cfg.n_heads;
    let hd = cfg.head_dim();
    let vocab = cfg.vocab_size;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let mut g = Params::zeros(cfg);

    acc_at_b(&mut g.unembedding.data, &cache.h_final, dlogits, n, d, vocab);
    let dh_final = matmul_bt(dlogits, &p.unembedding.data, n, d, vocab);
    let x_last = &cache.layers.last().expect("at least one layer").x_out;
    let mut dx = rms_norm_backward(
        x_last,
        &cache.final_inv_rms,
        &p.final_norm.data,
        &dh_final,
        &mut g.final_norm.data,
        n,
        d,
    );

    for (l, (lp, lc)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
        let gl = &mut g.layers[l];

        // FFN: x_out = x_mid + (silu(h Wg) * (h Wu)) Wd
        acc_at_b(&mut gl.down.data, &lc.act, &dx, n, dff, d);
        let dact = matmul_bt(&dx, &lp.down.data, n, dff, d);
        let mut dgate = vec![T::zero(); n * dff];
        let mut dup = vec![T::zero(); n * dff];
        for i in 0..n * dff {
            let z = lc.gate_pre[i];
            let s = sigmoid(z);
            dup[i] = dact[i] * z * s;
            dgate[i] = dact[i] * lc.up[i] * s * (T::one() + z * (T::one() - s));
        }
        acc_at_b(&mut gl.gate.data, &lc.h_ffn, &dgate, n, d, dff);
        acc_at_b(&mut gl.up.data, &lc.h_ffn, &dup, n, d, dff);
        let mut dh_ffn = matmul_bt(&dgate, &lp.gate.data, n, d, dff);
        for (a, b) in dh_ffn.iter_mut().zip(matmul_bt(&dup, &lp.up.data, n, d, dff)) {
            *a += b;
        }
        let dx_norm = rms_norm_backward(
            &lc.x_mid,
            &lc.ffn_inv_rms,
            &lp.ffn_norm.data,
            &dh_ffn,
            &mut gl.ffn_norm.data,
            n,
            d,
        );
        let dx_mid: Vec<T> = dx.iter().zip(&dx_norm).map(|(&a, &b)| a + b).collect();

        // attention: x_mid = x_in + ctx Wo
        acc_at_b(&mut gl.wo.data, &lc.ctx, &dx_mid, n, d, d);
        let dctx = matmul_bt(&dx_mid, &lp.wo.data, n, d, d);
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut dprob = vec![T::zero(); n];
        for h in 0..nh {
            let off = h * hd;
            for t in 0..n {
                let prow = &lc.probs[(h * n + t) * n..(h * n + t + 1) * n];
                let dct = &dctx[t * d + off..t * d + off + hd];
                let mut weighted = T::zero();
                for s in 0..=t {
                    let vs = &lc.v[s * d + off..s * d + off + hd];
                    dprob[s] = dct.iter().zip(vs).map(|(&a, &b)| a * b).sum::<T>();
                    weighted += dprob[s] * prow[s];
                    let w = prow[s];
                    for (dvv, &c) in dv[s * d + off..s * d + off + hd].iter_mut().zip(dct) {
                        *dvv += w * c;
                    }
                }
                for s in 0..=t {
                    let ds = prow[s] * (dprob[s] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for c in 0..hd {
                        dq[t * d + off + c] += ds * lc.k[s * d + off + c];
                        dk[s * d + off + c] += ds * lc.q[t * d + off + c];
                    }
                }
            }
        }
        rope_in_place(&mut dq, n, nh, hd, -1.0);
        rope_in_place(&mut dk, n, nh, hd, -1.0);
        acc_at_b(&mut gl.wq.data, &lc.h_attn, &dq, n, d, d);
        acc_at_b(&mut gl.wk.data, &lc.h_attn, &dk, n, d, d);
        acc_at_b(&mut gl.wv.data, &lc.h_attn, &dv, n, d, d);
        let mut dh_attn = matmul_bt(&dq, &lp.wq.data, n, d, d);
        for (part, w) in [(&dk, &lp.wk), (&dv, &lp.wv)] {
            for (a, b) in dh_attn.iter_mut().zip(matmul_bt(part, &w.data, n, d, d)) {
                *a += b;
            }
        }
        let dx_norm = rms_norm_backward(
            &lc.x_in,
            &lc.attn_inv_rms,
            &lp.attn_norm.data,
            &dh_attn,
            &mut gl.attn_norm.data,
            n,
            d,
        );
        dx = dx_mid.iter().zip(&dx_norm).map(|(&a, &b)| a + b).collect();
    }

    for (t, &tok) in tokens.iter().enumerate() {
        let row = &mut g.token_embedding.data[tok as usize * d..(tok as usize + 1) * d];
        for (a, &b) in row.iter_mut().zip(&dx[t * d..(t + 1) * d]) {
            *a += b;
        }
    }
    g
}

/// Mean next-token cross-entropy of a batch and its exact gradient with
/// respect to every parameter.
///
/// Sequences are processed in parallel; per-sequence gradients are summed in
/// batch order so the result does not depend on thread scheduling.
pub fn loss_and_grads<T: Scalar>(model: &ModelBundle<T>, batch: &[Vec<u32>]) -> Result<LossAndGrads<T>> {
    let cfg = &model.config;
    let total = check_batch(cfg, batch)?;
    let inv_total = 1.0 / total as f64;
    let parts: Vec<(f64, Params<T>)> = batch
        .par_iter()
        .map(|seq| {
            let cache = run(cfg, &model.params, seq);
            let (sum, dlogits) = seq_cross_entropy(&cache.logits, seq, cfg.vocab_size, Some(inv_total));
            let grads = backward(cfg, &model.params, seq, &cache, &dlogits.expect("gradient requested"));
            (sum, grads)
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut sum, mut grads) = iter.next().expect("non-empty batch");
    for (s, g) in iter {
        sum += s;
        grads.add_assign(&g);
    }
    let loss = sum * inv_total;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss = {loss}")));
    }
    Ok(LossAndGrads {
        loss,
        n_predictions: total,
        grads,
    })
}

/// Summed cross-entropy and prediction count over many sequences, without
/// gradients. Reduction order follows the input order.
pub fn mean_loss<T: Scalar>(model: &ModelBundle<T>, seqs: &[Vec<u32>]) -> Result<(f64, usize)> {
    let cfg = &model.config;
    let total = check_batch(cfg, seqs)?;
    let sums: Vec<f64> = seqs
        .par_iter()
        .map(|seq| {
            let cache = run(cfg, &model.params, seq);
            seq_cross_entropy::<T>(&cache.logits, seq, cfg.vocab_size, None).0
        })
        .collect();
    let sum: f64 = sums.iter().sum();
    Ok((sum / total as f64, total))
}
