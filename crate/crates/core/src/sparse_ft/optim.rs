//! AdamW restricted to the trainable entries of a mask.

use serde::{Deserialize, Serialize};

use super::mask::ParamMask;
use crate::error::{config_err, Error, Result};
use crate::model::{Params, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip_norm: Some(1.0),
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(config_err!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("betas must be in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(config_err!("eps must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config_err!("weight decay must be non-negative"));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(config_err!("clip norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// One AdamW update of a single weight at step `t` (1-based): decoupled decay
/// `w *= 1 - lr * wd`, then the bias-corrected Adam step. Returns `(w, m, v)`.
pub fn adamw_scalar(w: f64, g: f64, m: f64, v: f64, t: u64, cfg: &AdamWConfig) -> (f64, f64, f64) {
    let m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    let v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    let m_hat = m / (1.0 - cfg.beta1.powi(t as i32));
    let v_hat = v / (1.0 - cfg.beta2.powi(t as i32));
    let w = w * (1.0 - cfg.lr * cfg.weight_decay) - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    (w, m, v)
}

fn clip_scale(sq_norm: f64, cfg: &AdamWConfig) -> f64 {
    let norm = sq_norm.sqrt();
    match cfg.grad_clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Gradient norm over trainable entries, before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Optimizer state holding moments for trainable entries only.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedAdamW<T> {
    pub step: u64,
    /// Trainable entry indices per tensor, in declaration order.
    index: Vec<Vec<usize>>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> MaskedAdamW<T> {
    pub fn new(mask: &ParamMask) -> Self {
        let index: Vec<Vec<usize>> = mask
            .marks
            .iter()
            .map(|m| m.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect())
            .collect();
        let m = index.iter().map(|ix| vec![T::zero(); ix.len()]).collect();
        let v = index.iter().map(|ix| vec![T::zero(); ix.len()]).collect();
        MaskedAdamW { step: 0, index, m, v }
    }

    /// Number of moment slots held (per moment).
    pub fn n_slots(&self) -> usize {
        self.index.iter().map(|ix| ix.len()).sum()
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// Clips over trainable entries, then updates only those entries. Frozen
    /// weights and their (absent) moments are never touched, including by
    /// weight decay. A non-finite trainable gradient rejects the step before
    /// anything changes.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>, cfg: &AdamWConfig) -> Result<StepInfo> {
        let gts = grads.tensors();
        if gts.len() != self.index.len() {
            return Err(Error::Consistency("gradient set does not match the mask".into()));
        }
        let mut sq = 0.0f64;
        for (g, ix) in gts.iter().zip(&self.index) {
            for &i in ix {
                let x = g.data[i].widen();
                if !x.is_finite() {
                    return Err(Error::NonFinite(format!("gradient entry {i} = {x}")));
                }
                sq += x * x;
            }
        }
        let scale = clip_scale(sq, cfg);
        self.step += 1;
        let t = self.step;
        for (((p, g), ix), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(&gts)
            .zip(&self.index)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (slot, &i) in ix.iter().enumerate() {
                let (w, mm, vv) = adamw_scalar(
                    p.data[i].widen(),
                    g.data[i].widen() * scale,
                    m[slot].widen(),
                    v[slot].widen(),
                    t,
                    cfg,
                );
                p.data[i] = T::of(w);
                m[slot] = T::of(mm);
                v[slot] = T::of(vv);
            }
        }
        Ok(StepInfo {
            grad_norm: sq.sqrt(),
            clipped: scale < 1.0,
        })
    }
}

/// Plain AdamW over every entry, with full-size moments.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseAdamW<T> {
    pub step: u64,
    pub m: Params<T>,
    pub v: Params<T>,
}

impl<T: Scalar> DenseAdamW<T> {
    pub fn new(params: &Params<T>) -> Self {
        let mut zero = params.clone();
        zero.tensors_mut().into_iter().for_each(|t| t.data.fill(T::zero()));
        DenseAdamW {
            step: 0,
            m: zero.clone(),
            v: zero,
        }
    }

    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>, cfg: &AdamWConfig) -> Result<StepInfo> {
        let mut sq = 0.0f64;
        for g in grads.tensors() {
            for &x in &g.data {
                let x = x.widen();
                if !x.is_finite() {
                    return Err(Error::NonFinite(format!("gradient entry {x}")));
                }
                sq += x * x;
            }
        }
        let scale = clip_scale(sq, cfg);
        self.step += 1;
        let t = self.step;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.data.len() {
                let (w, mm, vv) = adamw_scalar(
                    p.data[i].widen(),
                    g.data[i].widen() * scale,
                    m.data[i].widen(),
                    v.data[i].widen(),
                    t,
                    cfg,
                );
                p.data[i] = T::of(w);
                m.data[i] = T::of(mm);
                v.data[i] = T::of(vv);
            }
        }
        Ok(StepInfo {
            grad_norm: sq.sqrt(),
            clipped: scale < 1.0,
        })
    }
}
