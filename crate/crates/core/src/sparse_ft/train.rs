//! Training loops and perplexity.

use serde::{Deserialize, Serialize};

use super::mask::{Mode, ParamMask};
use super::optim::{AdamWConfig, MaskedAdamW};
use crate::corpus::{windows, Batches, LanguageCorpus, Split};
use crate::error::{config_err, data_err, Error, Result};
use crate::model::{loss_and_grads, mean_loss, ModelBundle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    pub val_interval_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps even if the epochs are not done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 2,
            weight_decay: 0.01,
            epochs: 1,
            grad_clip_norm: 1.0,
            val_interval_steps: 500,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            max_steps: None,
        }
    }
}

/// Default learning rate for fine-tuning in `mode`: dense baselines use a
/// smaller rate than the neuron-restricted modes.
pub fn default_learning_rate(mode: Mode) -> f64 {
    match mode {
        Mode::Target | Mode::Random => 1e-4,
        Mode::FfnOnly | Mode::Full => 1e-5,
    }
}

impl TrainConfig {
    pub fn for_mode(mode: Mode) -> Self {
        TrainConfig {
            learning_rate: default_learning_rate(mode),
            ..Default::default()
        }
    }

    /// Defaults for training a base model from scratch.
    pub fn pretrain() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            batch_size: 8,
            weight_decay: 0.01,
            val_interval_steps: 500,
            ..Default::default()
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            grad_clip_norm: Some(self.grad_clip_norm),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adamw().validate()?;
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be positive"));
        }
        if self.epochs == 0 {
            return Err(config_err!("epochs must be positive"));
        }
        if self.val_interval_steps == 0 {
            return Err(config_err!("val_interval_steps must be at least 1"));
        }
        if self.max_steps == Some(0) {
            return Err(config_err!("max_steps must be positive"));
        }
        Ok(())
    }
}

/// One line of a run log. `val_loss` is present on validation steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub fn log_to_jsonl(log: &[LogEntry]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone)]
pub struct FinetuneRun {
    pub mode: Mode,
    pub mask: ParamMask,
    /// Weights at the step with the lowest validation loss.
    pub best: ModelBundle<f32>,
    pub best_step: usize,
    pub best_val_loss: f64,
    /// Validation loss of the starting model.
    pub initial_val_loss: f64,
    pub log: Vec<LogEntry>,
    pub steps: usize,
}

impl FinetuneRun {
    pub fn validation_entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.log.iter().filter_map(|e| e.val_loss.map(|v| (e.step, v)))
    }
}

/// Number of optimizer steps a run over `n_windows` windows will take.
pub fn planned_steps(n_windows: usize, cfg: &TrainConfig) -> usize {
    let per_epoch = n_windows.div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    cfg.max_steps.map_or(total, |m| m.min(total))
}

struct LoopOutput {
    model: ModelBundle<f32>,
    best: Option<(usize, f64, ModelBundle<f32>)>,
    log: Vec<LogEntry>,
    steps: usize,
}

fn mean_val_loss(model: &ModelBundle<f32>, val: &[Vec<u32>]) -> Result<f64> {
    Ok(mean_loss(model, val)?.0)
}

fn train_loop(
    mut model: ModelBundle<f32>,
    train: Vec<Vec<u32>>,
    val: &[Vec<u32>],
    mask: &ParamMask,
    cfg: &TrainConfig,
    keep_best: bool,
) -> Result<LoopOutput> {
    let adamw = cfg.adamw();
    let total = planned_steps(train.len(), cfg);
    let mut opt = MaskedAdamW::new(mask);
    let mut log = Vec::with_capacity(total);
    let mut best: Option<(usize, f64, ModelBundle<f32>)> = None;
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        let batches = Batches::new(train.clone(), cfg.batch_size, cfg.seed.wrapping_add(epoch as u64))?;
        for batch in batches {
            if step == total {
                break 'epochs;
            }
            step += 1;
            let lg = loss_and_grads(&model, &batch).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("step {step}: {msg}")),
                other => other,
            })?;
            opt.step(&mut model.params, &lg.grads, &adamw)
                .map_err(|e| Error::NonFinite(format!("step {step}: {e}")))?;
            let val_loss = if step % cfg.val_interval_steps == 0 || step == total {
                let v = mean_val_loss(&model, val)?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("step {step}: validation loss {v}")));
                }
                log::info!("step {step}/{total}: train {:.4} val {v:.4}", lg.loss);
                if keep_best && best.as_ref().is_none_or(|b| v < b.1) {
                    best = Some((step, v, model.clone()));
                }
                Some(v)
            } else {
                None
            };
            log.push(LogEntry {
                step,
                train_loss: lg.loss,
                val_loss,
            });
        }
    }
    Ok(LoopOutput {
        model,
        best,
        log,
        steps: step,
    })
}

fn split_windows(corpus: &LanguageCorpus, split: Split, seq_len: usize) -> Result<Vec<Vec<u32>>> {
    let w = windows(corpus.split(split), seq_len);
    if w.is_empty() {
        return Err(data_err!("{}: {} split is empty", corpus.lang_id, split.name()));
    }
    Ok(w)
}

/// Fine-tunes the masked entries of `model` on one language for the
/// configured epochs, validating every `val_interval_steps` and at the last
/// step, and returns the best-validated weights.
pub fn finetune(model: &ModelBundle<f32>, corpus: &LanguageCorpus, mask: &ParamMask, cfg: &TrainConfig) -> Result<FinetuneRun> {
    cfg.validate()?;
    if mask.ids != model.params.ids() || mask.total_count() != model.params.n_entries() {
        return Err(Error::Consistency("mask does not match the model shape".into()));
    }
    let seq_len = model.config.max_seq_len;
    let train = split_windows(corpus, Split::Train, seq_len)?;
    let val = split_windows(corpus, Split::Validation, seq_len)?;
    let initial_val_loss = mean_val_loss(model, &val)?;
    let out = train_loop(model.clone(), train, &val, mask, cfg, true)?;
    let (best_step, best_val_loss, best) = out.best.expect("the final step always validates");
    Ok(FinetuneRun {
        mode: mask.mode,
        mask: mask.clone(),
        best,
        best_step,
        best_val_loss,
        initial_val_loss,
        log: out.log,
        steps: out.steps,
    })
}

#[derive(Debug, Clone)]
pub struct PretrainRun {
    pub model: ModelBundle<f32>,
    pub log: Vec<LogEntry>,
    pub steps: usize,
}

/// Trains every weight of `model` on the pooled train splits of `corpora`,
/// validating on their pooled validation splits. Returns the final weights.
pub fn pretrain(model: ModelBundle<f32>, corpora: &[LanguageCorpus], cfg: &TrainConfig) -> Result<PretrainRun> {
    cfg.validate()?;
    if corpora.is_empty() {
        return Err(data_err!("no pretraining languages"));
    }
    let seq_len = model.config.max_seq_len;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in corpora {
        train.extend(split_windows(c, Split::Train, seq_len)?);
        val.extend(split_windows(c, Split::Validation, seq_len)?);
    }
    let mask = ParamMask::uniform(&model.config, Mode::Full, true);
    let out = train_loop(model, train, &val, &mask, cfg, false)?;
    Ok(PretrainRun {
        model: out.model,
        log: out.log,
        steps: out.steps,
    })
}

/// `exp` of the mean next-token cross-entropy over the split, cut into
/// `max_seq_len` windows.
pub fn perplexity(model: &ModelBundle<f32>, corpus: &LanguageCorpus, split: Split) -> Result<f64> {
    let w = split_windows(corpus, split, model.config.max_seq_len)?;
    Ok(mean_loss(model, &w)?.0.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> ModelBundle<f32> {
        ModelBundle::init(ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 8,
            vocab_size: 257,
            max_seq_len: 10,
            seed: 3,
        })
        .unwrap()
    }

    fn corpus(train_bytes: usize) -> LanguageCorpus {
        LanguageCorpus {
            lang_id: "xx".into(),
            train: vec![(0..train_bytes).map(|i| b'a' + (i % 7) as u8).collect()],
            validation: vec![b"abcdefgabcdefg".to_vec()],
            probe: vec![b"abc".to_vec()],
            parallel: None,
        }
    }

    #[test]
    fn uniform_model_has_vocab_perplexity() {
        let mut m = tiny();
        m.params.unembedding.data.fill(0.0);
        let p = perplexity(&m, &corpus(100), Split::Validation).unwrap();
        assert!((p - 257.0).abs() < 1e-9, "{p}");
        assert_eq!(p, perplexity(&m, &corpus(100), Split::Validation).unwrap());
    }

    #[test]
    fn empty_split_is_an_error() {
        let mut c = corpus(100);
        c.validation.clear();
        assert!(perplexity(&tiny(), &c, Split::Validation).is_err());
        let mask = ParamMask::uniform(&tiny().config, Mode::Full, true);
        assert!(finetune(&tiny(), &c, &mask, &TrainConfig::default()).is_err());
    }

    #[test]
    fn validation_schedule() {
        let m = tiny();
        let mask = ParamMask::uniform(&m.config, Mode::Full, true);
        // 100 bytes -> 10 windows -> 5 steps at batch 2
        let run = finetune(&m, &corpus(100), &mask, &TrainConfig::default()).unwrap();
        assert_eq!(run.steps, 5);
        assert_eq!(run.validation_entries().map(|e| e.0).collect::<Vec<_>>(), vec![5]);

        let cfg = TrainConfig {
            val_interval_steps: 2,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let run = finetune(&m, &corpus(100), &mask, &cfg).unwrap();
        let vals: Vec<_> = run.validation_entries().collect();
        assert_eq!(vals.iter().map(|e| e.0).collect::<Vec<_>>(), vec![2, 4, 5]);
        let min = vals.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        assert_eq!(run.best_val_loss, min);
        assert_eq!(vals.iter().find(|e| e.1 == min).unwrap().0, run.best_step);
        assert_eq!(run.log.len(), 5);
    }

    #[test]
    fn thousand_batches_validate_at_500_and_1000() {
        let m = tiny();
        let mask = ParamMask::uniform(&m.config, Mode::Target, false);
        let run = finetune(&m, &corpus(20_000), &mask, &TrainConfig::default()).unwrap();
        assert_eq!(run.steps, 1000);
        assert_eq!(run.validation_entries().map(|e| e.0).collect::<Vec<_>>(), vec![500, 1000]);
        // nothing trainable: the model is unchanged
        assert_eq!(run.best, m);
    }

    #[test]
    fn max_steps_truncates() {
        let m = tiny();
        let mask = ParamMask::uniform(&m.config, Mode::Full, true);
        let cfg = TrainConfig {
            max_steps: Some(3),
            epochs: 2,
            ..Default::default()
        };
        let run = finetune(&m, &corpus(100), &mask, &cfg).unwrap();
        assert_eq!(run.steps, 3);
        assert_eq!(planned_steps(10, &cfg), 3);
        assert_eq!(planned_steps(10, &TrainConfig { epochs: 2, ..Default::default() }), 10);
    }

    #[test]
    fn mode_learning_rates() {
        assert_eq!(TrainConfig::for_mode(Mode::Full).learning_rate, 1e-5);
        assert_eq!(TrainConfig::for_mode(Mode::Target).learning_rate, 1e-4);
        let d = TrainConfig::default();
        assert_eq!((d.batch_size, d.weight_decay, d.epochs, d.val_interval_steps), (2, 0.01, 1, 500));
    }

    #[test]
    fn jsonl_log_format() {
        let log = [
            LogEntry { step: 1, train_loss: 2.5, val_loss: None },
            LogEntry { step: 2, train_loss: 2.0, val_loss: Some(1.5) },
        ];
        assert_eq!(
            log_to_jsonl(&log),
            "{\"step\":1,\"train_loss\":2.5,\"val_loss\":null}\n{\"step\":2,\"train_loss\":2.0,\"val_loss\":1.5}\n"
        );
    }
}
