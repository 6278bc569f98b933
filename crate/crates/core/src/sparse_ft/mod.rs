//! Masked fine-tuning: trainability masks, masked AdamW, training loops.

mod mask;
mod optim;
mod train;

pub use mask::{build_mask, neuron_param_count, MaskSummaryRow, Mode, ParamMask};
pub use optim::{adamw_scalar, AdamWConfig, DenseAdamW, MaskedAdamW, StepInfo};
pub use train::{
    default_learning_rate, finetune, log_to_jsonl, perplexity, planned_steps, pretrain, FinetuneRun, LogEntry, PretrainRun,
    TrainConfig,
};
