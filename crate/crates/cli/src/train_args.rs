use clap::Args;
use snf_core::TrainConfig;

/// Optimizer and schedule overrides; anything omitted keeps the command's default.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Validate every this many optimizer steps (and at the last step).
    #[arg(long)]
    pub val_interval: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
}

impl TrainArgs {
    pub fn apply(&self, mut cfg: TrainConfig, seed: u64) -> TrainConfig {
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.val_interval {
            cfg.val_interval_steps = v;
        }
        if let Some(v) = self.grad_clip {
            cfg.grad_clip_norm = v;
        }
        if self.max_steps.is_some() {
            cfg.max_steps = self.max_steps;
        }
        cfg.seed = seed;
        cfg
    }
}
