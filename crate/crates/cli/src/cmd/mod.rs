pub mod analyze;
pub mod eval;
pub mod finetune;
pub mod identify;
pub mod pretrain;
pub mod synth;
