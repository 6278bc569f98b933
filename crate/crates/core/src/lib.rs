//! Identification of language-specific FFN neurons by activation-probability
//! entropy, and fine-tuning restricted to those neurons' weights.

pub mod analysis;
pub mod error;
pub mod corpus;
pub mod lape;
pub mod model;
pub mod sparse_ft;

pub use error::{Error, Result};
pub use lape::short_hash;
pub use model::{ModelBundle, ModelConfig, ParamId, ParamKind, Params, Scalar, Tensor};
pub use sparse_ft::{Mode, ParamMask, TrainConfig};
