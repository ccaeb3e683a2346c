//! Fairness-aware vision transformer training from scratch: a tape-based
//! autodiff core, a small ViT with group-routed adaptive attention masks, a
//! score-space distance regularizer, group fairness metrics and gradient
//! attention rollout.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod distance;
pub mod error;
pub mod explain;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use masking::{MaskBank, PartIndex};
pub use metrics::{EvalRecord, FairnessReport};
pub use model::{ModelConfig, Vit};
pub use tensor::{Real, Tape, Tensor, Var};
pub use trainer::{Checkpoint, EpochStats, TrainConfig};
