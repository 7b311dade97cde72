//! End-to-end workflows: encoding, training, reconstruction, evaluation.

pub mod config;
pub mod data;
pub mod train;

pub use config::{AugmentConfig, NetworkSpec, StageConfig, TrainConfig};
pub use data::{load_dataset, synthetic_clip, Clip};
pub use train::{encode_video, stage_mask_seed, train, RunManifest};
