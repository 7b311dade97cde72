//! Shared fixtures for the kernel benchmarks.

use stformer_core::model::{build_model, ModelConfig, ModelParams};
use stformer_core::rng;
use stformer_core::Tensor;

/// Small-but-realistic config used across benchmark groups.
pub fn bench_config() -> ModelConfig {
    ModelConfig {
        channels: 32,
        blocks_per_stage: vec![2],
        heads: 4,
        window: (7, 7),
        compression: 8,
        in_channels: 1,
        out_channels: 1,
    }
}

pub fn bench_params(config: &ModelConfig) -> ModelParams<Tensor<f32>> {
    build_model(config, 42).expect("valid config")
}

pub fn random_field(dims: &[usize], seed: u64) -> Tensor<f32> {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(dims, |_| rng::sample_uniform(&mut r, -1.0, 1.0) as f32)
}
