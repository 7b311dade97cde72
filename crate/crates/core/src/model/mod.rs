//! STFormer reconstruction network.

pub mod attention;
pub mod block;
pub mod config;
pub mod net;
pub mod params;
pub mod window;

pub use attention::{slw_msa, tw_msa, AttnProbe};
pub use block::{grff, stformer_block, BlockProbes};
pub use config::{ColorMode, ModelConfig, Preset, LEAKY_SLOPE, NORM_EPS};
pub use net::{
    bind_params, estimate_to_input, estimates_to_batch, forward_on_tape, output_dims,
    output_to_video, reconstruct, token_field_dims, token_gen, video_reconstruct, ForwardTrace,
};
pub use params::{
    allocate_zeros, build_model, parameter_count, AttnParams, BlockParams, Conv3dParams,
    GrffParams, ModelParams, NormParams, ResUnitParams, VideoRecParams,
};
pub use window::{
    shift_attention_mask, spatial_relative_index, temporal_relative_index, window_partition,
    window_reverse, WindowGeometry, SHIFT_MASK_PENALTY,
};
