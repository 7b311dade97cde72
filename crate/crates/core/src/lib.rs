//! Video snapshot compressive imaging (SCI) toolkit.
//!
//! A CACTI optical encoder captures B high-speed video frames in a single 2D
//! snapshot: each frame is modulated by a binary mask and the modulated frames
//! are summed on the sensor. This crate simulates that encoder (grayscale and
//! Bayer color), reconstructs the frames with an STFormer network running on a
//! small reverse-mode-differentiable tensor engine, scores reconstructions
//! with PSNR/SSIM, and audits the attention complexity formulas against
//! instrumented multiply-accumulate counts.
//!
//! Modules:
//! - [`tensor`] / [`autodiff`] / [`optim`]: dense N-d tensors, a Wengert tape
//!   for reverse-mode gradients, and Adam.
//! - [`sci`]: mask generation, modulation, temporal integration, the sparse
//!   sensing matrix, the Bayer pathway and the coarse initialization estimate.
//! - [`model`]: the STFormer network (token generation, spatial/temporal
//!   windowed attention blocks, video reconstruction).
//! - [`metrics`]: PSNR and SSIM.
//! - [`flops`]: closed-form attention cost formulas plus measured MAC counts.
//! - [`io`]: the STF1 tensor container and the checkpoint format.
//! - [`pipeline`]: end-to-end encode/train/reconstruct/evaluate workflows.

pub mod autodiff;
pub mod error;
pub mod flops;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod sci;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dtype, Element, Tensor};
