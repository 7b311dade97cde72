//! STFormer hyper-parameters and presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation slope used after every convolution in the network.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Layer-norm epsilon.
pub const NORM_EPS: f64 = 1e-5;

/// Model size presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    S,
    B,
    L,
}

/// Reconstruction task: grayscale (IC=1, OC=1) or Bayer color (IC=4, OC=3).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    Gray,
    Color,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Token feature channels C.
    pub channels: usize,
    /// Blocks per stage; the stack is flat (no downsampling between stages).
    pub blocks_per_stage: Vec<usize>,
    /// Attention heads N (shared by both branches).
    pub heads: usize,
    /// Spatial window (G_h, G_w); the temporal window depth is fixed at 1 for
    /// the spatial branch.
    pub window: (usize, usize),
    /// Compression rate B: frames per snapshot, also the temporal token
    /// extent D.
    pub compression: usize,
    /// Network input channels IC (1 grayscale estimate, 4 Bayer phases).
    pub in_channels: usize,
    /// Reconstruction output channels OC (1 grayscale, 3 RGB).
    pub out_channels: usize,
}

impl ModelConfig {
    pub fn preset(preset: Preset, color: ColorMode, compression: usize) -> Self {
        let (channels, blocks) = match preset {
            Preset::S => (64, vec![2, 2, 2, 2]),
            Preset::B => (256, vec![2, 2, 2, 2]),
            Preset::L => (256, vec![4, 4, 4, 4]),
        };
        let (ic, oc) = match color {
            ColorMode::Gray => (1, 1),
            ColorMode::Color => (4, 3),
        };
        ModelConfig {
            channels,
            blocks_per_stage: blocks,
            heads: 4,
            window: (7, 7),
            compression,
            in_channels: ic,
            out_channels: oc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.compression == 0 {
            return Err(Error::Config("channels, heads and compression must be >= 1".into()));
        }
        if self.channels % (2 * self.heads) != 0 {
            return Err(Error::Config(format!(
                "channels ({}) must be divisible by 2*heads ({})",
                self.channels,
                2 * self.heads
            )));
        }
        if self.channels % 4 != 0 {
            return Err(Error::Config(format!("channels ({}) must be divisible by 4", self.channels)));
        }
        if self.window.0 == 0 || self.window.1 == 0 {
            return Err(Error::Config("window extents must be >= 1".into()));
        }
        if self.blocks_per_stage.is_empty() || self.blocks_per_stage.iter().all(|&b| b == 0) {
            return Err(Error::Config("at least one block is required".into()));
        }
        match (self.in_channels, self.out_channels) {
            (1, 1) | (4, 3) => {}
            other => {
                return Err(Error::Config(format!(
                    "unsupported channel pairing IC={}, OC={} (grayscale 1/1 or color 4/3)",
                    other.0, other.1
                )));
            }
        }
        Ok(())
    }

    /// Total number of STFormer blocks Z.
    pub fn total_blocks(&self) -> usize {
        self.blocks_per_stage.iter().sum()
    }

    pub fn color_mode(&self) -> ColorMode {
        if self.in_channels == 4 {
            ColorMode::Color
        } else {
            ColorMode::Gray
        }
    }

    /// Shift used by odd-indexed (shifted) blocks.
    pub fn shift(&self) -> (usize, usize) {
        (self.window.0 / 2, self.window.1 / 2)
    }

    /// Channel schedule of the five token-generation convolutions.
    pub fn token_gen_channels(&self) -> [usize; 6] {
        let c = self.channels;
        [self.in_channels, c / 4, c / 4, c / 2, c / 2, c]
    }

    /// Spatial stride of the first token-generation convolution: grayscale
    /// input is full resolution and downsamples once; the color path already
    /// enters at half resolution via the Bayer phase split.
    pub fn token_gen_first_stride(&self) -> [usize; 3] {
        match self.color_mode() {
            ColorMode::Gray => [1, 2, 2],
            ColorMode::Color => [1, 1, 1],
        }
    }

    /// Temporal head dim of the spatial branch, C/N.
    pub fn spatial_head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Head dim of the (channel-halved) temporal branch, C/(2N).
    pub fn temporal_head_dim(&self) -> usize {
        self.channels / (2 * self.heads)
    }
}
