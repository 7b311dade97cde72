//! Closed-form attention complexity and the instrumented MAC audit.
//!
//! Counting convention: one fused multiply-add = 1 MAC. Projections, QKᵀ and
//! attn·V count; softmax, norms, residual adds and position-bias adds do
//! not. Under this convention the closed forms are exact, so the audit
//! demands integer equality with the instrumented kernels whenever H and W
//! are window multiples.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{
    allocate_zeros, bind_params, parameter_count, slw_msa, tw_msa, ColorMode, ModelConfig,
};
use crate::tensor::Tensor;

/// Spatial local-window attention cost: 4HWDC² + 2·G_h·G_w·HWDC.
pub fn flops_slw(h: u64, w: u64, d: u64, c: u64, g_h: u64, g_w: u64) -> u64 {
    4 * h * w * d * c * c + 2 * g_h * g_w * h * w * d * c
}

/// Temporal-window attention cost: 2HWDC² + HWD²C.
pub fn flops_tw(h: u64, w: u64, d: u64, c: u64) -> u64 {
    2 * h * w * d * c * c + h * w * d * d * c
}

/// Combined spatial-temporal attention cost: the sum of the two branches,
/// 6HWDC² + 2·G_h·G_w·HWDC + HWD²C.
pub fn flops_st(h: u64, w: u64, d: u64, c: u64, g_h: u64, g_w: u64) -> u64 {
    6 * h * w * d * c * c + 2 * g_h * g_w * h * w * d * c + h * w * d * d * c
}

/// Global attention cost for comparison: 4HWDC² + 2(HWD)²C.
pub fn flops_gmsa(h: u64, w: u64, d: u64, c: u64) -> u64 {
    4 * h * w * d * c * c + 2 * (h * w * d) * (h * w * d) * c
}

/// Field/window extents an audit run is evaluated at.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct AuditDims {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub c: usize,
    pub g_h: usize,
    pub g_w: usize,
    pub heads: usize,
}

impl AuditDims {
    fn validate(&self) -> Result<()> {
        let all = [self.h, self.w, self.d, self.c, self.g_h, self.g_w, self.heads];
        if all.iter().any(|&v| v == 0) {
            return Err(Error::contract("count_macs", format!("degenerate dims {self:?}")));
        }
        if self.c % (2 * self.heads) != 0 {
            return Err(Error::contract(
                "count_macs",
                format!("c ({}) must be divisible by 2*heads ({})", self.c, 2 * self.heads),
            ));
        }
        Ok(())
    }

    fn config(&self) -> ModelConfig {
        ModelConfig {
            channels: self.c,
            blocks_per_stage: vec![1],
            heads: self.heads,
            window: (self.g_h, self.g_w),
            compression: self.d,
            in_channels: 1,
            out_channels: 1,
        }
    }
}

/// Analytic per-term breakdown of the attention formulas.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct AnalyticMacs {
    pub slw_projections: u64,
    pub slw_attention: u64,
    pub slw_total: u64,
    pub tw_projections: u64,
    pub tw_attention: u64,
    pub tw_total: u64,
    pub st_total: u64,
    pub gmsa_total: u64,
}

/// MACs measured by running the instrumented attention kernels.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct MeasuredMacs {
    pub slw_msa: u64,
    pub tw_msa: u64,
}

/// Analytic and measured costs for one dim tuple.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CostBreakdown {
    pub dims: AuditDims,
    pub analytic: AnalyticMacs,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured: Option<MeasuredMacs>,
}

pub fn analytic(dims: &AuditDims) -> AnalyticMacs {
    let (h, w, d, c) = (dims.h as u64, dims.w as u64, dims.d as u64, dims.c as u64);
    let (g_h, g_w) = (dims.g_h as u64, dims.g_w as u64);
    AnalyticMacs {
        slw_projections: 4 * h * w * d * c * c,
        slw_attention: 2 * g_h * g_w * h * w * d * c,
        slw_total: flops_slw(h, w, d, c, g_h, g_w),
        tw_projections: 2 * h * w * d * c * c,
        tw_attention: h * w * d * d * c,
        tw_total: flops_tw(h, w, d, c),
        st_total: flops_st(h, w, d, c, g_h, g_w),
        gmsa_total: flops_gmsa(h, w, d, c),
    }
}

/// Run the real SSA kernel on a counting tape and report its forward MACs.
pub fn count_macs_slw(dims: &AuditDims) -> Result<u64> {
    dims.validate()?;
    let config = dims.config();
    let params = allocate_zeros::<f32>(&config)?;
    let mut tape = Tape::new();
    let field = tape.constant(Tensor::zeros(&[1, dims.d, dims.h, dims.w, dims.c]));
    let bound = bind_params(&mut tape, &params, false);
    let before = tape.macs();
    slw_msa(&mut tape, field, &bound.blocks[0].ssa, &config, false)?;
    Ok(tape.macs() - before)
}

/// Run the real TSA kernel on a counting tape and report its forward MACs.
pub fn count_macs_tw(dims: &AuditDims) -> Result<u64> {
    dims.validate()?;
    let config = dims.config();
    let params = allocate_zeros::<f32>(&config)?;
    let mut tape = Tape::new();
    let field = tape.constant(Tensor::zeros(&[1, dims.d, dims.h, dims.w, dims.c]));
    let bound = bind_params(&mut tape, &params, false);
    let before = tape.macs();
    tw_msa(&mut tape, field, &bound.blocks[0].tsa, &config)?;
    Ok(tape.macs() - before)
}

/// Full audit of one dim tuple: formulas plus (optionally) instrumented runs.
pub fn audit(dims: &AuditDims, measure: bool) -> Result<CostBreakdown> {
    dims.validate()?;
    let analytic = analytic(dims);
    let measured = if measure {
        Some(MeasuredMacs { slw_msa: count_macs_slw(dims)?, tw_msa: count_macs_tw(dims)? })
    } else {
        None
    };
    Ok(CostBreakdown { dims: *dims, analytic, measured })
}

/// Whole-network analytic cost for one forward pass at scene size
/// `n_x × n_y` (MACs, convolutions included).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ModelCost {
    pub parameters: u64,
    pub token_gen_macs: u64,
    pub attention_macs: u64,
    pub grff_macs: u64,
    pub video_rec_macs: u64,
    pub total_macs: u64,
}

/// Analytic whole-model MACs from the config and scene geometry.
pub fn model_cost(config: &ModelConfig, n_x: usize, n_y: usize) -> Result<ModelCost> {
    config.validate()?;
    if n_x % 2 != 0 || n_y % 2 != 0 {
        return Err(Error::shape("model_cost", format!("scene extents must be even, got {n_x}x{n_y}")));
    }
    let c = config.channels as u64;
    let d = config.compression as u64;
    let (h, w) = ((n_x / 2) as u64, (n_y / 2) as u64);
    let (g_h, g_w) = (config.window.0 as u64, config.window.1 as u64);

    // Token generation: conv i maps schedule[i] -> schedule[i+1] channels.
    // The grayscale path runs conv 1 at full resolution (before the stride-2
    // output); the color path runs everything at half resolution.
    let schedule = config.token_gen_channels();
    let mut token_gen_macs = 0u64;
    for i in 0..5 {
        let (cin, cout) = (schedule[i] as u64, schedule[i + 1] as u64);
        let out_voxels = d * h * w; // every conv emits the token grid
        token_gen_macs += out_voxels * cout * 27 * cin;
    }
    let _ = ColorMode::Gray; // both paths emit the same token grid

    let blocks = config.total_blocks() as u64;
    let attention_macs = blocks * flops_st(h, w, d, c, g_h, g_w);
    // GRFF: four 3x3x3 convs at C/2 channels per block.
    let grff_macs = blocks * 4 * (d * h * w) * (c / 2) * 27 * (c / 2);

    // Video reconstruction: transposed conv (1,4,4) C->C counted over its
    // input voxels, then two convs at full resolution.
    let up_macs = (d * h * w) * c * 16 * c;
    let full_voxels = d * (2 * h) * (2 * w);
    let conv1_macs = full_voxels * (c / 2) * 27 * c;
    let conv2_macs = full_voxels * (config.out_channels as u64) * 27 * (c / 2);
    let video_rec_macs = up_macs + conv1_macs + conv2_macs;

    let total_macs = token_gen_macs + attention_macs + grff_macs + video_rec_macs;
    Ok(ModelCost {
        parameters: parameter_count(config) as u64,
        token_gen_macs,
        attention_macs,
        grff_macs,
        video_rec_macs,
        total_macs,
    })
}
