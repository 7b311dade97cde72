//! STFormer block: parallel spatial/temporal attention branches plus the
//! grouping-resnet feed-forward network.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::attention::{slw_msa, tw_msa, AttnProbe};
use crate::model::config::{ModelConfig, LEAKY_SLOPE, NORM_EPS};
use crate::model::params::{BlockParams, GrffParams, ResUnitParams};
use crate::tensor::Element;

/// Residual unit: x + conv(act(conv(x))), 3x3x3 kernels, stride 1, pad 1.
fn res_unit<T: Element>(tape: &mut Tape<T>, x: NodeId, p: &ResUnitParams<NodeId>) -> Result<NodeId> {
    let h = tape.conv3d(x, p.conv1.weight, Some(p.conv1.bias), [1, 1, 1], [1, 1, 1])?;
    let a = tape.leaky_relu(h, LEAKY_SLOPE)?;
    let y = tape.conv3d(a, p.conv2.weight, Some(p.conv2.bias), [1, 1, 1], [1, 1, 1])?;
    tape.add(x, y)
}

/// Grouping-resnet feed-forward: split channels in two, feed the first half
/// through one residual unit, add its output to the second half, feed that
/// through the other unit, concatenate both unit outputs.
pub fn grff<T: Element>(tape: &mut Tape<T>, field: NodeId, p: &GrffParams<NodeId>) -> Result<NodeId> {
    let dims = tape.dims(field).to_vec();
    let c = *dims.last().ok_or_else(|| Error::shape("grff", "scalar input".to_string()))?;
    if c % 2 != 0 {
        return Err(Error::shape("grff", format!("channel dim must be even, got {c}")));
    }
    let rank = dims.len();
    let mut start = vec![0usize; rank];
    let mut half_dims = dims.clone();
    half_dims[rank - 1] = c / 2;
    let first = tape.slice(field, &start, &half_dims)?;
    start[rank - 1] = c / 2;
    let second = tape.slice(field, &start, &half_dims)?;

    let y1 = res_unit(tape, first, &p.res1)?;
    let mid = tape.add(second, y1)?;
    let y2 = res_unit(tape, mid, &p.res2)?;
    tape.concat(rank - 1, &[y1, y2])
}

/// Attention probabilities recorded while running a block.
#[derive(Clone, Copy, Debug)]
pub struct BlockProbes {
    pub ssa: AttnProbe,
    pub tsa: AttnProbe,
}

/// One STFormer block. Both attention branches consume the same normalized
/// input; their outputs join the residual stream together, then the GRFF
/// runs on a second normalized view:
///   x_st = x + SLW-MSA(Norm(x)) + TW-MSA(Norm(x))
///   out  = x_st + GRFF(Norm(x_st))
pub fn stformer_block<T: Element>(
    tape: &mut Tape<T>,
    field: NodeId,
    p: &BlockParams<NodeId>,
    config: &ModelConfig,
    shifted: bool,
) -> Result<(NodeId, BlockProbes)> {
    let normed = tape.layer_norm(field, p.norm1.gamma, p.norm1.beta, NORM_EPS)?;
    let (spatial, ssa_probe) = slw_msa(tape, normed, &p.ssa, config, shifted)?;
    let (temporal, tsa_probe) = tw_msa(tape, normed, &p.tsa, config)?;
    let mixed = tape.add(spatial, temporal)?;
    let x_st = tape.add(field, mixed)?;
    let normed2 = tape.layer_norm(x_st, p.norm2.gamma, p.norm2.beta, NORM_EPS)?;
    let fused = grff(tape, normed2, &p.grff)?;
    let out = tape.add(x_st, fused)?;
    Ok((out, BlockProbes { ssa: ssa_probe, tsa: tsa_probe }))
}
