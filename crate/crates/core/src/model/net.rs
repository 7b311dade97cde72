//! The full STFormer network: token generation, the stacked blocks, video
//! reconstruction, and the measurement-to-video inference path.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::block::{stformer_block, BlockProbes};
use crate::model::config::{ColorMode, ModelConfig, LEAKY_SLOPE};
use crate::model::params::{ModelParams, VideoRecParams};
use crate::sci::{init_estimate, MaskCube, Measurement, VideoCube};
use crate::tensor::{Element, Tensor};
use crate::autodiff::kernels as kn;

/// Token field extents `[D, H, W, C]` produced for an `n_x × n_y` scene.
pub fn token_field_dims(config: &ModelConfig, n_x: usize, n_y: usize) -> Result<[usize; 4]> {
    if n_x % 2 != 0 || n_y % 2 != 0 {
        return Err(Error::shape(
            "token_field_dims",
            format!("scene extents must be even, got {n_x}x{n_y}"),
        ));
    }
    Ok([config.compression, n_x / 2, n_y / 2, config.channels])
}

/// Output video extents `[n_x, n_y, OC, B]` for an `n_x × n_y` scene.
pub fn output_dims(config: &ModelConfig, n_x: usize, n_y: usize) -> Result<[usize; 4]> {
    token_field_dims(config, n_x, n_y)?;
    Ok([n_x, n_y, config.out_channels, config.compression])
}

/// Convert an initialization estimate `[n_x', n_y', IC, B]` into the network
/// input layout `[1, D, H, W, IC]`.
pub fn estimate_to_input<T: Element>(estimate: &VideoCube<T>) -> Result<Tensor<T>> {
    let dims = estimate.frames.dims();
    let (h, w, ic, b) = (dims[0], dims[1], dims[2], dims[3]);
    let (perm_dims, data) = kn::permute(dims, estimate.frames.as_slice(), &[3, 0, 1, 2]);
    debug_assert_eq!(perm_dims, vec![b, h, w, ic]);
    Tensor::from_vec(&[1, b, h, w, ic], data)
}

/// Stack several estimates into one batched input `[Nb, D, H, W, IC]`.
pub fn estimates_to_batch<T: Element>(estimates: &[VideoCube<T>]) -> Result<Tensor<T>> {
    if estimates.is_empty() {
        return Err(Error::contract("estimates_to_batch", "empty batch"));
    }
    let first = estimate_to_input(&estimates[0])?;
    let item_dims = first.dims().to_vec();
    let mut data = first.into_vec();
    for e in &estimates[1..] {
        let t = estimate_to_input(e)?;
        if t.dims() != &item_dims[..] {
            return Err(Error::shape("estimates_to_batch", "estimates have differing extents".to_string()));
        }
        data.extend_from_slice(t.as_slice());
    }
    let mut dims = item_dims;
    dims[0] = estimates.len();
    Tensor::from_vec(&dims, data)
}

/// Convert one batch element of the network output `[Nb, D, n_x, n_y, OC]`
/// back to a `[n_x, n_y, OC, B]` video cube.
pub fn output_to_video<T: Element>(out: &Tensor<T>, batch_index: usize) -> Result<VideoCube<T>> {
    let dims = out.dims();
    if dims.len() != 5 || batch_index >= dims[0] {
        return Err(Error::shape("output_to_video", format!("bad output dims {dims:?}")));
    }
    let (d, h, w, oc) = (dims[1], dims[2], dims[3], dims[4]);
    let item = dims[1..].iter().product::<usize>();
    let slice = &out.as_slice()[batch_index * item..(batch_index + 1) * item];
    let (perm_dims, data) = kn::permute(&[d, h, w, oc], slice, &[1, 2, 3, 0]);
    debug_assert_eq!(perm_dims, vec![h, w, oc, d]);
    VideoCube::new(Tensor::from_vec(&[h, w, oc, d], data)?)
}

/// Token generation: five 3x3x3 convolutions, LeakyReLU after each. The
/// first convolution strides (1,2,2) on grayscale input; the color path
/// enters at Bayer half resolution and keeps stride 1.
pub fn token_gen<T: Element>(
    tape: &mut Tape<T>,
    input: NodeId,
    params: &ModelParams<NodeId>,
    config: &ModelConfig,
) -> Result<NodeId> {
    let dims = tape.dims(input).to_vec();
    if dims.len() != 5 || dims[4] != config.in_channels {
        return Err(Error::shape(
            "token_gen",
            format!("expected [Nb, D, H, W, {}], got {dims:?}", config.in_channels),
        ));
    }
    if config.color_mode() == ColorMode::Gray && (dims[2] % 2 != 0 || dims[3] % 2 != 0) {
        return Err(Error::shape(
            "token_gen",
            format!("grayscale input extents must be even, got {}x{}", dims[2], dims[3]),
        ));
    }
    let mut x = input;
    for (i, conv) in params.token_gen.iter().enumerate() {
        let stride = if i == 0 { config.token_gen_first_stride() } else { [1, 1, 1] };
        x = tape.conv3d(x, conv.weight, Some(conv.bias), stride, [1, 1, 1])?;
        x = tape.leaky_relu(x, LEAKY_SLOPE)?;
    }
    Ok(x)
}

/// Video reconstruction: transposed-conv 2x spatial upsampling, then two
/// convolutions narrowing to OC channels; the last layer is linear.
pub fn video_reconstruct<T: Element>(
    tape: &mut Tape<T>,
    tokens: NodeId,
    p: &VideoRecParams<NodeId>,
) -> Result<NodeId> {
    let up = tape.conv3d_transposed(tokens, p.upsample.weight, Some(p.upsample.bias), [1, 2, 2], [0, 1, 1])?;
    let a = tape.leaky_relu(up, LEAKY_SLOPE)?;
    let mid = tape.conv3d(a, p.conv1.weight, Some(p.conv1.bias), [1, 1, 1], [1, 1, 1])?;
    let b = tape.leaky_relu(mid, LEAKY_SLOPE)?;
    tape.conv3d(b, p.conv2.weight, Some(p.conv2.bias), [1, 1, 1], [1, 1, 1])
}

/// Attention probabilities recorded for every block of a forward pass.
pub struct ForwardTrace {
    pub blocks: Vec<BlockProbes>,
}

/// Run the network on a bound tape: token generation, Z blocks alternating
/// unshifted/shifted windows, video reconstruction.
pub fn forward_on_tape<T: Element>(
    tape: &mut Tape<T>,
    input: NodeId,
    params: &ModelParams<NodeId>,
    config: &ModelConfig,
) -> Result<(NodeId, ForwardTrace)> {
    let mut field = token_gen(tape, input, params, config)?;
    let mut trace = ForwardTrace { blocks: Vec::with_capacity(params.blocks.len()) };
    for (i, block) in params.blocks.iter().enumerate() {
        let (next, probes) = stformer_block(tape, field, block, config, i % 2 == 1)?;
        field = next;
        trace.blocks.push(probes);
    }
    let video = video_reconstruct(tape, field, &params.video_rec)?;
    Ok((video, trace))
}

/// Bind stored parameters onto a tape as leaves.
pub fn bind_params<T: Element>(
    tape: &mut Tape<T>,
    params: &ModelParams<Tensor<T>>,
    trainable: bool,
) -> ModelParams<NodeId> {
    params.map(&mut |t| tape.leaf(t.clone(), trainable))
}

/// Full inference: initialization estimate from (measurement, masks), one
/// forward pass, output as a video cube. The measurement geometry must agree
/// with the masks; the model accepts any even spatial size but a fixed
/// compression rate.
pub fn reconstruct<T: Element>(
    y: &Measurement<T>,
    m: &MaskCube<T>,
    params: &ModelParams<Tensor<T>>,
    config: &ModelConfig,
) -> Result<VideoCube<T>> {
    config.validate()?;
    if m.frames() != config.compression {
        return Err(Error::Config(format!(
            "mask compression {} does not match the model's compression {}",
            m.frames(),
            config.compression
        )));
    }
    let wants_color = config.color_mode() == ColorMode::Color;
    if wants_color != y.bayer.is_some() {
        return Err(Error::Config(format!(
            "measurement bayer tag {:?} does not match model color mode {:?}",
            y.bayer,
            config.color_mode()
        )));
    }
    let estimate = init_estimate(y, m)?;
    let input = estimate_to_input(&estimate)?;
    let mut tape = Tape::new();
    let input_id = tape.constant(input);
    let bound = bind_params(&mut tape, params, false);
    let (out, _) = forward_on_tape(&mut tape, input_id, &bound, config)?;
    output_to_video(tape.value(out), 0)
}

#[cfg(test)]
mod tests;
