//! Spatial local-window and temporal-window multi-head self-attention.
//!
//! Both branches share the projection weights across windows, add a learnable
//! relative-position bias to the scaled scores and divide by sqrt of the head
//! dim. The temporal branch halves the channel width of Q/K/V.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::AttnParams;
use crate::model::window::{
    shift_attention_mask, spatial_relative_index, temporal_relative_index, window_partition,
    window_reverse, WindowGeometry,
};
use crate::tensor::Element;

/// Handle to the attention probabilities recorded during a forward pass
/// (the exact tensor fed into the value aggregation).
#[derive(Clone, Copy, Debug)]
pub struct AttnProbe {
    pub probs: NodeId,
}

/// Split `[G, tokens, C]` into heads: `[G*heads, tokens, C/heads]`.
fn split_heads<T: Element>(
    tape: &mut Tape<T>,
    x: NodeId,
    groups: usize,
    tokens: usize,
    heads: usize,
    head_dim: usize,
) -> Result<NodeId> {
    let by_head = tape.reshape(x, &[groups, tokens, heads, head_dim])?;
    let swapped = tape.permute(by_head, &[0, 2, 1, 3])?;
    tape.reshape(swapped, &[groups * heads, tokens, head_dim])
}

/// Inverse of [`split_heads`]: `[G*heads, tokens, head_dim]` back to
/// `[G, tokens, heads*head_dim]`.
fn merge_heads<T: Element>(
    tape: &mut Tape<T>,
    x: NodeId,
    groups: usize,
    tokens: usize,
    heads: usize,
    head_dim: usize,
) -> Result<NodeId> {
    let by_head = tape.reshape(x, &[groups, heads, tokens, head_dim])?;
    let swapped = tape.permute(by_head, &[0, 2, 1, 3])?;
    tape.reshape(swapped, &[groups, tokens, heads * head_dim])
}

/// Bias table `[rows, heads]` + index map (len tokens²) -> `[heads, tokens,
/// tokens]` additive bias.
fn position_bias<T: Element>(
    tape: &mut Tape<T>,
    table: NodeId,
    index_map: &[usize],
    tokens: usize,
    heads: usize,
) -> Result<NodeId> {
    let rows = tape.gather_rows(table, index_map)?; // [tokens*tokens, heads]
    let cube = tape.reshape(rows, &[tokens, tokens, heads])?;
    tape.permute(cube, &[2, 0, 1])
}

/// Scaled dot-product attention over `[groups*heads, tokens, head_dim]`
/// Q/K/V with a per-head additive bias and an optional per-window mask
/// (`[windows_per_frame, tokens, tokens]`, broadcast over frames and heads).
#[allow(clippy::too_many_arguments)]
fn attention_core<T: Element>(
    tape: &mut Tape<T>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    bias: NodeId,
    mask: Option<NodeId>,
    groups: usize,
    tokens: usize,
    heads: usize,
    head_dim: usize,
) -> Result<(NodeId, AttnProbe)> {
    let kt = tape.permute(k, &[0, 2, 1])?;
    let raw = tape.matmul(q, kt)?; // [groups*heads, tokens, tokens]
    let scaled = tape.mul_scalar(raw, 1.0 / (head_dim as f64).sqrt())?;
    let grouped = tape.reshape(scaled, &[groups, heads, tokens, tokens])?;
    let mut biased = tape.add(grouped, bias)?;
    if let Some(mask) = mask {
        let masked_dims = tape.dims(mask).to_vec();
        let windows_per_frame = masked_dims[0];
        debug_assert_eq!(groups % windows_per_frame, 0);
        let frames = groups / windows_per_frame;
        let viewed = tape.reshape(biased, &[frames, windows_per_frame, heads, tokens, tokens])?;
        let masked = tape.add(viewed, mask)?;
        biased = tape.reshape(masked, &[groups, heads, tokens, tokens])?;
    }
    let flat = tape.reshape(biased, &[groups * heads, tokens, tokens])?;
    let probs = tape.softmax_lastdim(flat)?;
    let ctx = tape.matmul(probs, v)?;
    Ok((ctx, AttnProbe { probs }))
}

/// Spatial local-window multi-head self-attention over a `[Nb, D, H, W, C]`
/// field. Shifted blocks displace the window grid by the config shift and
/// mask attention across wrapped boundaries.
pub fn slw_msa<T: Element>(
    tape: &mut Tape<T>,
    field: NodeId,
    p: &AttnParams<NodeId>,
    config: &ModelConfig,
    shifted: bool,
) -> Result<(NodeId, AttnProbe)> {
    let dims = tape.dims(field).to_vec();
    if dims.len() != 5 {
        return Err(Error::shape("slw_msa", format!("expected [Nb, D, H, W, C], got {dims:?}")));
    }
    let (nb, d, h, w, c) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
    if c != config.channels || c % config.heads != 0 {
        return Err(Error::Config(format!(
            "field channels {c} incompatible with config (C={}, heads={})",
            config.channels, config.heads
        )));
    }
    let heads = config.heads;
    let head_dim = config.spatial_head_dim();
    let shift = if shifted { config.shift() } else { (0, 0) };
    let geom = WindowGeometry::new(h, w, config.window.0, config.window.1, shift);
    let j = geom.tokens_per_window();

    let windows = window_partition(tape, field, &geom)?; // [L, J, C]
    let l = tape.dims(windows)[0];
    let flat = tape.reshape(windows, &[l * j, c])?;
    let q = tape.matmul(flat, p.wq)?;
    let k = tape.matmul(flat, p.wk)?;
    let v = tape.matmul(flat, p.wv)?;
    let qs = tape.reshape(q, &[l, j, c])?;
    let ks = tape.reshape(k, &[l, j, c])?;
    let vs = tape.reshape(v, &[l, j, c])?;
    let qh = split_heads(tape, qs, l, j, heads, head_dim)?;
    let kh = split_heads(tape, ks, l, j, heads, head_dim)?;
    let vh = split_heads(tape, vs, l, j, heads, head_dim)?;

    let bias = position_bias(tape, p.bias_table, &spatial_relative_index(geom.g_h, geom.g_w), j, heads)?;
    let mask = match shift_attention_mask::<T>(&geom) {
        Some(m) => {
            let (n_w, jj) = (m.dims()[0], m.dims()[1]);
            let viewed = m.reshaped(&[n_w, 1, jj, jj])?;
            Some(tape.constant(viewed))
        }
        None => None,
    };
    let (ctx, probe) = attention_core(tape, qh, kh, vh, bias, mask, l, j, heads, head_dim)?;

    let merged = merge_heads(tape, ctx, l, j, heads, head_dim)?;
    let flat_out = tape.reshape(merged, &[l * j, c])?;
    let projected = tape.matmul(flat_out, p.wp)?;
    let win_out = tape.reshape(projected, &[l, j, c])?;
    let out = window_reverse(tape, win_out, &geom, nb, d)?;
    Ok((out, probe))
}

/// Temporal-window multi-head self-attention: tokens attend only across the
/// D frames at their own spatial site. Q/K/V project C -> C/2.
pub fn tw_msa<T: Element>(
    tape: &mut Tape<T>,
    field: NodeId,
    p: &AttnParams<NodeId>,
    config: &ModelConfig,
) -> Result<(NodeId, AttnProbe)> {
    let dims = tape.dims(field).to_vec();
    if dims.len() != 5 {
        return Err(Error::shape("tw_msa", format!("expected [Nb, D, H, W, C], got {dims:?}")));
    }
    let (nb, d, h, w, c) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
    if c != config.channels {
        return Err(Error::Config(format!("field channels {c} != config C {}", config.channels)));
    }
    if d != config.compression {
        return Err(Error::contract(
            "tw_msa",
            format!(
                "temporal extent {d} does not match the compression rate {} this model was built \
                 for; the temporal bias table is sized at training time",
                config.compression
            ),
        ));
    }
    let heads = config.heads;
    let half = c / 2;
    let head_dim = config.temporal_head_dim();
    let sites = nb * h * w;

    let by_site = tape.permute(field, &[0, 2, 3, 1, 4])?; // [Nb, H, W, D, C]
    let seqs = tape.reshape(by_site, &[sites, d, c])?;
    let flat = tape.reshape(seqs, &[sites * d, c])?;
    let q = tape.matmul(flat, p.wq)?; // [S*D, C/2]
    let k = tape.matmul(flat, p.wk)?;
    let v = tape.matmul(flat, p.wv)?;
    let qs = tape.reshape(q, &[sites, d, half])?;
    let ks = tape.reshape(k, &[sites, d, half])?;
    let vs = tape.reshape(v, &[sites, d, half])?;
    let qh = split_heads(tape, qs, sites, d, heads, head_dim)?;
    let kh = split_heads(tape, ks, sites, d, heads, head_dim)?;
    let vh = split_heads(tape, vs, sites, d, heads, head_dim)?;

    let bias = position_bias(tape, p.bias_table, &temporal_relative_index(d), d, heads)?;
    let (ctx, probe) = attention_core(tape, qh, kh, vh, bias, None, sites, d, heads, head_dim)?;

    let merged = merge_heads(tape, ctx, sites, d, heads, head_dim)?;
    let flat_out = tape.reshape(merged, &[sites * d, half])?;
    let projected = tape.matmul(flat_out, p.wp)?; // [S*D, C]
    let seq_out = tape.reshape(projected, &[nb, h, w, d, c])?;
    tape.permute(seq_out, &[0, 3, 1, 2, 4]).map(|out| (out, probe))
}
