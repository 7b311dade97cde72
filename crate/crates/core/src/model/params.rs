//! Learnable parameter containers.
//!
//! Every container is generic over its cell type `P`: `Tensor<T>` for stored
//! weights, `NodeId` once bound onto a tape. `map` and the `for_each` walkers
//! share one traversal order (struct declaration order), which fixes the
//! optimizer slot layout and the checkpoint manifest order.

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::rng;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug)]
pub struct Conv3dParams<P> {
    pub weight: P,
    pub bias: P,
}

#[derive(Clone, Debug)]
pub struct NormParams<P> {
    pub gamma: P,
    pub beta: P,
}

/// Projections and the relative-position bias table of one attention branch.
/// Spatial branch: wq/wk/wv/wp are C×C and the table covers
/// (2G_h−1)(2G_w−1) spatial offsets. Temporal branch: wq/wk/wv are C×C/2,
/// wp is C/2×C and the table covers 2D−1 temporal offsets. Tables store one
/// column per head.
#[derive(Clone, Debug)]
pub struct AttnParams<P> {
    pub wq: P,
    pub wk: P,
    pub wv: P,
    pub wp: P,
    pub bias_table: P,
}

#[derive(Clone, Debug)]
pub struct ResUnitParams<P> {
    pub conv1: Conv3dParams<P>,
    pub conv2: Conv3dParams<P>,
}

#[derive(Clone, Debug)]
pub struct GrffParams<P> {
    pub res1: ResUnitParams<P>,
    pub res2: ResUnitParams<P>,
}

#[derive(Clone, Debug)]
pub struct BlockParams<P> {
    pub norm1: NormParams<P>,
    pub ssa: AttnParams<P>,
    pub tsa: AttnParams<P>,
    pub norm2: NormParams<P>,
    pub grff: GrffParams<P>,
}

#[derive(Clone, Debug)]
pub struct VideoRecParams<P> {
    pub upsample: Conv3dParams<P>,
    pub conv1: Conv3dParams<P>,
    pub conv2: Conv3dParams<P>,
}

#[derive(Clone, Debug)]
pub struct ModelParams<P> {
    pub token_gen: Vec<Conv3dParams<P>>,
    pub blocks: Vec<BlockParams<P>>,
    pub video_rec: VideoRecParams<P>,
}

impl<P> Conv3dParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Conv3dParams<Q> {
        Conv3dParams { weight: f(&self.weight), bias: f(&self.bias) }
    }
    fn for_each<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<P> NormParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> NormParams<Q> {
        NormParams { gamma: f(&self.gamma), beta: f(&self.beta) }
    }
    fn for_each<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        f(format!("{prefix}.gamma"), &self.gamma);
        f(format!("{prefix}.beta"), &self.beta);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

impl<P> AttnParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> AttnParams<Q> {
        AttnParams {
            wq: f(&self.wq),
            wk: f(&self.wk),
            wv: f(&self.wv),
            wp: f(&self.wp),
            bias_table: f(&self.bias_table),
        }
    }
    fn for_each<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        f(format!("{prefix}.wq"), &self.wq);
        f(format!("{prefix}.wk"), &self.wk);
        f(format!("{prefix}.wv"), &self.wv);
        f(format!("{prefix}.wp"), &self.wp);
        f(format!("{prefix}.bias_table"), &self.bias_table);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        f(format!("{prefix}.wq"), &mut self.wq);
        f(format!("{prefix}.wk"), &mut self.wk);
        f(format!("{prefix}.wv"), &mut self.wv);
        f(format!("{prefix}.wp"), &mut self.wp);
        f(format!("{prefix}.bias_table"), &mut self.bias_table);
    }
}

impl<P> ResUnitParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ResUnitParams<Q> {
        ResUnitParams { conv1: self.conv1.map(f), conv2: self.conv2.map(f) }
    }
    fn for_each<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        self.conv1.for_each(&format!("{prefix}.conv1"), f);
        self.conv2.for_each(&format!("{prefix}.conv2"), f);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        self.conv1.for_each_mut(&format!("{prefix}.conv1"), f);
        self.conv2.for_each_mut(&format!("{prefix}.conv2"), f);
    }
}

impl<P> GrffParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> GrffParams<Q> {
        GrffParams { res1: self.res1.map(f), res2: self.res2.map(f) }
    }
    fn for_each<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        self.res1.for_each(&format!("{prefix}.res1"), f);
        self.res2.for_each(&format!("{prefix}.res2"), f);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        self.res1.for_each_mut(&format!("{prefix}.res1"), f);
        self.res2.for_each_mut(&format!("{prefix}.res2"), f);
    }
}

impl<P> BlockParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> BlockParams<Q> {
        BlockParams {
            norm1: self.norm1.map(f),
            ssa: self.ssa.map(f),
            tsa: self.tsa.map(f),
            norm2: self.norm2.map(f),
            grff: self.grff.map(f),
        }
    }
    fn for_each<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        self.norm1.for_each(&format!("{prefix}.norm1"), f);
        self.ssa.for_each(&format!("{prefix}.ssa"), f);
        self.tsa.for_each(&format!("{prefix}.tsa"), f);
        self.norm2.for_each(&format!("{prefix}.norm2"), f);
        self.grff.for_each(&format!("{prefix}.grff"), f);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        self.norm1.for_each_mut(&format!("{prefix}.norm1"), f);
        self.ssa.for_each_mut(&format!("{prefix}.ssa"), f);
        self.tsa.for_each_mut(&format!("{prefix}.tsa"), f);
        self.norm2.for_each_mut(&format!("{prefix}.norm2"), f);
        self.grff.for_each_mut(&format!("{prefix}.grff"), f);
    }
}

impl<P> VideoRecParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> VideoRecParams<Q> {
        VideoRecParams {
            upsample: self.upsample.map(f),
            conv1: self.conv1.map(f),
            conv2: self.conv2.map(f),
        }
    }
    fn for_each<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        self.upsample.for_each(&format!("{prefix}.upsample"), f);
        self.conv1.for_each(&format!("{prefix}.conv1"), f);
        self.conv2.for_each(&format!("{prefix}.conv2"), f);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        self.upsample.for_each_mut(&format!("{prefix}.upsample"), f);
        self.conv1.for_each_mut(&format!("{prefix}.conv1"), f);
        self.conv2.for_each_mut(&format!("{prefix}.conv2"), f);
    }
}

impl<P> ModelParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ModelParams<Q> {
        ModelParams {
            token_gen: self.token_gen.iter().map(|c| c.map(f)).collect(),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            video_rec: self.video_rec.map(f),
        }
    }

    pub fn for_each<'a>(&'a self, f: &mut impl FnMut(String, &'a P)) {
        for (i, conv) in self.token_gen.iter().enumerate() {
            conv.for_each(&format!("token_gen.{i}"), f);
        }
        for (i, block) in self.blocks.iter().enumerate() {
            block.for_each(&format!("blocks.{i}"), f);
        }
        self.video_rec.for_each("video_rec", f);
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(String, &mut P)) {
        for (i, conv) in self.token_gen.iter_mut().enumerate() {
            conv.for_each_mut(&format!("token_gen.{i}"), f);
        }
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.for_each_mut(&format!("blocks.{i}"), f);
        }
        self.video_rec.for_each_mut("video_rec", f);
    }

    /// Flatten in traversal order.
    pub fn collect(&self) -> Vec<&P> {
        let mut out = Vec::new();
        self.for_each(&mut |_, p| out.push(p));
        out
    }

    /// Mutable flatten in the same traversal order as [`ModelParams::collect`].
    pub fn collect_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::new();
        for conv in &mut self.token_gen {
            out.push(&mut conv.weight);
            out.push(&mut conv.bias);
        }
        for block in &mut self.blocks {
            out.push(&mut block.norm1.gamma);
            out.push(&mut block.norm1.beta);
            for attn in [&mut block.ssa, &mut block.tsa] {
                out.push(&mut attn.wq);
                out.push(&mut attn.wk);
                out.push(&mut attn.wv);
                out.push(&mut attn.wp);
                out.push(&mut attn.bias_table);
            }
            out.push(&mut block.norm2.gamma);
            out.push(&mut block.norm2.beta);
            for res in [&mut block.grff.res1, &mut block.grff.res2] {
                out.push(&mut res.conv1.weight);
                out.push(&mut res.conv1.bias);
                out.push(&mut res.conv2.weight);
                out.push(&mut res.conv2.bias);
            }
        }
        for conv in [&mut self.video_rec.upsample, &mut self.video_rec.conv1, &mut self.video_rec.conv2] {
            out.push(&mut conv.weight);
            out.push(&mut conv.bias);
        }
        out
    }
}

impl<T: Element> ModelParams<Tensor<T>> {
    pub fn total_values(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, t| n += t.len());
        n
    }
}

/// Spatial bias table rows: one per relative offset pair.
pub fn spatial_bias_rows(g_h: usize, g_w: usize) -> usize {
    (2 * g_h - 1) * (2 * g_w - 1)
}

/// Temporal bias table rows: one per relative frame offset.
pub fn temporal_bias_rows(d: usize) -> usize {
    2 * d - 1
}

enum Init {
    /// Truncated normal (±2 std), std 0.02: projection matrices.
    TruncNormal,
    /// Uniform ±1/sqrt(fan_in): convolution kernels, with fan_in = volume of
    /// the receptive field times input channels.
    FanIn(usize),
    Ones,
}

fn make_tensor<T: Element>(dims: &[usize], init: Init, rng: &mut rng::SeededRng) -> Tensor<T> {
    match init {
        Init::Ones => Tensor::full(dims, T::ONE),
        Init::TruncNormal => Tensor::from_fn(dims, |_| T::from_f64(rng::sample_trunc_normal(rng, 0.02))),
        Init::FanIn(fan_in) => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(dims, |_| T::from_f64(rng::sample_uniform(rng, -bound, bound)))
        }
    }
}

fn conv_params<T: Element>(
    kernel: [usize; 3],
    cin: usize,
    cout: usize,
    rng: &mut rng::SeededRng,
    zero_init: bool,
) -> Conv3dParams<Tensor<T>> {
    let dims = [kernel[0], kernel[1], kernel[2], cin, cout];
    let fan_in = kernel[0] * kernel[1] * kernel[2] * cin;
    let weight = if zero_init {
        Tensor::zeros(&dims)
    } else {
        make_tensor(&dims, Init::FanIn(fan_in), rng)
    };
    Conv3dParams { weight, bias: Tensor::zeros(&[cout]) }
}

fn attn_params<T: Element>(
    proj_in: usize,
    proj_mid: usize,
    proj_out: usize,
    bias_rows: usize,
    heads: usize,
    rng: &mut rng::SeededRng,
    zero_init: bool,
) -> AttnParams<Tensor<T>> {
    let proj = |dims: &[usize], rng: &mut rng::SeededRng| {
        if zero_init {
            Tensor::zeros(dims)
        } else {
            make_tensor(dims, Init::TruncNormal, rng)
        }
    };
    AttnParams {
        wq: proj(&[proj_in, proj_mid], rng),
        wk: proj(&[proj_in, proj_mid], rng),
        wv: proj(&[proj_in, proj_mid], rng),
        wp: proj(&[proj_mid, proj_out], rng),
        bias_table: Tensor::zeros(&[bias_rows, heads]),
    }
}

fn build<T: Element>(config: &ModelConfig, seed: u64, zero_init: bool) -> Result<ModelParams<Tensor<T>>> {
    config.validate()?;
    let mut r = rng::seeded(rng::derive_seed(seed, &[0x5747]));
    let c = config.channels;
    let (g_h, g_w) = config.window;
    let d = config.compression;

    let schedule = config.token_gen_channels();
    let token_gen = (0..5)
        .map(|i| conv_params([3, 3, 3], schedule[i], schedule[i + 1], &mut r, zero_init))
        .collect();

    let blocks = (0..config.total_blocks())
        .map(|_| BlockParams {
            norm1: NormParams {
                gamma: make_tensor(&[c], Init::Ones, &mut r),
                beta: Tensor::zeros(&[c]),
            },
            ssa: attn_params(c, c, c, spatial_bias_rows(g_h, g_w), config.heads, &mut r, zero_init),
            tsa: attn_params(c, c / 2, c, temporal_bias_rows(d), config.heads, &mut r, zero_init),
            norm2: NormParams {
                gamma: make_tensor(&[c], Init::Ones, &mut r),
                beta: Tensor::zeros(&[c]),
            },
            grff: GrffParams {
                res1: ResUnitParams {
                    conv1: conv_params([3, 3, 3], c / 2, c / 2, &mut r, zero_init),
                    conv2: conv_params([3, 3, 3], c / 2, c / 2, &mut r, zero_init),
                },
                res2: ResUnitParams {
                    conv1: conv_params([3, 3, 3], c / 2, c / 2, &mut r, zero_init),
                    conv2: conv_params([3, 3, 3], c / 2, c / 2, &mut r, zero_init),
                },
            },
        })
        .collect();

    // Upsampling kernel layout is [kd, kh, kw, Ci, Co] with the transposed
    // conv mapping Co -> Ci; here both sides are C.
    let upsample_dims = [1usize, 4, 4];
    let upsample_fan_in = upsample_dims[0] * upsample_dims[1] * upsample_dims[2] * c;
    let upsample_weight = if zero_init {
        Tensor::zeros(&[1, 4, 4, c, c])
    } else {
        make_tensor(&[1, 4, 4, c, c], Init::FanIn(upsample_fan_in), &mut r)
    };
    let video_rec = VideoRecParams {
        upsample: Conv3dParams { weight: upsample_weight, bias: Tensor::zeros(&[c]) },
        conv1: conv_params([3, 3, 3], c, c / 2, &mut r, zero_init),
        conv2: conv_params([3, 3, 3], c / 2, config.out_channels, &mut r, zero_init),
    };

    Ok(ModelParams { token_gen, blocks, video_rec })
}

/// Allocate and initialize all learnable weights from a seed.
pub fn build_model<T: Element>(config: &ModelConfig, seed: u64) -> Result<ModelParams<Tensor<T>>> {
    build(config, seed, false)
}

/// All-zero parameters with the right geometry (checkpoint loading target).
pub fn allocate_zeros<T: Element>(config: &ModelConfig) -> Result<ModelParams<Tensor<T>>> {
    build(config, 0, true)
}

/// Closed-form learnable parameter count for a config.
pub fn parameter_count(config: &ModelConfig) -> usize {
    let c = config.channels;
    let (g_h, g_w) = config.window;
    let d = config.compression;
    let conv = |k: usize, cin: usize, cout: usize| k * cin * cout + cout;

    let schedule = config.token_gen_channels();
    let token_gen: usize = (0..5).map(|i| conv(27, schedule[i], schedule[i + 1])).sum();

    let ssa = 4 * c * c + spatial_bias_rows(g_h, g_w) * config.heads;
    let tsa = 3 * c * (c / 2) + (c / 2) * c + temporal_bias_rows(d) * config.heads;
    let norms = 2 * 2 * c;
    let grff = 4 * conv(27, c / 2, c / 2);
    let per_block = ssa + tsa + norms + grff;

    let video_rec = (16 * c * c + c) + conv(27, c, c / 2) + conv(27, c / 2, config.out_channels);

    token_gen + config.total_blocks() * per_block + video_rec
}

/// Fill a parameter set from (name, tensor) pairs; every name must match and
/// every parameter must be covered.
pub fn fill_from_entries<T: Element>(
    params: &mut ModelParams<Tensor<T>>,
    mut entries: std::collections::HashMap<String, Tensor<T>>,
) -> Result<()> {
    let mut missing = Vec::new();
    let mut mismatched = Vec::new();
    params.for_each_mut(&mut |name, slot| {
        match entries.remove(&name) {
            Some(t) if t.dims() == slot.dims() => *slot = t,
            Some(t) => mismatched.push(format!("{name}: expected {:?}, got {:?}", slot.dims(), t.dims())),
            None => missing.push(name),
        }
    });
    if !missing.is_empty() {
        return Err(Error::Format(format!("checkpoint missing parameters: {missing:?}")));
    }
    if !mismatched.is_empty() {
        return Err(Error::Format(format!("checkpoint dim mismatches: {mismatched:?}")));
    }
    if !entries.is_empty() {
        let extra: Vec<&String> = entries.keys().collect();
        return Err(Error::Format(format!("checkpoint has unknown parameters: {extra:?}")));
    }
    Ok(())
}
