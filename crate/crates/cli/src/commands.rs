use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use stformer_core::flops::{audit, model_cost, AuditDims};
use stformer_core::io::checkpoint::load_checkpoint;
use stformer_core::io::stf1::{read_stf1, write_stf1_bytes, write_stf1_tensor};
use stformer_core::metrics::eval_dataset;
use stformer_core::model::{reconstruct, ColorMode, ModelConfig, Preset};
use stformer_core::pipeline::{encode_video, train, TrainConfig};
use stformer_core::sci::{gen_masks, init_estimate, BayerPattern, MaskCube, Measurement, VideoCube};
use stformer_core::{Element, Tensor};

use crate::Command;

pub fn dispatch<T: Element>(command: Command, seed: u64) -> Result<()> {
    match command {
        Command::Mask { nx, ny, compression, p, out } => cmd_mask::<T>(nx, ny, compression, p, seed, &out),
        Command::Encode { video, masks, sigma, color, out } => {
            cmd_encode::<T>(&video, &masks, sigma, color, seed, &out)
        }
        Command::Init { meas, masks, color, out } => cmd_init::<T>(&meas, &masks, color, &out),
        Command::Train { config, out } => cmd_train::<T>(&config, seed, &out),
        Command::Reconstruct { meas, masks, checkpoint, out } => {
            cmd_reconstruct::<T>(&meas, &masks, &checkpoint, &out)
        }
        Command::Eval { recon, truth, out } => cmd_eval::<T>(&recon, &truth, &out),
        Command::Flops { preset, nx, ny, dims, measure, out } => {
            cmd_flops(preset.as_deref(), nx, ny, dims.as_deref(), measure, &out)
        }
    }
}

fn read_masks<T: Element>(path: &Path) -> Result<MaskCube<T>> {
    let arr = read_stf1(path).with_context(|| format!("reading masks from {}", path.display()))?;
    Ok(MaskCube::from_tensor(arr.to_tensor::<T>(), 0)?)
}

fn read_measurement<T: Element>(path: &Path, color: bool) -> Result<Measurement<T>> {
    let arr = read_stf1(path).with_context(|| format!("reading measurement from {}", path.display()))?;
    let values: Tensor<T> = arr.to_tensor();
    if values.rank() != 2 {
        bail!("measurement must be a 2D plane, got {:?}", values.dims());
    }
    Ok(Measurement { values, noise_sigma: 0.0, bayer: color.then_some(BayerPattern::Rggb) })
}

fn cmd_mask<T: Element>(nx: usize, ny: usize, b: usize, p: f64, seed: u64, out: &Path) -> Result<()> {
    let cube: MaskCube<T> = gen_masks(nx, ny, b, seed, p)?;
    let bytes: Vec<u8> = cube.values.as_slice().iter().map(|&v| v.to_f64() as u8).collect();
    write_stf1_bytes(out, cube.values.dims(), &bytes)?;
    println!("wrote {}x{}x{} mask cube to {}", nx, ny, b, out.display());
    Ok(())
}

fn cmd_encode<T: Element>(
    video_path: &Path,
    masks_path: &Path,
    sigma: f64,
    color: bool,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let video: Tensor<T> = read_stf1(video_path)?.to_tensor();
    let video = VideoCube::new(video)?;
    let masks = read_masks::<T>(masks_path)?;
    let measurements = encode_video(&video, &masks, sigma, color, seed)?;
    for (i, y) in measurements.iter().enumerate() {
        let path = numbered(out, i);
        write_stf1_tensor(&path, &y.values)?;
    }
    println!("wrote {} measurement(s) with prefix {}", measurements.len(), out.display());
    Ok(())
}

fn numbered(prefix: &Path, index: usize) -> PathBuf {
    let stem = prefix.to_string_lossy();
    PathBuf::from(format!("{stem}_{index:03}.stf"))
}

fn cmd_init<T: Element>(meas: &Path, masks: &Path, color: bool, out: &Path) -> Result<()> {
    let y = read_measurement::<T>(meas, color)?;
    let m = read_masks::<T>(masks)?;
    let estimate = init_estimate(&y, &m)?;
    write_stf1_tensor(out, &estimate.frames)?;
    println!("wrote estimate {:?} to {}", estimate.frames.dims(), out.display());
    Ok(())
}

fn cmd_train<T: Element>(config_path: &Path, seed: u64, out: &Path) -> Result<()> {
    let json = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading config from {}", config_path.display()))?;
    let mut config = TrainConfig::from_json(&json)?;
    if seed != 0 {
        config.seed = seed;
    }
    let manifest = train::<T>(&config, out)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    Ok(())
}

fn cmd_reconstruct<T: Element>(meas: &Path, masks: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let (config, params) = load_checkpoint::<T>(checkpoint)?;
    let color = config.color_mode() == ColorMode::Color;
    let y = read_measurement::<T>(meas, color)?;
    let m = read_masks::<T>(masks)?;
    let video = reconstruct(&y, &m, &params, &config)?;
    let clamped = video.frames.map(|v| v.maximum(T::ZERO).minimum(T::ONE));
    write_stf1_tensor(out, &clamped)?;
    println!("wrote reconstruction {:?} to {}", clamped.dims(), out.display());
    Ok(())
}

fn cmd_eval<T: Element>(recon: &Path, truth: &Path, out: &Path) -> Result<()> {
    let recon = VideoCube::new(read_stf1(recon)?.to_tensor::<T>())?;
    let truth = VideoCube::new(read_stf1(truth)?.to_tensor::<T>())?;
    let report = eval_dataset(&recon, &truth)?;
    std::fs::write(out, serde_json::to_vec_pretty(&report)?)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn parse_dims(spec: &str) -> Result<AuditDims> {
    let parts: Vec<usize> = spec
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .context("dims must be seven comma-separated integers H,W,D,C,G_h,G_w,heads")?;
    if parts.len() != 7 {
        bail!("dims must have exactly seven entries H,W,D,C,G_h,G_w,heads");
    }
    Ok(AuditDims {
        h: parts[0],
        w: parts[1],
        d: parts[2],
        c: parts[3],
        g_h: parts[4],
        g_w: parts[5],
        heads: parts[6],
    })
}

fn parse_preset(name: &str) -> Result<Preset> {
    match name.to_ascii_uppercase().as_str() {
        "S" => Ok(Preset::S),
        "B" => Ok(Preset::B),
        "L" => Ok(Preset::L),
        other => bail!("unknown preset {other}; expected S, B or L"),
    }
}

fn cmd_flops(
    preset: Option<&str>,
    nx: usize,
    ny: usize,
    dims: Option<&str>,
    measure: bool,
    out: &Path,
) -> Result<()> {
    let report = match (preset, dims) {
        (Some(name), None) => {
            let config = ModelConfig::preset(parse_preset(name)?, ColorMode::Gray, 8);
            let audit_dims = AuditDims {
                h: nx / 2,
                w: ny / 2,
                d: config.compression,
                c: config.channels,
                g_h: config.window.0,
                g_w: config.window.1,
                heads: config.heads,
            };
            let attention = audit(&audit_dims, measure)?;
            let model = model_cost(&config, nx, ny)?;
            serde_json::json!({
                "preset": name.to_ascii_uppercase(),
                "scene": [nx, ny],
                "per_block_attention": attention,
                "model": model,
            })
        }
        (None, Some(spec)) => {
            let audit_dims = parse_dims(spec)?;
            serde_json::json!(audit(&audit_dims, measure)?)
        }
        _ => bail!("specify exactly one of --preset or --dims"),
    };
    std::fs::write(out, serde_json::to_vec_pretty(&report)?)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
