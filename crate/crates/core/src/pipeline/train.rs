//! Training loop, encoding workflow and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::checkpoint::save_checkpoint;
use crate::metrics::{eval_dataset, QualityReport};
use crate::model::{
    bind_params, build_model, estimates_to_batch, forward_on_tape, reconstruct,
    ModelParams,
};
use crate::optim::{AdamHyper, AdamState};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::data::{load_dataset, sample_example, Clip};
use crate::rng::derive_seed;
use crate::sci::{
    bayer_mosaic, gen_masks, init_estimate, integrate, modulate, BayerPattern, MaskCube,
    Measurement, VideoCube,
};
use crate::autodiff::Tape;
use crate::tensor::{Element, Tensor};

const MASK_STREAM: u64 = 0x4d41_534b; // per-stage fixed masks
const NOISE_STREAM: u64 = 0x4e4f_4953;
const SAMPLE_STREAM: u64 = 0x5341_4d50;
const EVAL_STREAM: u64 = 0x4556_414c;

/// Seed of the fixed mask used by every step of a stage (when per-batch
/// random masks are off). Exposed so runs can be reproduced exactly.
pub fn stage_mask_seed(config_seed: u64, spatial: usize) -> u64 {
    derive_seed(config_seed, &[MASK_STREAM, spatial as u64])
}

/// Reproducibility record of one training run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint: PathBuf,
    /// Mean loss per epoch, across all stages in order.
    pub loss_curve: Vec<f64>,
    pub final_report: Option<QualityReport>,
}

/// Encode a clip into one measurement per B consecutive frames. The color
/// path mosaics through the Bayer filter first and tags the measurements.
pub fn encode_video<T: Element>(
    video: &VideoCube<T>,
    masks: &MaskCube<T>,
    sigma: f64,
    color: bool,
    seed: u64,
) -> Result<Vec<Measurement<T>>> {
    let b = masks.frames();
    let frames = video.frame_count();
    if frames == 0 || frames % b != 0 {
        return Err(Error::contract(
            "encode",
            format!("video length {frames} is not a multiple of the compression rate {b}"),
        ));
    }
    if color && video.channels() != 3 {
        return Err(Error::contract("encode", "color encoding expects an RGB cube"));
    }
    if !color && video.channels() != 1 {
        return Err(Error::contract("encode", "grayscale encoding expects a single-channel cube"));
    }
    let dims = video.frames.dims().to_vec();
    let mut out = Vec::with_capacity(frames / b);
    for (k, start) in (0..frames).step_by(b).enumerate() {
        let mut group_dims = dims.clone();
        group_dims[3] = b;
        let group = VideoCube::new(Tensor::from_fn(&group_dims, |ix| {
            video.frames.get(&[ix[0], ix[1], ix[2], ix[3] + start])
        }))?;
        let gray = if color { bayer_mosaic(&group)? } else { group };
        let modulated = modulate(&gray, masks)?;
        let mut y = integrate(&modulated, sigma, derive_seed(seed, &[NOISE_STREAM, k as u64]))?;
        if color {
            y.bayer = Some(BayerPattern::Rggb);
        }
        out.push(y);
    }
    Ok(out)
}

struct TrainItem<T: Element> {
    estimate: VideoCube<T>,
    truth: VideoCube<T>,
}

fn prepare_item<T: Element>(
    clip: &Clip<T>,
    config: &TrainConfig,
    spatial: usize,
    labels: [u64; 4],
) -> Result<TrainItem<T>> {
    let b = config.compression;
    let mut sample_rng = crate::rng::seeded(derive_seed(config.seed, &[SAMPLE_STREAM, labels[0], labels[1], labels[2]]));
    let truth = sample_example(clip, spatial, b, &config.augment, &mut sample_rng)?;

    let mask_seed = if config.random_masks {
        derive_seed(config.seed, &[MASK_STREAM, labels[0], labels[1], labels[2], labels[3]])
    } else {
        derive_seed(config.seed, &[MASK_STREAM, spatial as u64])
    };
    let masks: MaskCube<T> = gen_masks(spatial, spatial, b, mask_seed, 0.5)?;

    let gray = if config.color { bayer_mosaic(&truth)? } else { truth.clone() };
    let modulated = modulate(&gray, &masks)?;
    let noise_seed = derive_seed(config.seed, &[NOISE_STREAM, labels[0], labels[1], labels[2], labels[3]]);
    let mut y = integrate(&modulated, config.noise_sigma, noise_seed)?;
    if config.color {
        y.bayer = Some(BayerPattern::Rggb);
    }
    let estimate = init_estimate(&y, &masks)?;
    Ok(TrainItem { estimate, truth })
}

/// One optimization step over a batch; returns the loss.
fn train_step<T: Element>(
    params: &mut ModelParams<Tensor<T>>,
    adam: &mut AdamState<T>,
    items: &[TrainItem<T>],
    model_config: &crate::model::ModelConfig,
) -> Result<f64> {
    let estimates: Vec<VideoCube<T>> = items.iter().map(|i| i.estimate.clone()).collect();
    let truths: Vec<VideoCube<T>> = items.iter().map(|i| i.truth.clone()).collect();
    let input = estimates_to_batch(&estimates)?;
    let target = estimates_to_batch(&truths)?;

    let mut tape = Tape::new();
    let input_id = tape.constant(input);
    let target_id = tape.constant(target);
    let bound = bind_params(&mut tape, params, true);
    let (out, _) = forward_on_tape(&mut tape, input_id, &bound, model_config)?;
    let loss = tape.mse(out, target_id)?;
    let loss_value = tape.value(loss).scalar_value().to_f64();
    if !loss_value.is_finite() {
        return Err(Error::NonFinite { op: "train_step" });
    }

    let mut grads = tape.backward(loss)?;
    let bound_ids: Vec<_> = bound.collect().into_iter().copied().collect();
    let grad_tensors: Vec<Tensor<T>> = bound_ids
        .iter()
        .map(|&id| grads.take(id).unwrap_or_else(|| Tensor::zeros(tape.dims(id))))
        .collect();
    let grad_refs: Vec<&Tensor<T>> = grad_tensors.iter().collect();
    let mut param_refs = params.collect_mut();
    adam.step(&mut param_refs, &grad_refs)?;
    Ok(loss_value)
}

/// Staged training per the config schedule. Writes `checkpoint.stfc` after
/// every epoch and `manifest.json` at the end of the run; returns the
/// manifest.
pub fn train<T: Element>(config: &TrainConfig, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    let model_config = config.model_config()?;
    std::fs::create_dir_all(out_dir)?;
    let channels = if config.color { 3 } else { 1 };
    let clips: Vec<Clip<T>> = load_dataset(&config.dataset, channels)?;

    let mut params: ModelParams<Tensor<T>> = build_model(&model_config, config.seed)?;
    let param_dims: Vec<Vec<usize>> = params.collect().iter().map(|t| t.dims().to_vec()).collect();
    let dim_refs: Vec<&[usize]> = param_dims.iter().map(|d| d.as_slice()).collect();
    let mut adam = AdamState::new(&dim_refs, AdamHyper::default());

    let checkpoint_path = out_dir.join("checkpoint.stfc");
    let mut loss_curve = Vec::new();
    save_checkpoint(&checkpoint_path, &model_config, &params)?;

    for (stage_idx, stage) in config.stages.iter().enumerate() {
        adam.hyper.lr = stage.lr;
        for epoch in 0..stage.epochs {
            let mut epoch_loss = 0.0f64;
            let mut steps = 0usize;
            for (batch_idx, batch) in clips.chunks(config.batch_size).enumerate() {
                let items: Result<Vec<TrainItem<T>>> = batch
                    .iter()
                    .enumerate()
                    .map(|(k, clip)| {
                        prepare_item(
                            clip,
                            config,
                            stage.spatial,
                            [stage_idx as u64, epoch as u64, batch_idx as u64, k as u64],
                        )
                    })
                    .collect();
                epoch_loss += train_step(&mut params, &mut adam, &items?, &model_config)?;
                steps += 1;
            }
            loss_curve.push(epoch_loss / steps.max(1) as f64);
            save_checkpoint(&checkpoint_path, &model_config, &params)?;
        }
    }

    let final_report = if config.eval_after {
        Some(evaluate_on_dataset(&params, &model_config, config, &clips)?)
    } else {
        None
    };

    let manifest = RunManifest {
        config_hash: config.hash()?,
        seed: config.seed,
        checkpoint: checkpoint_path,
        loss_curve,
        final_report,
    };
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Re-encode the head of every clip with a held-out mask and score the
/// reconstructions.
fn evaluate_on_dataset<T: Element>(
    params: &ModelParams<Tensor<T>>,
    model_config: &crate::model::ModelConfig,
    config: &TrainConfig,
    clips: &[Clip<T>],
) -> Result<QualityReport> {
    let b = config.compression;
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    for clip in clips {
        let (nx, ny) = clip.spatial();
        let dims = clip.frames.dims().to_vec();
        let mut head_dims = dims.clone();
        head_dims[3] = b;
        let truth = VideoCube::new(Tensor::from_fn(&head_dims, |ix| clip.frames.get(ix)))?;
        let masks: MaskCube<T> = gen_masks(nx, ny, b, derive_seed(config.seed, &[EVAL_STREAM]), 0.5)?;
        let measurements = encode_video(&truth, &masks, 0.0, config.color, 0)?;
        let recon = reconstruct(&measurements[0], &masks, params, model_config)?;
        let clamped = VideoCube::new(recon.frames.map(|v| {
            v.maximum(T::ZERO).minimum(T::ONE)
        }))?;
        let report = eval_dataset(&clamped, &truth)?;
        psnrs.extend(report.per_frame_psnr);
        ssims.extend(report.per_frame_ssim);
    }
    let mean_psnr = psnrs.iter().sum::<f64>() / psnrs.len().max(1) as f64;
    let mean_ssim = ssims.iter().sum::<f64>() / ssims.len().max(1) as f64;
    Ok(QualityReport { per_frame_psnr: psnrs, per_frame_ssim: ssims, mean_psnr, mean_ssim })
}
