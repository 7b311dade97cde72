//! Training data: STF1 clip directories, augmentation, synthetic clips.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::stf1;
use crate::rng::{self, SeededRng};
use crate::sci::VideoCube;
use crate::tensor::{Element, Tensor};

/// A ground-truth video clip `[n_x, n_y, C, F]` with F >= compression B.
#[derive(Clone, Debug)]
pub struct Clip<T: Element> {
    pub name: String,
    pub frames: Tensor<T>,
}

impl<T: Element> Clip<T> {
    pub fn spatial(&self) -> (usize, usize) {
        (self.frames.dims()[0], self.frames.dims()[1])
    }

    pub fn channels(&self) -> usize {
        self.frames.dims()[2]
    }

    pub fn frame_count(&self) -> usize {
        self.frames.dims()[3]
    }
}

/// Load every `*.stf` cube in a directory, sorted by filename.
pub fn load_dataset<T: Element>(dir: &Path, channels: usize) -> Result<Vec<Clip<T>>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("dataset directory {} does not exist", dir.display())));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "stf").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("dataset directory {} has no .stf clips", dir.display())));
    }
    let mut clips = Vec::with_capacity(paths.len());
    for path in paths {
        let frames: Tensor<T> = stf1::read_stf1_tensor(&path)?;
        if frames.rank() != 4 {
            return Err(Error::Format(format!(
                "{}: expected [n_x, n_y, C, F], got {:?}",
                path.display(),
                frames.dims()
            )));
        }
        if frames.dims()[2] != channels {
            return Err(Error::Format(format!(
                "{}: expected {channels} channels, got {}",
                path.display(),
                frames.dims()[2]
            )));
        }
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        clips.push(Clip { name, frames });
    }
    Ok(clips)
}

/// Deterministic synthetic clip: a Gaussian blob orbiting over a static
/// gradient, values in [0, 1]. Smooth and low-entropy so small models can
/// overfit it quickly.
pub fn synthetic_clip<T: Element>(n_x: usize, n_y: usize, channels: usize, frames: usize, seed: u64) -> Clip<T> {
    let mut r = rng::seeded(seed);
    let cx0 = rng::sample_uniform(&mut r, 0.3, 0.7);
    let cy0 = rng::sample_uniform(&mut r, 0.3, 0.7);
    let radius = rng::sample_uniform(&mut r, 0.12, 0.22);
    let orbit = rng::sample_uniform(&mut r, 0.1, 0.2);
    let tensor = Tensor::from_fn(&[n_x, n_y, channels, frames], |ix| {
        let (x, y, ch, f) = (ix[0], ix[1], ix[2], ix[3]);
        let phase = 2.0 * std::f64::consts::PI * f as f64 / frames as f64;
        let cx = cx0 + orbit * phase.cos();
        let cy = cy0 + orbit * phase.sin();
        let fx = x as f64 / n_x as f64;
        let fy = y as f64 / n_y as f64;
        let d2 = (fx - cx) * (fx - cx) + (fy - cy) * (fy - cy);
        let blob = (-d2 / (radius * radius)).exp();
        let gradient = 0.25 * fx + 0.15 * fy;
        let channel_tint = 1.0 - 0.2 * ch as f64;
        let v = (0.15 + gradient + 0.6 * blob * channel_tint).clamp(0.0, 1.0);
        T::from_f64(v)
    });
    Clip { name: format!("synthetic_{seed}"), frames: tensor }
}

/// Horizontal flip (mirror the y axis).
pub fn hflip<T: Element>(frames: &Tensor<T>) -> Tensor<T> {
    let dims = frames.dims().to_vec();
    let ny = dims[1];
    Tensor::from_fn(&dims, |ix| frames.get(&[ix[0], ny - 1 - ix[1], ix[2], ix[3]]))
}

/// Bilinear spatial resize to `(out_x, out_y)`.
pub fn resize<T: Element>(frames: &Tensor<T>, out_x: usize, out_y: usize) -> Tensor<T> {
    let dims = frames.dims().to_vec();
    let (nx, ny) = (dims[0], dims[1]);
    let mut out_dims = dims.clone();
    out_dims[0] = out_x;
    out_dims[1] = out_y;
    let scale_x = nx as f64 / out_x as f64;
    let scale_y = ny as f64 / out_y as f64;
    Tensor::from_fn(&out_dims, |ix| {
        let sx = ((ix[0] as f64 + 0.5) * scale_x - 0.5).max(0.0);
        let sy = ((ix[1] as f64 + 0.5) * scale_y - 0.5).max(0.0);
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(nx - 1), (y0 + 1).min(ny - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let sample = |x: usize, y: usize| frames.get(&[x, y, ix[2], ix[3]]).to_f64();
        let v = sample(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + sample(x1, y0) * fx * (1.0 - fy)
            + sample(x0, y1) * (1.0 - fx) * fy
            + sample(x1, y1) * fx * fy;
        T::from_f64(v)
    })
}

/// Crop a `[size, size]` spatial box starting at (ox, oy).
pub fn crop<T: Element>(frames: &Tensor<T>, ox: usize, oy: usize, size: usize) -> Tensor<T> {
    let dims = frames.dims().to_vec();
    let mut out_dims = dims.clone();
    out_dims[0] = size;
    out_dims[1] = size;
    Tensor::from_fn(&out_dims, |ix| frames.get(&[ix[0] + ox, ix[1] + oy, ix[2], ix[3]]))
}

/// Sample one training example from a clip: a temporal window of `b` frames
/// cropped/flipped/scaled to `spatial`. Deterministic given the rng state.
pub fn sample_example<T: Element>(
    clip: &Clip<T>,
    spatial: usize,
    b: usize,
    augment: &crate::pipeline::AugmentConfig,
    rng: &mut SeededRng,
) -> Result<VideoCube<T>> {
    let (nx, ny) = clip.spatial();
    if clip.frame_count() < b {
        return Err(Error::Config(format!(
            "clip {} has {} frames, needs at least {b}",
            clip.name,
            clip.frame_count()
        )));
    }
    // temporal window
    let max_start = clip.frame_count() - b;
    let start = if max_start == 0 { 0 } else { rng.random_range(0..=max_start) };
    let dims = clip.frames.dims().to_vec();
    let mut window_dims = dims.clone();
    window_dims[3] = b;
    let mut frames = Tensor::from_fn(&window_dims, |ix| clip.frames.get(&[ix[0], ix[1], ix[2], ix[3] + start]));

    // random downscale, keeping at least the crop size
    if augment.scale && nx > spatial && ny > spatial {
        let min_factor = (spatial as f64 / nx as f64).max(spatial as f64 / ny as f64).max(0.5);
        let factor = rng::sample_uniform(rng, min_factor, 1.0);
        let sx = ((nx as f64 * factor).round() as usize).max(spatial);
        let sy = ((ny as f64 * factor).round() as usize).max(spatial);
        if sx < nx || sy < ny {
            frames = resize(&frames, sx, sy);
        }
    }

    // crop to the stage size
    let (cx, cy) = (frames.dims()[0], frames.dims()[1]);
    if cx < spatial || cy < spatial {
        return Err(Error::Config(format!(
            "clip {} is {cx}x{cy}, smaller than the stage size {spatial}",
            clip.name
        )));
    }
    if cx > spatial || cy > spatial {
        if !augment.crop && (cx != spatial || cy != spatial) {
            return Err(Error::Config(format!(
                "clip {} is {cx}x{cy} but cropping is disabled for stage size {spatial}",
                clip.name
            )));
        }
        let ox = if cx == spatial { 0 } else { rng.random_range(0..=cx - spatial) };
        let oy = if cy == spatial { 0 } else { rng.random_range(0..=cy - spatial) };
        frames = crop(&frames, ox, oy, spatial);
    }

    if augment.hflip && rng::sample_bernoulli(rng, 0.5) {
        frames = hflip(&frames);
    }
    VideoCube::new(frames)
}

use rand::Rng;
