//! PSNR and single-scale SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sci::VideoCube;
use crate::tensor::{Element, Tensor};

/// SSIM window: 11x11 Gaussian, sigma 1.5.
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Luma weights (ITU-R BT.601) used for color SSIM.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Peak signal-to-noise ratio in dB; identical inputs return the +inf
/// sentinel.
pub fn psnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape("psnr", format!("dims {:?} vs {:?}", a.dims(), b.dims())));
    }
    if peak <= 0.0 {
        return Err(Error::contract("psnr", format!("peak must be > 0, got {peak}")));
    }
    let n = a.len() as f64;
    let mse: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW - 1) as isize / 2;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for dy in -half..=half {
        for dx in -half..=half {
            let r2 = (dy * dy + dx * dx) as f64;
            w.push((-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Single-scale SSIM over a grayscale plane: Gaussian-weighted local
/// statistics, mean over all fully-valid window positions.
pub fn ssim<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape("ssim", format!("dims {:?} vs {:?}", a.dims(), b.dims())));
    }
    if a.rank() != 2 {
        return Err(Error::shape("ssim", format!("expected a 2D plane, got {:?}", a.dims())));
    }
    let (h, w) = (a.dims()[0], a.dims()[1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract(
            "ssim",
            format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);
    let win = gaussian_window();
    let av = a.as_slice();
    let bv = b.as_slice();

    let mut total = 0.0f64;
    let positions = (h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1);
    for oy in 0..=h - SSIM_WINDOW {
        for ox in 0..=w - SSIM_WINDOW {
            let (mut mu_a, mut mu_b) = (0.0f64, 0.0f64);
            let (mut aa, mut bb, mut ab) = (0.0f64, 0.0f64, 0.0f64);
            let mut wi = 0usize;
            for dy in 0..SSIM_WINDOW {
                let row = (oy + dy) * w + ox;
                for dx in 0..SSIM_WINDOW {
                    let wt = win[wi];
                    wi += 1;
                    let x = av[row + dx].to_f64();
                    let y = bv[row + dx].to_f64();
                    mu_a += wt * x;
                    mu_b += wt * y;
                    aa += wt * x * x;
                    bb += wt * y * y;
                    ab += wt * x * y;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
        }
    }
    Ok(total / positions as f64)
}

/// How color frames are collapsed for SSIM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSsim {
    /// BT.601 luma plane (default).
    Luma,
    /// Mean of the per-channel SSIM values.
    PerChannelMean,
}

/// Per-frame and aggregate quality scores.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct QualityReport {
    #[serde(with = "inf_vec")]
    pub per_frame_psnr: Vec<f64>,
    pub per_frame_ssim: Vec<f64>,
    #[serde(with = "inf_scalar")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// JSON has no Infinity literal; the +inf PSNR sentinel maps to null.
mod inf_scalar {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

mod inf_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mapped: Vec<Option<f64>> = v.iter().map(|&x| if x.is_finite() { Some(x) } else { None }).collect();
        s.collect_seq(mapped)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::INFINITY))
            .collect())
    }
}

fn frame_plane<T: Element>(cube: &VideoCube<T>, frame: usize, mode: ColorSsim) -> Vec<Tensor<f64>> {
    let (nx, ny) = cube.spatial();
    let c = cube.channels();
    if c == 1 {
        return vec![Tensor::from_fn(&[nx, ny], |ix| cube.frames.get(&[ix[0], ix[1], 0, frame]).to_f64())];
    }
    match mode {
        ColorSsim::Luma => vec![Tensor::from_fn(&[nx, ny], |ix| {
            (0..c)
                .map(|ch| LUMA.get(ch).copied().unwrap_or(0.0) * cube.frames.get(&[ix[0], ix[1], ch, frame]).to_f64())
                .sum()
        })],
        ColorSsim::PerChannelMean => (0..c)
            .map(|ch| Tensor::from_fn(&[nx, ny], |ix| cube.frames.get(&[ix[0], ix[1], ch, frame]).to_f64()))
            .collect(),
    }
}

/// Score a reconstruction against ground truth, frame by frame. PSNR pools
/// the squared error over all channels; SSIM uses the luma plane for color
/// input (or per-channel mean when requested).
pub fn eval_dataset_with<T: Element>(
    recon: &VideoCube<T>,
    truth: &VideoCube<T>,
    peak: f64,
    color_ssim: ColorSsim,
) -> Result<QualityReport> {
    if recon.frames.dims() != truth.frames.dims() {
        return Err(Error::shape(
            "eval_dataset",
            format!("recon {:?} vs truth {:?}", recon.frames.dims(), truth.frames.dims()),
        ));
    }
    let (nx, ny) = recon.spatial();
    let c = recon.channels();
    let b = recon.frame_count();
    let mut per_frame_psnr = Vec::with_capacity(b);
    let mut per_frame_ssim = Vec::with_capacity(b);
    for f in 0..b {
        let ra = Tensor::from_fn(&[nx, ny, c], |ix| recon.frames.get(&[ix[0], ix[1], ix[2], f]).to_f64());
        let ta = Tensor::from_fn(&[nx, ny, c], |ix| truth.frames.get(&[ix[0], ix[1], ix[2], f]).to_f64());
        per_frame_psnr.push(psnr(&ra, &ta, peak)?);

        let rp = frame_plane(recon, f, color_ssim);
        let tp = frame_plane(truth, f, color_ssim);
        let mut s = 0.0;
        for (r, t) in rp.iter().zip(&tp) {
            s += ssim(r, t, peak)?;
        }
        per_frame_ssim.push(s / rp.len() as f64);
    }
    let mean_psnr = per_frame_psnr.iter().sum::<f64>() / b as f64;
    let mean_ssim = per_frame_ssim.iter().sum::<f64>() / b as f64;
    Ok(QualityReport { per_frame_psnr, per_frame_ssim, mean_psnr, mean_ssim })
}

/// [`eval_dataset_with`] under the defaults: peak 1.0, luma SSIM.
pub fn eval_dataset<T: Element>(recon: &VideoCube<T>, truth: &VideoCube<T>) -> Result<QualityReport> {
    eval_dataset_with(recon, truth, 1.0, ColorSsim::Luma)
}
