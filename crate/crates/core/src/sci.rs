//! CACTI optical-encoder simulation.
//!
//! A scene of B frames is modulated by per-frame binary masks and summed into
//! a single 2D measurement. The color pathway mosaics RGB frames through an
//! RGGB Bayer filter before integration; reconstruction then works on the
//! four half-resolution sub-measurements.
//!
//! Layouts follow the camera geometry: masks are `[n_x, n_y, B]`, videos
//! `[n_x, n_y, channels, B]`, measurements `[n_x, n_y]`.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Element, Tensor};

/// Bayer color-filter layout tag. Only RGGB is supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BayerPattern {
    Rggb,
}

/// B binary modulation masks, one per frame.
#[derive(Clone, Debug)]
pub struct MaskCube<T: Element> {
    /// `[n_x, n_y, B]`, every entry 0 or 1.
    pub values: Tensor<T>,
    pub seed: u64,
}

impl<T: Element> MaskCube<T> {
    pub fn from_tensor(values: Tensor<T>, seed: u64) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::shape("mask_cube", format!("expected [n_x, n_y, B], got {:?}", values.dims())));
        }
        if values.as_slice().iter().any(|&v| v != T::ZERO && v != T::ONE) {
            return Err(Error::contract("mask_cube", "mask entries must be 0 or 1"));
        }
        Ok(MaskCube { values, seed })
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.values.dims()[0], self.values.dims()[1])
    }

    pub fn frames(&self) -> usize {
        self.values.dims()[2]
    }
}

/// Ground-truth or reconstructed frames, pixel range [0, 1].
#[derive(Clone, Debug)]
pub struct VideoCube<T: Element> {
    /// `[n_x, n_y, channels, B]`.
    pub frames: Tensor<T>,
}

impl<T: Element> VideoCube<T> {
    pub fn new(frames: Tensor<T>) -> Result<Self> {
        if frames.rank() != 4 {
            return Err(Error::shape("video_cube", format!("expected [n_x, n_y, C, B], got {:?}", frames.dims())));
        }
        if !frames.all_finite() {
            return Err(Error::NonFinite { op: "video_cube" });
        }
        Ok(VideoCube { frames })
    }

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

/// The 2D compressed snapshot.
#[derive(Clone, Debug)]
pub struct Measurement<T: Element> {
    /// `[n_x, n_y]`.
    pub values: Tensor<T>,
    pub noise_sigma: f64,
    pub bayer: Option<BayerPattern>,
}

/// Sensing matrix `[D_1, ..., D_B]` stored as its B diagonals: applying it to
/// the vec-stacked video is exactly masked integration.
#[derive(Clone, Debug)]
pub struct SensingMatrix<T: Element> {
    /// Diagonal of `D_f` is the row-major vectorization of mask frame f.
    diagonals: Vec<Vec<T>>,
    rows: usize,
}

impl<T: Element> SensingMatrix<T> {
    /// Dense shape `n_x·n_y × n_x·n_y·B`.
    pub fn dense_shape(&self) -> (usize, usize) {
        (self.rows, self.rows * self.diagonals.len())
    }

    pub fn nonzeros(&self) -> usize {
        self.rows * self.diagonals.len()
    }

    /// y = H·x for x of length `n_x·n_y·B` (frames stacked).
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.rows * self.diagonals.len() {
            return Err(Error::shape(
                "sensing_apply",
                format!("expected vector of {} entries, got {}", self.rows * self.diagonals.len(), x.len()),
            ));
        }
        let mut y = vec![T::ZERO; self.rows];
        for (f, diag) in self.diagonals.iter().enumerate() {
            let xf = &x[f * self.rows..(f + 1) * self.rows];
            for ((yv, &d), &xv) in y.iter_mut().zip(diag).zip(xf) {
                *yv += d * xv;
            }
        }
        Ok(y)
    }

    /// Row-major dense materialization; intended for small oracle tests.
    pub fn to_dense(&self) -> Tensor<T> {
        let (r, c) = self.dense_shape();
        let mut m = Tensor::zeros(&[r, c]);
        for (f, diag) in self.diagonals.iter().enumerate() {
            for (i, &d) in diag.iter().enumerate() {
                m.set(&[i, f * self.rows + i], d);
            }
        }
        m
    }
}

/// Vectorize a `[n_x, n_y]` frame in row-major order, matching the layout
/// used by [`SensingMatrix`].
pub fn vec_frame<T: Element>(frame: &Tensor<T>) -> Vec<T> {
    frame.as_slice().to_vec()
}

/// Stack a video cube (single channel) into `[x_1; ...; x_B]`.
pub fn vec_video<T: Element>(video: &VideoCube<T>) -> Result<Vec<T>> {
    if video.channels() != 1 {
        return Err(Error::contract("vec_video", "vectorization expects a grayscale cube"));
    }
    let (nx, ny) = video.spatial();
    let b = video.frame_count();
    let mut out = Vec::with_capacity(nx * ny * b);
    for f in 0..b {
        for x in 0..nx {
            for y in 0..ny {
                out.push(video.frames.get(&[x, y, 0, f]));
            }
        }
    }
    Ok(out)
}

/// I.i.d. Bernoulli(p) mask cube from a seeded PRNG.
pub fn gen_masks<T: Element>(n_x: usize, n_y: usize, b: usize, seed: u64, p: f64) -> Result<MaskCube<T>> {
    if n_x == 0 || n_y == 0 || b == 0 {
        return Err(Error::contract("gen_masks", "extents must be >= 1"));
    }
    if !(0.0 < p && p < 1.0) {
        return Err(Error::contract("gen_masks", format!("p must be in (0, 1), got {p}")));
    }
    let mut r = rng::seeded(seed);
    let values = Tensor::from_fn(&[n_x, n_y, b], |_| {
        if rng::sample_bernoulli(&mut r, p) {
            T::ONE
        } else {
            T::ZERO
        }
    });
    Ok(MaskCube { values, seed })
}

/// Per-frame elementwise modulation X'(:,:,f) = X(:,:,f) ⊙ M(:,:,f). For
/// color input the same mask value multiplies all channels at a pixel.
pub fn modulate<T: Element>(x: &VideoCube<T>, m: &MaskCube<T>) -> Result<VideoCube<T>> {
    let (nx, ny) = x.spatial();
    if m.spatial() != (nx, ny) || m.frames() != x.frame_count() {
        return Err(Error::shape(
            "modulate",
            format!("video {:?} vs masks {:?}", x.frames.dims(), m.values.dims()),
        ));
    }
    let c = x.channels();
    let b = x.frame_count();
    let mut out = x.frames.clone();
    let data = out.as_mut_slice();
    let mv = m.values.as_slice();
    // video layout [x, y, c, f]; mask [x, y, f]
    let mut vi = 0usize;
    for px in 0..nx * ny {
        for _ch in 0..c {
            for f in 0..b {
                data[vi] = data[vi] * mv[px * b + f];
                vi += 1;
            }
        }
    }
    VideoCube::new(out)
}

/// Temporal integration: sum modulated frames, then add N(0, sigma²) noise.
pub fn integrate<T: Element>(x_mod: &VideoCube<T>, sigma: f64, seed: u64) -> Result<Measurement<T>> {
    if x_mod.channels() != 1 {
        return Err(Error::contract("integrate", "expects a grayscale cube; color goes through bayer_mosaic first"));
    }
    let (nx, ny) = x_mod.spatial();
    let b = x_mod.frame_count();
    let src = x_mod.frames.as_slice();
    let mut values = Tensor::zeros(&[nx, ny]);
    let dst = values.as_mut_slice();
    for px in 0..nx * ny {
        let mut acc = T::ZERO;
        for f in 0..b {
            acc += src[px * b + f];
        }
        dst[px] = acc;
    }
    if sigma > 0.0 {
        let mut r = rng::seeded(seed);
        for v in dst.iter_mut() {
            *v = *v + T::from_f64(sigma * rng::sample_normal(&mut r));
        }
    }
    Ok(Measurement { values, noise_sigma: sigma, bayer: None })
}

/// Build the block-diagonal-by-frame sensing matrix from a mask cube.
pub fn build_sensing_matrix<T: Element>(m: &MaskCube<T>) -> SensingMatrix<T> {
    let (nx, ny) = m.spatial();
    let b = m.frames();
    let mv = m.values.as_slice();
    let mut diagonals = vec![vec![T::ZERO; nx * ny]; b];
    for px in 0..nx * ny {
        for f in 0..b {
            diagonals[f][px] = mv[px * b + f];
        }
    }
    SensingMatrix { diagonals, rows: nx * ny }
}

/// Apply the RGGB Bayer filter: keeps one color sample per pixel, producing a
/// grayscale cube. Pixel (2i, 2j) samples R; (2i, 2j+1) and (2i+1, 2j)
/// sample G; (2i+1, 2j+1) samples B.
pub fn bayer_mosaic<T: Element>(x: &VideoCube<T>) -> Result<VideoCube<T>> {
    if x.channels() != 3 {
        return Err(Error::contract("bayer_mosaic", "expects an RGB cube"));
    }
    let (nx, ny) = x.spatial();
    if nx % 2 != 0 || ny % 2 != 0 {
        return Err(Error::shape("bayer_mosaic", format!("spatial extents must be even, got {nx}x{ny}")));
    }
    let b = x.frame_count();
    let out = Tensor::from_fn(&[nx, ny, 1, b], |ix| {
        let (px, py, f) = (ix[0], ix[1], ix[3]);
        let ch = match (px % 2, py % 2) {
            (0, 0) => 0, // R
            (1, 1) => 2, // B
            _ => 1,      // G
        };
        x.frames.get(&[px, py, ch, f])
    });
    VideoCube::new(out)
}

/// The four quarter-resolution Bayer phases of a plane or mask cube, in RGGB
/// order: (r, g1, g2, b).
#[derive(Clone, Debug)]
pub struct BayerQuad<T: Element> {
    pub r: Tensor<T>,
    pub g1: Tensor<T>,
    pub g2: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Element> BayerQuad<T> {
    pub fn parts(&self) -> [&Tensor<T>; 4] {
        [&self.r, &self.g1, &self.g2, &self.b]
    }
}

fn split_plane_or_cube<T: Element>(t: &Tensor<T>) -> Result<BayerQuad<T>> {
    let dims = t.dims();
    if dims.len() != 2 && dims.len() != 3 {
        return Err(Error::shape("bayer_split", format!("expected [n_x, n_y] or [n_x, n_y, B], got {dims:?}")));
    }
    let (nx, ny) = (dims[0], dims[1]);
    if nx % 2 != 0 || ny % 2 != 0 {
        return Err(Error::shape("bayer_split", format!("spatial extents must be even, got {nx}x{ny}")));
    }
    let rest = &dims[2..];
    let mut sub_dims = vec![nx / 2, ny / 2];
    sub_dims.extend_from_slice(rest);
    let pick = |ox: usize, oy: usize| -> Tensor<T> {
        Tensor::from_fn(&sub_dims, |ix| {
            let mut full = Vec::with_capacity(dims.len());
            full.push(2 * ix[0] + ox);
            full.push(2 * ix[1] + oy);
            full.extend_from_slice(&ix[2..]);
            t.get(&full)
        })
    };
    Ok(BayerQuad { r: pick(0, 0), g1: pick(0, 1), g2: pick(1, 0), b: pick(1, 1) })
}

/// Divide a Bayer measurement into its four sub-measurements.
pub fn bayer_split_measurement<T: Element>(y: &Measurement<T>) -> Result<BayerQuad<T>> {
    split_plane_or_cube(&y.values)
}

/// Divide a mask cube into its four Bayer-phase sub-cubes.
pub fn bayer_split_masks<T: Element>(m: &MaskCube<T>) -> Result<BayerQuad<T>> {
    split_plane_or_cube(&m.values)
}

/// Inverse of [`bayer_split_measurement`]: interleave the four phases back
/// into the full-resolution plane. Exact bijection.
pub fn bayer_reassemble<T: Element>(quad: &BayerQuad<T>) -> Result<Tensor<T>> {
    let dims = quad.r.dims().to_vec();
    for part in quad.parts() {
        if part.dims() != dims {
            return Err(Error::shape("bayer_reassemble", "phase dims differ".to_string()));
        }
    }
    let (hx, hy) = (dims[0], dims[1]);
    let mut full_dims = vec![2 * hx, 2 * hy];
    full_dims.extend_from_slice(&dims[2..]);
    Ok(Tensor::from_fn(&full_dims, |ix| {
        let mut sub = Vec::with_capacity(dims.len());
        sub.push(ix[0] / 2);
        sub.push(ix[1] / 2);
        sub.extend_from_slice(&ix[2..]);
        match (ix[0] % 2, ix[1] % 2) {
            (0, 0) => quad.r.get(&sub),
            (0, 1) => quad.g1.get(&sub),
            (1, 0) => quad.g2.get(&sub),
            (1, 1) => quad.b.get(&sub),
            _ => unreachable!(),
        }
    }))
}

pub const INIT_ESTIMATE_EPS: f64 = 1e-8;

fn estimate_plane<T: Element>(y: &Tensor<T>, masks: &Tensor<T>) -> Tensor<T> {
    // X̂(:,:,f) = M(:,:,f) ⊙ (y ⊘ (Σ_f M(:,:,f) + eps))
    let (nx, ny, b) = (masks.dims()[0], masks.dims()[1], masks.dims()[2]);
    let mv = masks.as_slice();
    let yv = y.as_slice();
    let eps = T::from_f64(INIT_ESTIMATE_EPS);
    let mut out = Tensor::zeros(&[nx, ny, 1, b]);
    let data = out.as_mut_slice();
    for px in 0..nx * ny {
        let mut msum = T::ZERO;
        for f in 0..b {
            msum += mv[px * b + f];
        }
        let norm = yv[px] / (msum + eps);
        for f in 0..b {
            data[px * b + f] = mv[px * b + f] * norm;
        }
    }
    out
}

/// Mask-normalized back-projection of a measurement: the coarse estimate fed
/// to the reconstruction network. Grayscale yields `[n_x, n_y, 1, B]`; a
/// Bayer measurement yields the four phase estimates stacked as channels,
/// `[n_x/2, n_y/2, 4, B]`.
pub fn init_estimate<T: Element>(y: &Measurement<T>, m: &MaskCube<T>) -> Result<VideoCube<T>> {
    let (nx, ny) = m.spatial();
    if y.values.dims() != [nx, ny] {
        return Err(Error::shape(
            "init_estimate",
            format!("measurement {:?} vs masks {:?}", y.values.dims(), m.values.dims()),
        ));
    }
    match y.bayer {
        None => VideoCube::new(estimate_plane(&y.values, &m.values)),
        Some(BayerPattern::Rggb) => {
            let yq = bayer_split_measurement(y)?;
            let mq = bayer_split_masks(m)?;
            let b = m.frames();
            let (hx, hy) = (nx / 2, ny / 2);
            let mut out = Tensor::zeros(&[hx, hy, 4, b]);
            for (ch, (yp, mp)) in yq.parts().iter().zip(mq.parts().iter()).enumerate() {
                let est = estimate_plane(yp, mp); // [hx, hy, 1, b]
                for px in 0..hx {
                    for py in 0..hy {
                        for f in 0..b {
                            out.set(&[px, py, ch, f], est.get(&[px, py, 0, f]));
                        }
                    }
                }
            }
            VideoCube::new(out)
        }
    }
}
