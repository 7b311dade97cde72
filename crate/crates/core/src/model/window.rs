//! Non-overlapping local window partitioning with optional cyclic shift.
//!
//! A token field `[Nb, D, H, W, C]` is regrouped into `[L, J, C]` windows
//! with `J = G_h·G_w` tokens each and `L = Nb·D·⌈H/G_h⌉·⌈W/G_w⌉` windows.
//! Non-divisible extents are zero-padded before grouping and cropped after
//! the reverse, so partition∘reverse is exact for any field size.

use crate::autodiff::{NodeId, Tape};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Additive attention penalty between tokens that were not neighbors before
/// the cyclic shift. Finite so NaN screening stays meaningful; exp(-1e4)
/// underflows to exactly zero weight.
pub const SHIFT_MASK_PENALTY: f64 = -1e4;

/// Resolved window grid for one field size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGeometry {
    pub g_h: usize,
    pub g_w: usize,
    pub shift: (usize, usize),
    pub h: usize,
    pub w: usize,
    pub padded_h: usize,
    pub padded_w: usize,
}

impl WindowGeometry {
    pub fn new(h: usize, w: usize, g_h: usize, g_w: usize, shift: (usize, usize)) -> Self {
        let padded_h = h.div_ceil(g_h) * g_h;
        let padded_w = w.div_ceil(g_w) * g_w;
        // A single-window axis has nothing to connect; shifting it would only
        // wrap tokens onto themselves.
        let shift = (
            if padded_h == g_h { 0 } else { shift.0 % g_h },
            if padded_w == g_w { 0 } else { shift.1 % g_w },
        );
        WindowGeometry { g_h, g_w, shift, h, w, padded_h, padded_w }
    }

    pub fn tokens_per_window(&self) -> usize {
        self.g_h * self.g_w
    }

    pub fn windows_h(&self) -> usize {
        self.padded_h / self.g_h
    }

    pub fn windows_w(&self) -> usize {
        self.padded_w / self.g_w
    }

    /// Windows per frame.
    pub fn windows_per_frame(&self) -> usize {
        self.windows_h() * self.windows_w()
    }

    pub fn is_shifted(&self) -> bool {
        self.shift != (0, 0)
    }
}

/// Regroup a `[Nb, D, H, W, C]` field into `[L, J, C]` windows.
pub fn window_partition<T: Element>(tape: &mut Tape<T>, field: NodeId, geom: &WindowGeometry) -> Result<NodeId> {
    let dims = tape.dims(field).to_vec();
    let (nb, d, h, w, c) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
    debug_assert_eq!((h, w), (geom.h, geom.w));
    let mut x = field;
    if geom.padded_h != h || geom.padded_w != w {
        x = tape.pad_zero(x, &[0, 0, 0, 0, 0], &[0, 0, geom.padded_h - h, geom.padded_w - w, 0])?;
    }
    if geom.is_shifted() {
        x = tape.roll(x, &[0, 0, -(geom.shift.0 as isize), -(geom.shift.1 as isize), 0])?;
    }
    let (nwh, nww) = (geom.windows_h(), geom.windows_w());
    let grouped = tape.reshape(x, &[nb, d, nwh, geom.g_h, nww, geom.g_w, c])?;
    let swapped = tape.permute(grouped, &[0, 1, 2, 4, 3, 5, 6])?;
    tape.reshape(swapped, &[nb * d * nwh * nww, geom.tokens_per_window(), c])
}

/// Inverse of [`window_partition`]; restores the original `[Nb, D, H, W, C]`
/// field bit-exactly.
pub fn window_reverse<T: Element>(
    tape: &mut Tape<T>,
    windows: NodeId,
    geom: &WindowGeometry,
    nb: usize,
    d: usize,
) -> Result<NodeId> {
    let dims = tape.dims(windows).to_vec();
    let c = dims[2];
    let (nwh, nww) = (geom.windows_h(), geom.windows_w());
    let grouped = tape.reshape(windows, &[nb, d, nwh, nww, geom.g_h, geom.g_w, c])?;
    let swapped = tape.permute(grouped, &[0, 1, 2, 4, 3, 5, 6])?;
    let mut x = tape.reshape(swapped, &[nb, d, geom.padded_h, geom.padded_w, c])?;
    if geom.is_shifted() {
        x = tape.roll(x, &[0, 0, geom.shift.0 as isize, geom.shift.1 as isize, 0])?;
    }
    if geom.padded_h != geom.h || geom.padded_w != geom.w {
        x = tape.slice(x, &[0, 0, 0, 0, 0], &[nb, d, geom.h, geom.w, c])?;
    }
    Ok(x)
}

/// Relative-position index map for a `G_h × G_w` window: entry `i*J + j` is
/// the row of the bias table holding the offset from token j to token i.
pub fn spatial_relative_index(g_h: usize, g_w: usize) -> Vec<usize> {
    let j = g_h * g_w;
    let mut out = Vec::with_capacity(j * j);
    for a in 0..j {
        let (ah, aw) = (a / g_w, a % g_w);
        for b in 0..j {
            let (bh, bw) = (b / g_w, b % g_w);
            let dh = ah as isize - bh as isize + (g_h as isize - 1);
            let dw = aw as isize - bw as isize + (g_w as isize - 1);
            out.push((dh as usize) * (2 * g_w - 1) + dw as usize);
        }
    }
    out
}

/// Relative-offset index map over D frames: entry `i*D + j` addresses offset
/// `i - j` in a `2D−1` row table.
pub fn temporal_relative_index(d: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            out.push((a as isize - b as isize + d as isize - 1) as usize);
        }
    }
    out
}

/// Additive attention mask for shifted windows: `[nW, J, J]` per-frame window
/// entries, 0 between tokens from the same pre-shift region and
/// [`SHIFT_MASK_PENALTY`] otherwise. `None` when the geometry is unshifted.
pub fn shift_attention_mask<T: Element>(geom: &WindowGeometry) -> Option<Tensor<T>> {
    if !geom.is_shifted() {
        return None;
    }
    let (hp, wp) = (geom.padded_h, geom.padded_w);
    let (g_h, g_w) = (geom.g_h, geom.g_w);
    let (s_h, s_w) = geom.shift;

    // Region ids in post-shift coordinates. The band boundaries are chosen so
    // that the grid lines up with window boundaries: rows 0..hp-g_h sit in
    // complete pre-shift neighborhoods, hp-g_h..hp-s_h are the tail rows that
    // stayed contiguous and hp-s_h..hp hold the wrapped-around rows.
    let ranges = |n: usize, g: usize, s: usize| -> [std::ops::Range<usize>; 3] {
        [0..n - g, n - g..n - s, n - s..n]
    };
    let h_bands = ranges(hp, g_h, s_h);
    let w_bands = ranges(wp, g_w, s_w);
    let mut region = vec![0u32; hp * wp];
    let mut id = 0u32;
    for hr in &h_bands {
        for wr in &w_bands {
            for y in hr.clone() {
                for x in wr.clone() {
                    region[y * wp + x] = id;
                }
            }
            id += 1;
        }
    }

    let (nwh, nww) = (geom.windows_h(), geom.windows_w());
    let j = geom.tokens_per_window();
    let mut window_regions = vec![0u32; nwh * nww * j];
    for wh in 0..nwh {
        for ww in 0..nww {
            for iy in 0..g_h {
                for ix in 0..g_w {
                    let token = (wh * nww + ww) * j + iy * g_w + ix;
                    window_regions[token] = region[(wh * g_h + iy) * wp + ww * g_w + ix];
                }
            }
        }
    }

    let penalty = T::from_f64(SHIFT_MASK_PENALTY);
    let mut mask = Tensor::zeros(&[nwh * nww, j, j]);
    {
        let data = mask.as_mut_slice();
        for w in 0..nwh * nww {
            let regions = &window_regions[w * j..(w + 1) * j];
            for a in 0..j {
                for b in 0..j {
                    if regions[a] != regions[b] {
                        data[(w * j + a) * j + b] = penalty;
                    }
                }
            }
        }
    }
    Some(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_field(nb: usize, d: usize, h: usize, w: usize, c: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng::seeded(seed);
        Tensor::from_fn(&[nb, d, h, w, c], |_| rng::sample_uniform(&mut r, -1.0, 1.0))
    }

    #[test]
    fn window_count_formula() {
        // D=1, H=W=14, G=7, no shift -> L = 4 windows.
        let geom = WindowGeometry::new(14, 14, 7, 7, (0, 0));
        let mut tape = Tape::new();
        let f = tape.constant(random_field(1, 1, 14, 14, 3, 1));
        let win = window_partition(&mut tape, f, &geom).unwrap();
        assert_eq!(tape.dims(win), &[4, 49, 3]);
    }

    #[test]
    fn doubling_frames_doubles_windows() {
        let geom = WindowGeometry::new(14, 14, 7, 7, (0, 0));
        let mut tape = Tape::new();
        let f1 = tape.constant(random_field(1, 1, 14, 14, 2, 2));
        let f2 = tape.constant(random_field(1, 2, 14, 14, 2, 3));
        let w1 = window_partition(&mut tape, f1, &geom).unwrap();
        let w2 = window_partition(&mut tape, f2, &geom).unwrap();
        assert_eq!(tape.dims(w2)[0], 2 * tape.dims(w1)[0]);
    }

    #[test]
    fn partition_reverse_roundtrip_bit_exact() {
        for (h, w, shift) in [(14, 14, (0, 0)), (14, 14, (3, 3)), (10, 12, (3, 3)), (9, 5, (2, 1))] {
            let geom = WindowGeometry::new(h, w, 7, 7, shift);
            let field = random_field(2, 3, h, w, 4, 7);
            let mut tape = Tape::new();
            let f = tape.constant(field.clone());
            let win = window_partition(&mut tape, f, &geom).unwrap();
            let back = window_reverse(&mut tape, win, &geom, 2, 3).unwrap();
            assert_eq!(tape.value(back).as_slice(), field.as_slice(), "h={h} w={w} shift={shift:?}");
        }
    }

    #[test]
    fn padding_is_cropped_exactly() {
        // 9x5 under 7x7 windows pads to 14x7.
        let geom = WindowGeometry::new(9, 5, 7, 7, (0, 0));
        assert_eq!((geom.padded_h, geom.padded_w), (14, 7));
        assert_eq!(geom.windows_per_frame(), 2);
    }

    #[test]
    fn single_window_axis_disables_shift() {
        let geom = WindowGeometry::new(7, 14, 7, 7, (3, 3));
        assert_eq!(geom.shift, (0, 3));
    }

    #[test]
    fn spatial_relative_index_properties() {
        let (g_h, g_w) = (3, 2);
        let idx = spatial_relative_index(g_h, g_w);
        let j = g_h * g_w;
        assert_eq!(idx.len(), j * j);
        let rows = (2 * g_h - 1) * (2 * g_w - 1);
        assert!(idx.iter().all(|&i| i < rows));
        // zero offset maps to the center row for every token
        let center = (g_h - 1) * (2 * g_w - 1) + (g_w - 1);
        for a in 0..j {
            assert_eq!(idx[a * j + a], center);
        }
        // distinct offsets get distinct rows within one source token's row
        let first: Vec<usize> = (0..j).map(|b| idx[b]).collect();
        let unique: std::collections::HashSet<usize> = first.iter().copied().collect();
        assert_eq!(unique.len(), j);
    }

    #[test]
    fn temporal_relative_index_properties() {
        let idx = temporal_relative_index(4);
        assert_eq!(idx.len(), 16);
        assert!(idx.iter().all(|&i| i < 7));
        for a in 0..4 {
            assert_eq!(idx[a * 4 + a], 3); // zero offset -> center row
        }
        assert_eq!(idx[0 * 4 + 3], 0); // offset -3 -> first row
        assert_eq!(idx[3 * 4], 6); // offset +3 -> last row
    }

    #[test]
    fn shift_mask_zero_for_unshifted() {
        let geom = WindowGeometry::new(14, 14, 7, 7, (0, 0));
        assert!(shift_attention_mask::<f64>(&geom).is_none());
    }

    #[test]
    fn shift_mask_blocks_wrapped_pairs_only() {
        let geom = WindowGeometry::new(14, 14, 7, 7, (3, 3));
        let mask = shift_attention_mask::<f64>(&geom).unwrap();
        assert_eq!(mask.dims(), &[4, 49, 49]);
        // interior window (top-left after shift) mixes no regions
        assert!(mask.as_slice()[..49 * 49].iter().all(|&v| v == 0.0));
        // the bottom-right window mixes four regions: some pairs masked
        let last = &mask.as_slice()[3 * 49 * 49..];
        assert!(last.iter().any(|&v| v == SHIFT_MASK_PENALTY));
        // mask is symmetric
        for a in 0..49 {
            for b in 0..49 {
                assert_eq!(last[a * 49 + b], last[b * 49 + a]);
            }
        }
    }
}
