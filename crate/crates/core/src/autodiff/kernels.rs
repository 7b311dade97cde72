//! Raw compute kernels shared by the tape ops and their adjoints.
//!
//! Everything here is sequential with a fixed row-major iteration order, so
//! repeated runs produce bit-identical results.

use crate::tensor::{numel, strides, Element};

/// Broadcast result dims under numpy-style right-aligned rules, restricted to
/// "equal or 1" per axis.
pub fn broadcast_dims(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db {
            out[i] = da;
        } else if da == 1 {
            out[i] = db;
        } else if db == 1 {
            out[i] = da;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Strides of `dims` right-aligned into `rank` axes, zeroed where the extent
/// is 1 (broadcast) or the axis is missing.
fn broadcast_strides(dims: &[usize], rank: usize) -> Vec<usize> {
    let s = strides(dims);
    let mut out = vec![0usize; rank];
    let offset = rank - dims.len();
    for i in 0..dims.len() {
        out[offset + i] = if dims[i] == 1 { 0 } else { s[i] };
    }
    out
}

/// Elementwise binary op with broadcasting. `out_dims` must come from
/// [`broadcast_dims`].
pub fn ew_broadcast<T: Element>(
    a_dims: &[usize],
    a: &[T],
    b_dims: &[usize],
    b: &[T],
    out_dims: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let n = numel(out_dims);
    // Fast paths: identical dims, or scalar operand.
    if a_dims == b_dims {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if b.len() == 1 {
        let y = b[0];
        return a.iter().map(|&x| f(x, y)).collect();
    }
    if a.len() == 1 {
        let x = a[0];
        return b.iter().map(|&y| f(x, y)).collect();
    }
    // Suffix broadcast: b's dims equal the trailing dims of the output.
    if a_dims == out_dims && out_dims.ends_with(b_dims) && !b.is_empty() {
        let mut out = Vec::with_capacity(n);
        for chunk in a.chunks_exact(b.len()) {
            out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
        }
        return out;
    }
    // General case: odometer walk maintaining both source offsets.
    let rank = out_dims.len();
    let sa = broadcast_strides(a_dims, rank);
    let sb = broadcast_strides(b_dims, rank);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f(a[oa], b[ob]));
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_dims[ax] {
                break;
            }
            idx[ax] = 0;
            oa -= sa[ax] * out_dims[ax];
            ob -= sb[ax] * out_dims[ax];
        }
    }
    out
}

/// Sum-reduce `g` (shaped `g_dims`) onto `target_dims` (a broadcast source of
/// `g_dims`), accumulating into `acc`.
pub fn reduce_into<T: Element>(g_dims: &[usize], g: &[T], target_dims: &[usize], acc: &mut [T]) {
    if g_dims == target_dims {
        for (dst, &v) in acc.iter_mut().zip(g) {
            *dst += v;
        }
        return;
    }
    if acc.len() == 1 {
        let mut s = T::ZERO;
        for &v in g {
            s += v;
        }
        acc[0] += s;
        return;
    }
    if g_dims.ends_with(target_dims) {
        for chunk in g.chunks_exact(acc.len()) {
            for (dst, &v) in acc.iter_mut().zip(chunk) {
                *dst += v;
            }
        }
        return;
    }
    let rank = g_dims.len();
    let st = broadcast_strides(target_dims, rank);
    let mut idx = vec![0usize; rank];
    let mut ot = 0usize;
    for &v in g {
        acc[ot] += v;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ot += st[ax];
            if idx[ax] < g_dims[ax] {
                break;
            }
            idx[ax] = 0;
            ot -= st[ax] * g_dims[ax];
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix products (batched, row-major [batch, m, n] layout)
// ---------------------------------------------------------------------------

/// C[b] = A[b]·B[b], A: [batch, m, k], B: [batch, k, n].
pub fn matmul_nn<T: Element>(batch: usize, m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::ZERO; batch * m * n];
    for bi in 0..batch {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let bb = &b[bi * k * n..(bi + 1) * k * n];
        let cb = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let arow = &ab[i * k..(i + 1) * k];
            let crow = &mut cb[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                let brow = &bb[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
    out
}

/// C[b] = A[b]·B[b]ᵀ, A: [batch, m, k], B: [batch, n, k].
pub fn matmul_nt<T: Element>(batch: usize, m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::ZERO; batch * m * n];
    for bi in 0..batch {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let bb = &b[bi * n * k..(bi + 1) * n * k];
        let cb = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let arow = &ab[i * k..(i + 1) * k];
            let crow = &mut cb[i * n..(i + 1) * n];
            for (j, cv) in crow.iter_mut().enumerate() {
                let brow = &bb[j * k..(j + 1) * k];
                let mut s = T::ZERO;
                for (&av, &bv) in arow.iter().zip(brow) {
                    s += av * bv;
                }
                *cv += s;
            }
        }
    }
    out
}

/// C[b] = A[b]ᵀ·B[b], A: [batch, m, k], B: [batch, m, n], C: [batch, k, n].
pub fn matmul_tn<T: Element>(batch: usize, m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::ZERO; batch * k * n];
    for bi in 0..batch {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let bb = &b[bi * m * n..(bi + 1) * m * n];
        let cb = &mut out[bi * k * n..(bi + 1) * k * n];
        for i in 0..m {
            let arow = &ab[i * k..(i + 1) * k];
            let brow = &bb[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                let crow = &mut cb[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Softmax / layer norm
// ---------------------------------------------------------------------------

/// Max-subtracted softmax over rows of length `cols`.
pub fn softmax_rows<T: Element>(rows: usize, cols: usize, x: &[T]) -> Vec<T> {
    let mut out = vec![T::ZERO; rows * cols];
    for r in 0..rows {
        let xin = &x[r * cols..(r + 1) * cols];
        let xout = &mut out[r * cols..(r + 1) * cols];
        let mut mx = xin[0];
        for &v in xin.iter() {
            mx = mx.maximum(v);
        }
        let mut denom = T::ZERO;
        for (o, &v) in xout.iter_mut().zip(xin) {
            let e = (v - mx).exp();
            *o = e;
            denom += e;
        }
        for o in xout.iter_mut() {
            *o = *o / denom;
        }
    }
    out
}

/// VJP of [`softmax_rows`]: gx = y ⊙ (g − ⟨g, y⟩).
pub fn softmax_rows_vjp<T: Element>(rows: usize, cols: usize, y: &[T], g: &[T]) -> Vec<T> {
    let mut out = vec![T::ZERO; rows * cols];
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let gr = &g[r * cols..(r + 1) * cols];
        let or = &mut out[r * cols..(r + 1) * cols];
        let mut dot = T::ZERO;
        for (&yv, &gv) in yr.iter().zip(gr) {
            dot += yv * gv;
        }
        for ((o, &yv), &gv) in or.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    out
}

/// Layer norm over trailing feature dim of length `c`, with affine gamma/beta.
pub fn layer_norm_fwd<T: Element>(positions: usize, c: usize, x: &[T], gamma: &[T], beta: &[T], eps: f64) -> Vec<T> {
    let mut out = vec![T::ZERO; positions * c];
    let inv_c = T::from_f64(1.0 / c as f64);
    let epsv = T::from_f64(eps);
    for p in 0..positions {
        let xs = &x[p * c..(p + 1) * c];
        let os = &mut out[p * c..(p + 1) * c];
        let mut mean = T::ZERO;
        for &v in xs {
            mean += v;
        }
        mean = mean * inv_c;
        let mut var = T::ZERO;
        for &v in xs {
            let d = v - mean;
            var += d * d;
        }
        var = var * inv_c;
        let inv_std = T::ONE / (var + epsv).sqrt();
        for ((o, &v), (&gm, &bt)) in os.iter_mut().zip(xs).zip(gamma.iter().zip(beta)) {
            *o = (v - mean) * inv_std * gm + bt;
        }
    }
    out
}

/// VJP of [`layer_norm_fwd`]. Returns (gx); accumulates gamma/beta grads.
pub fn layer_norm_vjp<T: Element>(
    positions: usize,
    c: usize,
    x: &[T],
    gamma: &[T],
    eps: f64,
    g: &[T],
    g_gamma: &mut [T],
    g_beta: &mut [T],
) -> Vec<T> {
    let mut gx = vec![T::ZERO; positions * c];
    let inv_c = T::from_f64(1.0 / c as f64);
    let epsv = T::from_f64(eps);
    for p in 0..positions {
        let xs = &x[p * c..(p + 1) * c];
        let gs = &g[p * c..(p + 1) * c];
        let out = &mut gx[p * c..(p + 1) * c];
        let mut mean = T::ZERO;
        for &v in xs {
            mean += v;
        }
        mean = mean * inv_c;
        let mut var = T::ZERO;
        for &v in xs {
            let d = v - mean;
            var += d * d;
        }
        var = var * inv_c;
        let inv_std = T::ONE / (var + epsv).sqrt();
        // dxhat = g * gamma;  gx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        let mut mean_dxhat = T::ZERO;
        let mut mean_dxhat_xhat = T::ZERO;
        for i in 0..c {
            let xhat = (xs[i] - mean) * inv_std;
            let dxhat = gs[i] * gamma[i];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
            g_gamma[i] += gs[i] * xhat;
            g_beta[i] += gs[i];
        }
        mean_dxhat = mean_dxhat * inv_c;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_c;
        for i in 0..c {
            let xhat = (xs[i] - mean) * inv_std;
            let dxhat = gs[i] * gamma[i];
            out[i] = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// 3D convolution (input [N, D, H, W, Ci], kernel [kd, kh, kw, Ci, Co])
// ---------------------------------------------------------------------------

pub fn conv3d_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

pub fn conv_transpose3d_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let grown = (input - 1) * stride + k;
    if grown < 2 * pad {
        return None;
    }
    Some(grown - 2 * pad)
}

/// Cross-correlation forward pass with zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_fwd<T: Element>(
    x_dims: &[usize; 5],
    x: &[T],
    k_dims: &[usize; 5],
    k: &[T],
    bias: Option<&[T]>,
    stride: [usize; 3],
    pad: [usize; 3],
    out_dims: &[usize; 5],
) -> Vec<T> {
    let [n, din, hin, win, ci] = *x_dims;
    let [kd, kh, kw, kci, co] = *k_dims;
    debug_assert_eq!(ci, kci);
    let [_, dout, hout, wout, _] = *out_dims;
    let mut out = vec![T::ZERO; numel(out_dims)];

    let x_strides = strides(&[n, din, hin, win, ci]);
    let tap = ci * co;
    for ni in 0..n {
        for od in 0..dout {
            for oh in 0..hout {
                for ow in 0..wout {
                    let obase = (((ni * dout + od) * hout + oh) * wout + ow) * co;
                    let acc = &mut out[obase..obase + co];
                    if let Some(b) = bias {
                        acc.copy_from_slice(b);
                    }
                    for fd in 0..kd {
                        let id = (od * stride[0] + fd) as isize - pad[0] as isize;
                        if id < 0 || id as usize >= din {
                            continue;
                        }
                        for fh in 0..kh {
                            let ih = (oh * stride[1] + fh) as isize - pad[1] as isize;
                            if ih < 0 || ih as usize >= hin {
                                continue;
                            }
                            for fw in 0..kw {
                                let iw = (ow * stride[2] + fw) as isize - pad[2] as isize;
                                if iw < 0 || iw as usize >= win {
                                    continue;
                                }
                                let xbase = ni * x_strides[0]
                                    + id as usize * x_strides[1]
                                    + ih as usize * x_strides[2]
                                    + iw as usize * x_strides[3];
                                let xs = &x[xbase..xbase + ci];
                                let ks = &k[((fd * kh + fh) * kw + fw) * tap..((fd * kh + fh) * kw + fw) * tap + tap];
                                for (c_in, &xv) in xs.iter().enumerate() {
                                    let krow = &ks[c_in * co..(c_in + 1) * co];
                                    for (a, &kv) in acc.iter_mut().zip(krow) {
                                        *a += xv * kv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv3d_fwd`] with respect to the input: scatters `gy` back
/// through the kernel. Also the forward pass of the transposed convolution.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_adj_input<T: Element>(
    gy_dims: &[usize; 5],
    gy: &[T],
    k_dims: &[usize; 5],
    k: &[T],
    stride: [usize; 3],
    pad: [usize; 3],
    gx_dims: &[usize; 5],
) -> Vec<T> {
    let [n, dout, hout, wout, co] = *gy_dims;
    let [kd, kh, kw, ci, kco] = *k_dims;
    debug_assert_eq!(co, kco);
    let [_, din, hin, win, _] = *gx_dims;
    let mut gx = vec![T::ZERO; numel(gx_dims)];
    let gx_strides = strides(&[n, din, hin, win, ci]);
    let tap = ci * co;
    for ni in 0..n {
        for od in 0..dout {
            for oh in 0..hout {
                for ow in 0..wout {
                    let gybase = (((ni * dout + od) * hout + oh) * wout + ow) * co;
                    let gys = &gy[gybase..gybase + co];
                    for fd in 0..kd {
                        let id = (od * stride[0] + fd) as isize - pad[0] as isize;
                        if id < 0 || id as usize >= din {
                            continue;
                        }
                        for fh in 0..kh {
                            let ih = (oh * stride[1] + fh) as isize - pad[1] as isize;
                            if ih < 0 || ih as usize >= hin {
                                continue;
                            }
                            for fw in 0..kw {
                                let iw = (ow * stride[2] + fw) as isize - pad[2] as isize;
                                if iw < 0 || iw as usize >= win {
                                    continue;
                                }
                                let xbase = ni * gx_strides[0]
                                    + id as usize * gx_strides[1]
                                    + ih as usize * gx_strides[2]
                                    + iw as usize * gx_strides[3];
                                let ks = &k[((fd * kh + fh) * kw + fw) * tap..((fd * kh + fh) * kw + fw) * tap + tap];
                                let xs = &mut gx[xbase..xbase + ci];
                                for (c_in, xv) in xs.iter_mut().enumerate() {
                                    let krow = &ks[c_in * co..(c_in + 1) * co];
                                    let mut s = T::ZERO;
                                    for (&gv, &kv) in gys.iter().zip(krow) {
                                        s += gv * kv;
                                    }
                                    *xv += s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Gradient of the kernel: correlation of the conv input with the conv
/// output cotangent.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_kernel_grad<T: Element>(
    x_dims: &[usize; 5],
    x: &[T],
    gy_dims: &[usize; 5],
    gy: &[T],
    stride: [usize; 3],
    pad: [usize; 3],
    k_dims: &[usize; 5],
) -> Vec<T> {
    let [n, din, hin, win, ci] = *x_dims;
    let [_, dout, hout, wout, co] = *gy_dims;
    let [kd, kh, kw, _, _] = *k_dims;
    let mut gk = vec![T::ZERO; numel(k_dims)];
    let x_strides = strides(&[n, din, hin, win, ci]);
    let tap = ci * co;
    for ni in 0..n {
        for od in 0..dout {
            for oh in 0..hout {
                for ow in 0..wout {
                    let gybase = (((ni * dout + od) * hout + oh) * wout + ow) * co;
                    let gys = &gy[gybase..gybase + co];
                    for fd in 0..kd {
                        let id = (od * stride[0] + fd) as isize - pad[0] as isize;
                        if id < 0 || id as usize >= din {
                            continue;
                        }
                        for fh in 0..kh {
                            let ih = (oh * stride[1] + fh) as isize - pad[1] as isize;
                            if ih < 0 || ih as usize >= hin {
                                continue;
                            }
                            for fw in 0..kw {
                                let iw = (ow * stride[2] + fw) as isize - pad[2] as isize;
                                if iw < 0 || iw as usize >= win {
                                    continue;
                                }
                                let xbase = ni * x_strides[0]
                                    + id as usize * x_strides[1]
                                    + ih as usize * x_strides[2]
                                    + iw as usize * x_strides[3];
                                let xs = &x[xbase..xbase + ci];
                                let gks = &mut gk[((fd * kh + fh) * kw + fw) * tap..((fd * kh + fh) * kw + fw) * tap + tap];
                                for (c_in, &xv) in xs.iter().enumerate() {
                                    let gkrow = &mut gks[c_in * co..(c_in + 1) * co];
                                    for (gkv, &gv) in gkrow.iter_mut().zip(gys) {
                                        *gkv += xv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gk
}

// ---------------------------------------------------------------------------
// Data movement
// ---------------------------------------------------------------------------

/// Permute axes: `out_dims[i] = in_dims[perm[i]]`.
pub fn permute<T: Element>(in_dims: &[usize], data: &[T], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = in_dims.len();
    let out_dims: Vec<usize> = perm.iter().map(|&p| in_dims[p]).collect();
    let in_strides = strides(in_dims);
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = numel(&out_dims);
    if n == 0 {
        return (out_dims, Vec::new());
    }
    // When the innermost axis stays put, source runs are contiguous and can
    // be copied whole.
    if rank > 0 && perm[rank - 1] == rank - 1 {
        let run = out_dims[rank - 1];
        let mut out = vec![data[0]; n];
        let outer = &out_dims[..rank - 1];
        let mut idx = vec![0usize; rank - 1];
        let mut off = 0usize;
        let mut written = 0usize;
        for _ in 0..n / run.max(1) {
            out[written..written + run].copy_from_slice(&data[off..off + run]);
            written += run;
            for ax in (0..outer.len()).rev() {
                idx[ax] += 1;
                off += step[ax];
                if idx[ax] < outer[ax] {
                    break;
                }
                idx[ax] = 0;
                off -= step[ax] * outer[ax];
            }
        }
        return (out_dims, out);
    }
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += step[ax];
            if idx[ax] < out_dims[ax] {
                break;
            }
            idx[ax] = 0;
            off -= step[ax] * out_dims[ax];
        }
    }
    (out_dims, out)
}

pub fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Copy an axis-aligned box between tensors, assigning (`add = false`) or
/// accumulating (`add = true`). The box starts at `src_origin` / `dst_origin`
/// and spans `box_dims`.
#[allow(clippy::too_many_arguments)]
pub fn copy_box<T: Element>(
    src_dims: &[usize],
    src: &[T],
    dst_dims: &[usize],
    dst: &mut [T],
    src_origin: &[usize],
    dst_origin: &[usize],
    box_dims: &[usize],
    add: bool,
) {
    let rank = src_dims.len();
    debug_assert_eq!(dst_dims.len(), rank);
    if numel(box_dims) == 0 {
        return;
    }
    let ss = strides(src_dims);
    let ds = strides(dst_dims);
    let src_base: usize = src_origin.iter().zip(&ss).map(|(&o, &s)| o * s).sum();
    let dst_base: usize = dst_origin.iter().zip(&ds).map(|(&o, &s)| o * s).sum();
    let run = if rank == 0 { 1 } else { box_dims[rank - 1] };
    let outer_dims = if rank == 0 { &[] as &[usize] } else { &box_dims[..rank - 1] };
    let outer = numel(outer_dims);
    let mut idx = vec![0usize; outer_dims.len()];
    let (mut so, mut dofs) = (src_base, dst_base);
    for _ in 0..outer {
        if add {
            for (d, &s) in dst[dofs..dofs + run].iter_mut().zip(&src[so..so + run]) {
                *d += s;
            }
        } else {
            dst[dofs..dofs + run].copy_from_slice(&src[so..so + run]);
        }
        for ax in (0..outer_dims.len()).rev() {
            idx[ax] += 1;
            so += ss[ax];
            dofs += ds[ax];
            if idx[ax] < outer_dims[ax] {
                break;
            }
            idx[ax] = 0;
            so -= ss[ax] * outer_dims[ax];
            dofs -= ds[ax] * outer_dims[ax];
        }
    }
}

/// Cyclic shift along each axis: `out[(i + shift) mod n] = in[i]`.
pub fn roll<T: Element>(dims: &[usize], data: &[T], shift: &[isize]) -> Vec<T> {
    let rank = dims.len();
    let norm: Vec<usize> = (0..rank)
        .map(|ax| {
            let n = dims[ax] as isize;
            if n == 0 {
                0
            } else {
                (((shift[ax] % n) + n) % n) as usize
            }
        })
        .collect();
    if norm.iter().all(|&s| s == 0) {
        return data.to_vec();
    }
    let st = strides(dims);
    let n = numel(dims);
    let mut out = vec![T::ZERO; n];
    let mut idx = vec![0usize; rank];
    for &v in data.iter().take(n) {
        let mut dst = 0usize;
        for ax in 0..rank {
            let mut c = idx[ax] + norm[ax];
            if c >= dims[ax] {
                c -= dims[ax];
            }
            dst += c * st[ax];
        }
        out[dst] = v;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_dim_rules() {
        assert_eq!(broadcast_dims(&[2, 3], &[2, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast_dims(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_dims(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_dims(&[2], &[]), Some(vec![2]));
        assert_eq!(broadcast_dims(&[2, 3], &[4]), None);
    }

    #[test]
    fn ew_general_broadcast_matches_manual() {
        // a: [2,1,2], b: [3,1] -> out [2,3,2]
        let a = [1.0f64, 2.0, 10.0, 20.0];
        let b = [100.0f64, 200.0, 300.0];
        let out = ew_broadcast(&[2, 1, 2], &a, &[3, 1], &b, &[2, 3, 2], |x, y| x + y);
        let expect = [
            101.0, 102.0, 201.0, 202.0, 301.0, 302.0, // a[0,0,:]
            110.0, 120.0, 210.0, 220.0, 310.0, 320.0, // a[1,0,:]
        ];
        assert_eq!(out, expect);
    }

    #[test]
    fn reduce_into_sums_broadcast_axes() {
        // g: [2,3], target: [3]
        let g = [1.0f64, 2.0, 3.0, 10.0, 20.0, 30.0];
        let mut acc = [0.0f64; 3];
        reduce_into(&[2, 3], &g, &[3], &mut acc);
        assert_eq!(acc, [11.0, 22.0, 33.0]);
        // interior broadcast: g [2,3,2] onto [2,1,2]
        let g2: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let mut acc2 = [0.0f64; 4];
        reduce_into(&[2, 3, 2], &g2, &[2, 1, 2], &mut acc2);
        assert_eq!(acc2, [0.0 + 2.0 + 4.0, 1.0 + 3.0 + 5.0, 6.0 + 8.0 + 10.0, 7.0 + 9.0 + 11.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        // A: [2,3], B: [3,2]
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let c = matmul_nn(1, 2, 3, 2, &a, &b);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
        // A·Bᵀ with B stored transposed: bt is [2,3]
        let bt = [7.0f64, 9.0, 11.0, 8.0, 10.0, 12.0];
        assert_eq!(matmul_nt(1, 2, 3, 2, &a, &bt), c);
        // Aᵀ·B with A stored transposed: at is [3,2] -> here use matmul_tn(m=3)
        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0]; // [3,2] = original Aᵀ
        assert_eq!(matmul_tn(1, 3, 2, 2, &at, &b), c);
    }

    #[test]
    fn permute_roundtrip() {
        let dims = [2, 3, 4];
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let (pd, pv) = permute(&dims, &data, &[2, 0, 1]);
        assert_eq!(pd, vec![4, 2, 3]);
        let (rd, rv) = permute(&pd, &pv, &invert_perm(&[2, 0, 1]));
        assert_eq!(rd, dims.to_vec());
        assert_eq!(rv, data);
    }

    #[test]
    fn roll_wraps() {
        let data: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let out = roll(&[2, 3], &data, &[0, 1]);
        assert_eq!(out, vec![2.0, 0.0, 1.0, 5.0, 3.0, 4.0]);
        let back = roll(&[2, 3], &out, &[0, -1]);
        assert_eq!(back, data);
        let rows = roll(&[2, 3], &data, &[1, 0]);
        assert_eq!(rows, vec![3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn copy_box_assign_and_add() {
        let src = [1.0f64, 2.0, 3.0, 4.0];
        let mut dst = vec![0.0f64; 9];
        copy_box(&[2, 2], &src, &[3, 3], &mut dst, &[0, 0], &[1, 1], &[2, 2], false);
        assert_eq!(dst, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
        copy_box(&[2, 2], &src, &[3, 3], &mut dst, &[0, 0], &[1, 1], &[2, 2], true);
        assert_eq!(dst[4], 2.0);
    }

    #[test]
    fn conv_extent_formulas() {
        assert_eq!(conv3d_out_extent(32, 3, 2, 1), Some(16));
        assert_eq!(conv3d_out_extent(4, 3, 1, 0), Some(2));
        assert_eq!(conv3d_out_extent(2, 5, 1, 0), None);
        assert_eq!(conv_transpose3d_out_extent(16, 4, 2, 1), Some(32));
    }
}
