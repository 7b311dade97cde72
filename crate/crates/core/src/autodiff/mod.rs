//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] records every operation as it executes; [`Tape::backward`]
//! replays the record once in reverse, accumulating cotangents by summation
//! over all use sites. Gradients are returned for `requires_grad` leaves and
//! freed for interior nodes.
//!
//! Every forward result is checked for NaN/Inf and aborts with the offending
//! op's name; summation order is fixed, so results are bit-reproducible.

pub mod kernels;

mod gradcheck;
pub use gradcheck::{grad_check, REL_ERR_FLOOR};

use crate::error::{Error, Result};
use crate::tensor::{numel, Element, Tensor};
use kernels as kn;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { requires_grad: bool },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    ScalarMul { a: NodeId, s: f64 },
    LeakyRelu { a: NodeId, slope: f64 },
    Matmul { a: NodeId, b: NodeId, batch: usize, m: usize, k: usize, n: usize },
    MatmulTransB { a: NodeId, b: NodeId, batch: usize, m: usize, k: usize, n: usize },
    Softmax { a: NodeId },
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    Conv3d { x: NodeId, k: NodeId, bias: Option<NodeId>, stride: [usize; 3], pad: [usize; 3] },
    ConvT3d { x: NodeId, k: NodeId, bias: Option<NodeId>, stride: [usize; 3], pad: [usize; 3] },
    Reshape { a: NodeId },
    Permute { a: NodeId, perm: Vec<usize> },
    Pad { a: NodeId, before: Vec<usize> },
    Slice { a: NodeId, start: Vec<usize> },
    Roll { a: NodeId, shift: Vec<isize> },
    Concat { parts: Vec<NodeId>, axis: usize },
    GatherRows { table: NodeId, indices: Vec<usize> },
    SumAll { a: NodeId },
    MeanAll { a: NodeId },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of `requires_grad` leaves after a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Operation record for one forward computation.
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
    macs: u64,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), macs: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward multiply-accumulate count over all matmul/conv ops recorded so
    /// far (one fused multiply-add = 1).
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn dims(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.dims()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op: Op::Leaf { requires_grad }, needs_grad: requires_grad });
        id
    }

    /// Leaf that never receives a gradient (inputs, masks, constants).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op, needs_grad: bool) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op, needs_grad });
        Ok(id)
    }

    // -- elementwise ---------------------------------------------------------

    fn ew_binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<NodeId> {
        let (ad, bd) = (self.dims(a).to_vec(), self.dims(b).to_vec());
        let out_dims = kn::broadcast_dims(&ad, &bd)
            .ok_or_else(|| Error::shape(name, format!("cannot broadcast {ad:?} with {bd:?}")))?;
        let data = kn::ew_broadcast(
            &ad,
            self.value(a).as_slice(),
            &bd,
            self.value(b).as_slice(),
            &out_dims,
            f,
        );
        let needs = self.needs(a) || self.needs(b);
        self.push(name, Tensor::from_vec(&out_dims, data)?, op, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew_binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew_binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew_binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        let sv = T::from_f64(s);
        let value = self.value(a).map(|x| x * sv);
        let needs = self.needs(a);
        self.push("mul_scalar", value, Op::ScalarMul { a, s }, needs)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        let sv = T::from_f64(slope);
        let value = self.value(a).map(|x| if x > T::ZERO { x } else { x * sv });
        let needs = self.needs(a);
        self.push("leaky_relu", value, Op::LeakyRelu { a, slope }, needs)
    }

    // -- linear algebra ------------------------------------------------------

    /// Batched matrix product: `a: [.., m, k] · b: [.., k, n]` with equal
    /// leading batch dims.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ad = self.dims(a).to_vec();
        let bd = self.dims(b).to_vec();
        if ad.len() < 2 || bd.len() < 2 {
            return Err(Error::shape("matmul", format!("operands must be >= rank 2, got {ad:?}, {bd:?}")));
        }
        if ad[..ad.len() - 2] != bd[..bd.len() - 2] {
            return Err(Error::shape("matmul", format!("batch dims differ: {ad:?} vs {bd:?}")));
        }
        let (m, k) = (ad[ad.len() - 2], ad[ad.len() - 1]);
        let (k2, n) = (bd[bd.len() - 2], bd[bd.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dims differ: {ad:?} vs {bd:?}")));
        }
        let batch = numel(&ad[..ad.len() - 2]);
        let data = kn::matmul_nn(batch, m, k, n, self.value(a).as_slice(), self.value(b).as_slice());
        self.macs += (batch * m * k * n) as u64;
        let mut out_dims = ad[..ad.len() - 2].to_vec();
        out_dims.extend([m, n]);
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul", Tensor::from_vec(&out_dims, data)?, Op::Matmul { a, b, batch, m, k, n }, needs)
    }

    /// Batched product against a transposed right operand:
    /// `a: [.., m, k] · b: [.., n, k]ᵀ -> [.., m, n]`.
    pub fn matmul_transb(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ad = self.dims(a).to_vec();
        let bd = self.dims(b).to_vec();
        if ad.len() < 2 || bd.len() < 2 {
            return Err(Error::shape("matmul_transb", format!("operands must be >= rank 2, got {ad:?}, {bd:?}")));
        }
        if ad[..ad.len() - 2] != bd[..bd.len() - 2] {
            return Err(Error::shape("matmul_transb", format!("batch dims differ: {ad:?} vs {bd:?}")));
        }
        let (m, k) = (ad[ad.len() - 2], ad[ad.len() - 1]);
        let (n, k2) = (bd[bd.len() - 2], bd[bd.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul_transb", format!("inner dims differ: {ad:?} vs {bd:?}")));
        }
        let batch = numel(&ad[..ad.len() - 2]);
        let data = kn::matmul_nt(batch, m, k, n, self.value(a).as_slice(), self.value(b).as_slice());
        self.macs += (batch * m * k * n) as u64;
        let mut out_dims = ad[..ad.len() - 2].to_vec();
        out_dims.extend([m, n]);
        let needs = self.needs(a) || self.needs(b);
        self.push(
            "matmul_transb",
            Tensor::from_vec(&out_dims, data)?,
            Op::MatmulTransB { a, b, batch, m, k, n },
            needs,
        )
    }

    /// Max-subtracted softmax over the last dim.
    pub fn softmax_lastdim(&mut self, a: NodeId) -> Result<NodeId> {
        let dims = self.dims(a).to_vec();
        if dims.is_empty() || dims[dims.len() - 1] == 0 {
            return Err(Error::shape("softmax", format!("needs a last dim >= 1, got {dims:?}")));
        }
        let cols = dims[dims.len() - 1];
        let rows = numel(&dims) / cols;
        let data = kn::softmax_rows(rows, cols, self.value(a).as_slice());
        let needs = self.needs(a);
        self.push("softmax", Tensor::from_vec(&dims, data)?, Op::Softmax { a }, needs)
    }

    /// Layer normalization over the trailing feature dim, then affine.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let dims = self.dims(a).to_vec();
        if dims.is_empty() {
            return Err(Error::shape("layer_norm", "input must have a feature dim".to_string()));
        }
        let c = dims[dims.len() - 1];
        if self.dims(gamma) != [c] || self.dims(beta) != [c] {
            return Err(Error::shape(
                "layer_norm",
                format!("gamma/beta must be [{c}], got {:?} and {:?}", self.dims(gamma), self.dims(beta)),
            ));
        }
        let positions = numel(&dims) / c;
        let data = kn::layer_norm_fwd(
            positions,
            c,
            self.value(a).as_slice(),
            self.value(gamma).as_slice(),
            self.value(beta).as_slice(),
            eps,
        );
        let needs = self.needs(a) || self.needs(gamma) || self.needs(beta);
        self.push("layer_norm", Tensor::from_vec(&dims, data)?, Op::LayerNorm { a, gamma, beta, eps }, needs)
    }

    // -- convolution ---------------------------------------------------------

    fn conv_geometry(
        name: &'static str,
        x_dims: &[usize],
        k_dims: &[usize],
        transposed: bool,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<([usize; 5], [usize; 5], [usize; 5], bool)> {
        let (batched, x5): (bool, [usize; 5]) = match x_dims.len() {
            4 => (false, [1, x_dims[0], x_dims[1], x_dims[2], x_dims[3]]),
            5 => (true, [x_dims[0], x_dims[1], x_dims[2], x_dims[3], x_dims[4]]),
            _ => {
                return Err(Error::shape(name, format!("input must be rank 4 or 5, got {x_dims:?}")));
            }
        };
        if k_dims.len() != 5 {
            return Err(Error::shape(name, format!("kernel must be rank 5, got {k_dims:?}")));
        }
        let k5 = [k_dims[0], k_dims[1], k_dims[2], k_dims[3], k_dims[4]];
        let (chan_in, chan_out) = if transposed { (k5[4], k5[3]) } else { (k5[3], k5[4]) };
        if x5[4] != chan_in {
            return Err(Error::shape(
                name,
                format!("input channels {} do not match kernel ({chan_in})", x5[4]),
            ));
        }
        let mut out5 = [x5[0], 0, 0, 0, chan_out];
        for ax in 0..3 {
            let ext = if transposed {
                kn::conv_transpose3d_out_extent(x5[1 + ax], k5[ax], stride[ax], pad[ax])
            } else {
                kn::conv3d_out_extent(x5[1 + ax], k5[ax], stride[ax], pad[ax])
            };
            out5[1 + ax] = ext
                .filter(|&e| e >= 1)
                .ok_or_else(|| {
                    Error::shape(name, format!("nonpositive output extent on axis {ax} (input {x_dims:?}, kernel {k_dims:?}, stride {stride:?}, pad {pad:?})"))
                })?;
        }
        Ok((x5, k5, out5, batched))
    }

    /// 3D cross-correlation with zero padding. Input `[N, D, H, W, Ci]` (or
    /// rank 4 without the batch dim), kernel `[kd, kh, kw, Ci, Co]`.
    pub fn conv3d(
        &mut self,
        x: NodeId,
        k: NodeId,
        bias: Option<NodeId>,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<NodeId> {
        let (x5, k5, out5, batched) =
            Self::conv_geometry("conv3d", self.dims(x), self.dims(k), false, stride, pad)?;
        if let Some(b) = bias {
            if self.dims(b) != [k5[4]] {
                return Err(Error::shape("conv3d", format!("bias must be [{}], got {:?}", k5[4], self.dims(b))));
            }
        }
        let data = kn::conv3d_fwd(
            &x5,
            self.value(x).as_slice(),
            &k5,
            self.value(k).as_slice(),
            bias.map(|b| self.value(b).as_slice()),
            stride,
            pad,
            &out5,
        );
        self.macs += (numel(&out5) / out5[4] * k5[0] * k5[1] * k5[2] * k5[3] * k5[4]) as u64;
        let out_dims: Vec<usize> = if batched { out5.to_vec() } else { out5[1..].to_vec() };
        let needs = self.needs(x) || self.needs(k) || bias.map(|b| self.needs(b)).unwrap_or(false);
        self.push("conv3d", Tensor::from_vec(&out_dims, data)?, Op::Conv3d { x, k, bias, stride, pad }, needs)
    }

    /// Transposed 3D convolution: the adjoint of [`Tape::conv3d`] with the
    /// same kernel layout `[kd, kh, kw, Ci, Co]`. Maps `Co` input channels to
    /// `Ci` output channels; output extent `(in-1)*stride - 2*pad + k`.
    pub fn conv3d_transposed(
        &mut self,
        x: NodeId,
        k: NodeId,
        bias: Option<NodeId>,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<NodeId> {
        let (x5, k5, out5, batched) =
            Self::conv_geometry("conv3d_transposed", self.dims(x), self.dims(k), true, stride, pad)?;
        if let Some(b) = bias {
            if self.dims(b) != [k5[3]] {
                return Err(Error::shape(
                    "conv3d_transposed",
                    format!("bias must be [{}], got {:?}", k5[3], self.dims(b)),
                ));
            }
        }
        let mut data = kn::conv3d_adj_input(
            &x5,
            self.value(x).as_slice(),
            &k5,
            self.value(k).as_slice(),
            stride,
            pad,
            &out5,
        );
        if let Some(b) = bias {
            let bs = self.value(b).as_slice();
            for chunk in data.chunks_exact_mut(out5[4]) {
                for (v, &bv) in chunk.iter_mut().zip(bs) {
                    *v = *v + bv;
                }
            }
        }
        self.macs += (numel(&x5) / x5[4] * k5[0] * k5[1] * k5[2] * k5[3] * k5[4]) as u64;
        let out_dims: Vec<usize> = if batched { out5.to_vec() } else { out5[1..].to_vec() };
        let needs = self.needs(x) || self.needs(k) || bias.map(|b| self.needs(b)).unwrap_or(false);
        self.push(
            "conv3d_transposed",
            Tensor::from_vec(&out_dims, data)?,
            Op::ConvT3d { x, k, bias, stride, pad },
            needs,
        )
    }

    // -- data movement -------------------------------------------------------

    pub fn reshape(&mut self, a: NodeId, dims: &[usize]) -> Result<NodeId> {
        if numel(dims) != self.value(a).len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {:?} to {dims:?}", self.dims(a)),
            ));
        }
        let value = self.value(a).clone().reshaped(dims)?;
        let needs = self.needs(a);
        self.push("reshape", value, Op::Reshape { a }, needs)
    }

    pub fn permute(&mut self, a: NodeId, perm: &[usize]) -> Result<NodeId> {
        let dims = self.dims(a).to_vec();
        let mut seen = vec![false; dims.len()];
        if perm.len() != dims.len() || perm.iter().any(|&p| p >= dims.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("invalid permutation {perm:?} for {dims:?}")));
        }
        let (out_dims, data) = kn::permute(&dims, self.value(a).as_slice(), perm);
        let needs = self.needs(a);
        self.push("permute", Tensor::from_vec(&out_dims, data)?, Op::Permute { a, perm: perm.to_vec() }, needs)
    }

    /// Zero-pad each axis by `before[ax]` leading and `after[ax]` trailing
    /// elements.
    pub fn pad_zero(&mut self, a: NodeId, before: &[usize], after: &[usize]) -> Result<NodeId> {
        let dims = self.dims(a).to_vec();
        if before.len() != dims.len() || after.len() != dims.len() {
            return Err(Error::shape("pad_zero", format!("pad spec rank mismatch for {dims:?}")));
        }
        let out_dims: Vec<usize> =
            dims.iter().zip(before.iter().zip(after)).map(|(&d, (&b, &aft))| d + b + aft).collect();
        let mut out = Tensor::zeros(&out_dims);
        kn::copy_box(
            &dims,
            self.value(a).as_slice(),
            &out_dims,
            out.as_mut_slice(),
            &vec![0; dims.len()],
            before,
            &dims,
            false,
        );
        let needs = self.needs(a);
        self.push("pad_zero", out, Op::Pad { a, before: before.to_vec() }, needs)
    }

    /// Axis-aligned sub-box starting at `start` with extents `len`.
    pub fn slice(&mut self, a: NodeId, start: &[usize], len: &[usize]) -> Result<NodeId> {
        let dims = self.dims(a).to_vec();
        if start.len() != dims.len() || len.len() != dims.len() {
            return Err(Error::shape("slice", format!("slice spec rank mismatch for {dims:?}")));
        }
        for ax in 0..dims.len() {
            if start[ax] + len[ax] > dims[ax] || len[ax] == 0 {
                return Err(Error::shape(
                    "slice",
                    format!("range {}..{} out of bounds for axis {ax} of {dims:?}", start[ax], start[ax] + len[ax]),
                ));
            }
        }
        let mut out = Tensor::zeros(len);
        kn::copy_box(
            &dims,
            self.value(a).as_slice(),
            len,
            out.as_mut_slice(),
            start,
            &vec![0; dims.len()],
            len,
            false,
        );
        let needs = self.needs(a);
        self.push("slice", out, Op::Slice { a, start: start.to_vec() }, needs)
    }

    /// Cyclic shift along every axis (`shift[ax]` may be negative).
    pub fn roll(&mut self, a: NodeId, shift: &[isize]) -> Result<NodeId> {
        let dims = self.dims(a).to_vec();
        if shift.len() != dims.len() {
            return Err(Error::shape("roll", format!("shift spec rank mismatch for {dims:?}")));
        }
        let data = kn::roll(&dims, self.value(a).as_slice(), shift);
        let needs = self.needs(a);
        self.push("roll", Tensor::from_vec(&dims, data)?, Op::Roll { a, shift: shift.to_vec() }, needs)
    }

    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat", "needs at least one part"));
        }
        let first = self.dims(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let d = self.dims(p);
            if d.len() != first.len()
                || d.iter().zip(&first).enumerate().any(|(ax, (&a, &b))| ax != axis && a != b)
            {
                return Err(Error::shape("concat", format!("incompatible part dims {d:?} vs {first:?}")));
            }
            axis_total += d[axis];
        }
        let mut out_dims = first.clone();
        out_dims[axis] = axis_total;
        let mut out = Tensor::zeros(&out_dims);
        let mut offset = 0usize;
        for &p in parts {
            let d = self.dims(p).to_vec();
            let mut origin = vec![0usize; d.len()];
            origin[axis] = offset;
            kn::copy_box(
                &d,
                self.value(p).as_slice(),
                &out_dims,
                out.as_mut_slice(),
                &vec![0; d.len()],
                &origin,
                &d,
                false,
            );
            offset += d[axis];
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push("concat", out, Op::Concat { parts: parts.to_vec(), axis }, needs)
    }

    /// Select rows of a `[rows, cols]` table by a static index list
    /// (differentiable into the table via scatter-add).
    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let dims = self.dims(table).to_vec();
        if dims.len() != 2 {
            return Err(Error::shape("gather_rows", format!("table must be rank 2, got {dims:?}")));
        }
        let cols = dims[1];
        if let Some(&bad) = indices.iter().find(|&&i| i >= dims[0]) {
            return Err(Error::shape("gather_rows", format!("index {bad} out of range for table {dims:?}")));
        }
        let src = self.value(table).as_slice();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let needs = self.needs(table);
        self.push(
            "gather_rows",
            Tensor::from_vec(&[indices.len(), cols], data)?,
            Op::GatherRows { table, indices: indices.to_vec() },
            needs,
        )
    }

    // -- reductions ----------------------------------------------------------

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.value(a).sum());
        let needs = self.needs(a);
        self.push("sum_all", value, Op::SumAll { a }, needs)
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::contract("mean_all", "empty tensor"));
        }
        let value = Tensor::scalar(self.value(a).sum() * T::from_f64(1.0 / n as f64));
        let needs = self.needs(a);
        self.push("mean_all", value, Op::MeanAll { a }, needs)
    }

    /// Mean squared error between two same-shaped tensors.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape("mse", format!("dims {:?} vs {:?}", self.dims(a), self.dims(b))));
        }
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean_all(sq)
    }

    // -- backward ------------------------------------------------------------

    fn accum(grads: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>) {
        match &mut grads[id.0] {
            Some(existing) => {
                debug_assert_eq!(existing.dims(), delta.dims());
                for (dst, &src) in existing.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                    *dst += src;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Accumulate `g` (shaped like the op output) onto input `id`, reducing
    /// over broadcast axes.
    fn accum_reduced(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g_dims: &[usize], g: &[T]) {
        let target = self.dims(id).to_vec();
        if grads[id.0].is_none() {
            grads[id.0] = Some(Tensor::zeros(&target));
        }
        kn::reduce_into(g_dims, g, &target, grads[id.0].as_mut().unwrap().as_mut_slice());
    }

    /// Reverse pass from a scalar loss. Gradients of `requires_grad` leaves
    /// are retained; interior cotangents are freed as soon as they have been
    /// propagated.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got dims {:?}", self.dims(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.dims(loss), T::ONE));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let g = match &self.nodes[i].op {
                Op::Leaf { .. } => continue, // leaf grads stay resident
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue, // node did not contribute to the loss
                },
            };
            match self.nodes[i].op.clone() {
                Op::Leaf { .. } => unreachable!(),
                Op::Add { a, b } => {
                    if self.needs(a) {
                        self.accum_reduced(&mut grads, a, g.dims(), g.as_slice());
                    }
                    if self.needs(b) {
                        self.accum_reduced(&mut grads, b, g.dims(), g.as_slice());
                    }
                }
                Op::Sub { a, b } => {
                    if self.needs(a) {
                        self.accum_reduced(&mut grads, a, g.dims(), g.as_slice());
                    }
                    if self.needs(b) {
                        let neg = g.map(|v| -v);
                        self.accum_reduced(&mut grads, b, neg.dims(), neg.as_slice());
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(a) {
                        let gb = kn::ew_broadcast(
                            g.dims(),
                            g.as_slice(),
                            self.dims(b),
                            self.value(b).as_slice(),
                            g.dims(),
                            |x, y| x * y,
                        );
                        self.accum_reduced(&mut grads, a, g.dims(), &gb);
                    }
                    if self.needs(b) {
                        let ga = kn::ew_broadcast(
                            g.dims(),
                            g.as_slice(),
                            self.dims(a),
                            self.value(a).as_slice(),
                            g.dims(),
                            |x, y| x * y,
                        );
                        self.accum_reduced(&mut grads, b, g.dims(), &ga);
                    }
                }
                Op::ScalarMul { a, s } => {
                    let sv = T::from_f64(s);
                    Self::accum(&mut grads, a, g.map(|v| v * sv));
                }
                Op::LeakyRelu { a, slope } => {
                    let sv = T::from_f64(slope);
                    let x = self.value(a);
                    let delta = Tensor::from_vec(
                        g.dims(),
                        g.as_slice()
                            .iter()
                            .zip(x.as_slice())
                            .map(|(&gv, &xv)| if xv > T::ZERO { gv } else { gv * sv })
                            .collect(),
                    )?;
                    Self::accum(&mut grads, a, delta);
                }
                Op::Matmul { a, b, batch, m, k, n } => {
                    if self.needs(a) {
                        let da = kn::matmul_nt(batch, m, n, k, g.as_slice(), self.value(b).as_slice());
                        Self::accum(&mut grads, a, Tensor::from_vec(self.dims(a), da)?);
                    }
                    if self.needs(b) {
                        let db = kn::matmul_tn(batch, m, k, n, self.value(a).as_slice(), g.as_slice());
                        Self::accum(&mut grads, b, Tensor::from_vec(self.dims(b), db)?);
                    }
                }
                Op::Softmax { a } => {
                    let dims = self.dims(a).to_vec();
                    let cols = dims[dims.len() - 1];
                    let rows = numel(&dims) / cols;
                    let gx = kn::softmax_rows_vjp(rows, cols, self.nodes[i].value.as_slice(), g.as_slice());
                    Self::accum(&mut grads, a, Tensor::from_vec(&dims, gx)?);
                }
                Op::LayerNorm { a, gamma, beta, eps } => {
                    let dims = self.dims(a).to_vec();
                    let c = dims[dims.len() - 1];
                    let positions = numel(&dims) / c;
                    let mut g_gamma = vec![T::ZERO; c];
                    let mut g_beta = vec![T::ZERO; c];
                    let gx = kn::layer_norm_vjp(
                        positions,
                        c,
                        self.value(a).as_slice(),
                        self.value(gamma).as_slice(),
                        eps,
                        g.as_slice(),
                        &mut g_gamma,
                        &mut g_beta,
                    );
                    if self.needs(a) {
                        Self::accum(&mut grads, a, Tensor::from_vec(&dims, gx)?);
                    }
                    if self.needs(gamma) {
                        Self::accum(&mut grads, gamma, Tensor::from_vec(&[c], g_gamma)?);
                    }
                    if self.needs(beta) {
                        Self::accum(&mut grads, beta, Tensor::from_vec(&[c], g_beta)?);
                    }
                }
                Op::Conv3d { x, k, bias, stride, pad } => {
                    let (x5, k5, out5, _) =
                        Self::conv_geometry("conv3d", self.dims(x), self.dims(k), false, stride, pad)?;
                    if self.needs(x) {
                        let gx = kn::conv3d_adj_input(&out5, g.as_slice(), &k5, self.value(k).as_slice(), stride, pad, &x5);
                        Self::accum(&mut grads, x, Tensor::from_vec(self.dims(x), gx)?);
                    }
                    if self.needs(k) {
                        let gk = kn::conv3d_kernel_grad(&x5, self.value(x).as_slice(), &out5, g.as_slice(), stride, pad, &k5);
                        Self::accum(&mut grads, k, Tensor::from_vec(self.dims(k), gk)?);
                    }
                    if let Some(b) = bias {
                        if self.needs(b) {
                            let co = k5[4];
                            let mut gb = Tensor::zeros(&[co]);
                            kn::reduce_into(&out5, g.as_slice(), &[co], gb.as_mut_slice());
                            Self::accum(&mut grads, b, gb);
                        }
                    }
                }
                Op::ConvT3d { x, k, bias, stride, pad } => {
                    let (x5, k5, out5, _) =
                        Self::conv_geometry("conv3d_transposed", self.dims(x), self.dims(k), true, stride, pad)?;
                    if self.needs(x) {
                        let gx = kn::conv3d_fwd(&out5, g.as_slice(), &k5, self.value(k).as_slice(), None, stride, pad, &x5);
                        Self::accum(&mut grads, x, Tensor::from_vec(self.dims(x), gx)?);
                    }
                    if self.needs(k) {
                        let gk = kn::conv3d_kernel_grad(&out5, g.as_slice(), &x5, self.value(x).as_slice(), stride, pad, &k5);
                        Self::accum(&mut grads, k, Tensor::from_vec(self.dims(k), gk)?);
                    }
                    if let Some(b) = bias {
                        if self.needs(b) {
                            let ci = k5[3];
                            let mut gb = Tensor::zeros(&[ci]);
                            kn::reduce_into(&out5, g.as_slice(), &[ci], gb.as_mut_slice());
                            Self::accum(&mut grads, b, gb);
                        }
                    }
                }
                Op::Reshape { a } => {
                    Self::accum(&mut grads, a, g.clone().reshaped(self.dims(a))?);
                }
                Op::Permute { a, perm } => {
                    let inv = kn::invert_perm(&perm);
                    let (dims, data) = kn::permute(g.dims(), g.as_slice(), &inv);
                    Self::accum(&mut grads, a, Tensor::from_vec(&dims, data)?);
                }
                Op::Pad { a, before } => {
                    let in_dims = self.dims(a).to_vec();
                    let mut delta = Tensor::zeros(&in_dims);
                    kn::copy_box(
                        g.dims(),
                        g.as_slice(),
                        &in_dims,
                        delta.as_mut_slice(),
                        &before,
                        &vec![0; in_dims.len()],
                        &in_dims,
                        false,
                    );
                    Self::accum(&mut grads, a, delta);
                }
                Op::Slice { a, start } => {
                    let in_dims = self.dims(a).to_vec();
                    if grads[a.0].is_none() {
                        grads[a.0] = Some(Tensor::zeros(&in_dims));
                    }
                    let box_dims = g.dims().to_vec();
                    kn::copy_box(
                        g.dims(),
                        g.as_slice(),
                        &in_dims,
                        grads[a.0].as_mut().unwrap().as_mut_slice(),
                        &vec![0; in_dims.len()],
                        &start,
                        &box_dims,
                        true,
                    );
                }
                Op::Roll { a, shift } => {
                    let inv: Vec<isize> = shift.iter().map(|&s| -s).collect();
                    let data = kn::roll(g.dims(), g.as_slice(), &inv);
                    Self::accum(&mut grads, a, Tensor::from_vec(g.dims(), data)?);
                }
                Op::Concat { parts, axis } => {
                    let mut offset = 0usize;
                    for &p in &parts {
                        let d = self.dims(p).to_vec();
                        if self.needs(p) {
                            if grads[p.0].is_none() {
                                grads[p.0] = Some(Tensor::zeros(&d));
                            }
                            let mut origin = vec![0usize; d.len()];
                            origin[axis] = offset;
                            kn::copy_box(
                                g.dims(),
                                g.as_slice(),
                                &d,
                                grads[p.0].as_mut().unwrap().as_mut_slice(),
                                &origin,
                                &vec![0; d.len()],
                                &d,
                                true,
                            );
                        }
                        offset += d[axis];
                    }
                }
                Op::GatherRows { table, indices } => {
                    let tdims = self.dims(table).to_vec();
                    if grads[table.0].is_none() {
                        grads[table.0] = Some(Tensor::zeros(&tdims));
                    }
                    let gt = grads[table.0].as_mut().unwrap().as_mut_slice();
                    let cols = tdims[1];
                    for (row, &tix) in indices.iter().enumerate() {
                        let src = &g.as_slice()[row * cols..(row + 1) * cols];
                        for (dst, &v) in gt[tix * cols..(tix + 1) * cols].iter_mut().zip(src) {
                            *dst += v;
                        }
                    }
                }
                Op::SumAll { a } => {
                    let gv = g.scalar_value();
                    Self::accum(&mut grads, a, Tensor::full(self.dims(a), gv));
                }
                Op::MeanAll { a } => {
                    let n = self.value(a).len();
                    let gv = g.scalar_value() * T::from_f64(1.0 / n as f64);
                    Self::accum(&mut grads, a, Tensor::full(self.dims(a), gv));
                }
            }
        }

        // Retain only requires_grad leaf gradients.
        for (i, node) in self.nodes.iter().enumerate() {
            let keep = matches!(node.op, Op::Leaf { requires_grad: true });
            if !keep {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}
