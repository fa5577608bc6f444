//! Reverse-mode automatic differentiation on a tape of primitive operations.
//!
//! Nodes are appended in execution order, so the tape is topologically sorted
//! by construction and backward is a single reverse sweep. Gradients
//! accumulate: `backward` adds into whatever gradients are already stored, and
//! `zero_grads` resets them.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// Handle to one tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Convolution geometry, resolved at forward time.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn patch_rows(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

enum Op<S> {
    /// Inputs, captured parameters, constants.
    Leaf,
    Conv2d { input: NodeId, weight: NodeId, bias: NodeId, geom: ConvGeom, patches: Vec<S> },
    /// argmax holds the flat input index backing each output element.
    MaxPool2d { input: NodeId, argmax: Vec<u32> },
    Dense { input: NodeId, weight: NodeId, bias: NodeId },
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale { input: NodeId, factor: f64 },
    Offset(NodeId),
    Slice { input: NodeId, start: usize },
    Mean(NodeId),
    ReduceMax { input: NodeId, arg: u32 },
    Reshape(NodeId),
}

struct Node<S> {
    tensor: Tensor<S>,
    op: Op<S>,
}

/// Tape of recorded operations; owns every intermediate tensor.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor<S>, op: Op<S>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { tensor, op });
        id
    }

    fn tensor(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.idx()].tensor
    }

    /// The tensor held by a node.
    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        self.tensor(id)
    }

    /// The accumulated gradient of a node, if any backward deposited one.
    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        self.tensor(id).grad()
    }

    /// Records an input (leaf) tensor; gradients flow into it but no further.
    pub fn input(&mut self, tensor: Tensor<S>) -> NodeId {
        self.push(tensor, Op::Leaf)
    }

    /// Records a scalar constant leaf.
    pub fn constant(&mut self, v: S) -> NodeId {
        self.push(Tensor::scalar(v), Op::Leaf)
    }

    /// Batched cross-correlation.
    ///
    /// `input` is [batch, in_c, h, w] (a bare [in_c, h, w] is treated as
    /// batch 1), `weight` is [out_c, in_c, k, k], `bias` is [out_c]. Output is
    /// [batch, out_c, out_h, out_w].
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be ≥ 1".into()));
        }
        let in_shape = self.tensor(input).shape().to_vec();
        let w_shape = self.tensor(weight).shape().to_vec();
        let b_shape = self.tensor(bias).shape().to_vec();
        let (batch, in_c, in_h, in_w) = match in_shape.as_slice() {
            [b, c, h, w] => (*b, *c, *h, *w),
            [c, h, w] => (1, *c, *h, *w),
            other => return Err(Error::Shape(format!("conv2d input shape {other:?}"))),
        };
        let (out_c, w_in_c, kh, kw) = match w_shape.as_slice() {
            [o, c, kh, kw] => (*o, *c, *kh, *kw),
            other => return Err(Error::Shape(format!("conv2d weight shape {other:?}"))),
        };
        if kh != kw {
            return Err(Error::Shape(format!("only square kernels supported, got {kh}×{kw}")));
        }
        if w_in_c != in_c {
            return Err(Error::Shape(format!(
                "kernel expects {w_in_c} input channels, input has {in_c}"
            )));
        }
        if b_shape != [out_c] {
            return Err(Error::Shape(format!("conv2d bias shape {b_shape:?}, want [{out_c}]")));
        }
        if in_h + 2 * padding < kh || in_w + 2 * padding < kw {
            return Err(Error::Shape(format!(
                "kernel {kh}×{kw} larger than padded input {in_h}×{in_w}+{padding}"
            )));
        }
        let out_h = (in_h + 2 * padding - kh) / stride + 1;
        let out_w = (in_w + 2 * padding - kw) / stride + 1;
        let geom = ConvGeom {
            batch,
            in_c,
            in_h,
            in_w,
            out_c,
            kernel: kh,
            stride,
            padding,
            out_h,
            out_w,
        };

        let rows = geom.patch_rows();
        let cols = geom.out_positions();
        let mut patches = vec![S::zero(); batch * rows * cols];
        let image = in_c * in_h * in_w;
        for b in 0..batch {
            im2col(
                &self.tensor(input).values()[b * image..(b + 1) * image],
                &geom,
                &mut patches[b * rows * cols..(b + 1) * rows * cols],
            );
        }

        let mut out = vec![S::zero(); batch * out_c * cols];
        let w_vals = self.tensor(weight).values();
        let b_vals = self.tensor(bias).values();
        for b in 0..batch {
            // out_b [out_c, cols] = W [out_c, rows] · patches_b [rows, cols]
            S::gemm(
                out_c,
                rows,
                cols,
                S::one(),
                w_vals,
                rows as isize,
                1,
                &patches[b * rows * cols..(b + 1) * rows * cols],
                cols as isize,
                1,
                S::zero(),
                &mut out[b * out_c * cols..(b + 1) * out_c * cols],
                cols as isize,
                1,
            );
        }
        for b in 0..batch {
            for oc in 0..out_c {
                let base = (b * out_c + oc) * cols;
                let bias_v = b_vals[oc];
                for v in &mut out[base..base + cols] {
                    *v += bias_v;
                }
            }
        }

        let out_shape: Vec<usize> = if in_shape.len() == 4 {
            vec![batch, out_c, out_h, out_w]
        } else {
            vec![out_c, out_h, out_w]
        };
        let tensor = Tensor::from_values(&out_shape, out)?;
        Ok(self.push(tensor, Op::Conv2d { input, weight, bias, geom, patches }))
    }

    /// Batched max pooling over square windows; backward routes each window's
    /// gradient to its first maximal element.
    pub fn maxpool2d(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        if window == 0 || stride == 0 {
            return Err(Error::Parameter("maxpool2d window and stride must be ≥ 1".into()));
        }
        let in_shape = self.tensor(input).shape().to_vec();
        let (batch, channels, in_h, in_w) = match in_shape.as_slice() {
            [b, c, h, w] => (*b, *c, *h, *w),
            [c, h, w] => (1, *c, *h, *w),
            other => return Err(Error::Shape(format!("maxpool2d input shape {other:?}"))),
        };
        if window > in_h || window > in_w {
            return Err(Error::Shape(format!(
                "pool window {window} larger than input {in_h}×{in_w}"
            )));
        }
        let out_h = (in_h - window) / stride + 1;
        let out_w = (in_w - window) / stride + 1;

        let vals = self.tensor(input).values();
        let mut out = vec![S::zero(); batch * channels * out_h * out_w];
        let mut argmax = vec![0u32; out.len()];
        let mut o = 0;
        for bc in 0..batch * channels {
            let plane = bc * in_h * in_w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = S::neg_infinity();
                    let mut best_idx = 0u32;
                    for wy in 0..window {
                        let iy = oy * stride + wy;
                        let row = plane + iy * in_w + ox * stride;
                        for wx in 0..window {
                            let v = vals[row + wx];
                            if v > best {
                                best = v;
                                best_idx = (row + wx) as u32;
                            }
                        }
                    }
                    out[o] = best;
                    argmax[o] = best_idx;
                    o += 1;
                }
            }
        }

        let out_shape: Vec<usize> = if in_shape.len() == 4 {
            vec![batch, channels, out_h, out_w]
        } else {
            vec![channels, out_h, out_w]
        };
        let tensor = Tensor::from_values(&out_shape, out)?;
        Ok(self.push(tensor, Op::MaxPool2d { input, argmax }))
    }

    /// Affine map: input [batch, k] × weight [k, n] + bias [n] → [batch, k→n].
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let in_shape = self.tensor(input).shape().to_vec();
        let w_shape = self.tensor(weight).shape().to_vec();
        let b_shape = self.tensor(bias).shape().to_vec();
        let (batch, k) = match in_shape.as_slice() {
            [b, k] => (*b, *k),
            [k] => (1, *k),
            other => return Err(Error::Shape(format!("dense input shape {other:?}"))),
        };
        let (wk, n) = match w_shape.as_slice() {
            [wk, n] => (*wk, *n),
            other => return Err(Error::Shape(format!("dense weight shape {other:?}"))),
        };
        if wk != k {
            return Err(Error::Shape(format!("dense input width {k} vs weight rows {wk}")));
        }
        if b_shape != [n] {
            return Err(Error::Shape(format!("dense bias shape {b_shape:?}, want [{n}]")));
        }

        let mut out = vec![S::zero(); batch * n];
        S::gemm(
            batch,
            k,
            n,
            S::one(),
            self.tensor(input).values(),
            k as isize,
            1,
            self.tensor(weight).values(),
            n as isize,
            1,
            S::zero(),
            &mut out,
            n as isize,
            1,
        );
        let b_vals = self.tensor(bias).values();
        for row in out.chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b_vals) {
                *v += *bv;
            }
        }

        let out_shape: Vec<usize> = if in_shape.len() == 2 { vec![batch, n] } else { vec![n] };
        let tensor = Tensor::from_values(&out_shape, out)?;
        Ok(self.push(tensor, Op::Dense { input, weight, bias }))
    }

    fn map(&mut self, input: NodeId, op: Op<S>, f: impl Fn(S) -> S) -> NodeId {
        let t = self.tensor(input);
        let values: Vec<S> = t.values().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_values(&shape, values).expect("same shape"), op)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Relu(x), |v| if v > S::zero() { v } else { S::zero() })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Exp(x), |v| v.exp())
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Abs(x), |v| v.abs())
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Square(x), |v| v * v)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let s = S::from_f64(factor);
        self.map(x, Op::Scale { input: x, factor }, |v| v * s)
    }

    pub fn offset(&mut self, x: NodeId, delta: f64) -> NodeId {
        let d = S::from_f64(delta);
        self.map(x, Op::Offset(x), |v| v + d)
    }

    fn zip(&mut self, a: NodeId, b: NodeId, op: Op<S>, f: impl Fn(S, S) -> S) -> Result<NodeId> {
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on shapes {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let values: Vec<S> = ta.values().iter().zip(tb.values()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::from_values(&shape, values).expect("same shape"), op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Contiguous slice of a vector-shaped node: elements start..start+len.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.tensor(x);
        if start + len > t.len() {
            return Err(Error::Shape(format!(
                "slice {start}..{} of a {}-element node",
                start + len,
                t.len()
            )));
        }
        let values = t.values()[start..start + len].to_vec();
        Ok(self.push(Tensor::from_values(&[len], values)?, Op::Slice { input: x, start }))
    }

    /// Mean of all elements → scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let t = self.tensor(x);
        let n = S::from_f64(t.len() as f64);
        let sum = t.values().iter().fold(S::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(sum / n), Op::Mean(x))
    }

    /// Maximum over all elements → scalar; first maximal element wins ties.
    pub fn reduce_max(&mut self, x: NodeId) -> NodeId {
        let t = self.tensor(x);
        assert!(!t.is_empty(), "reduce_max on empty tensor");
        let mut best = t.values()[0];
        let mut arg = 0u32;
        for (i, &v) in t.values().iter().enumerate().skip(1) {
            if v > best {
                best = v;
                arg = i as u32;
            }
        }
        self.push(Tensor::scalar(best), Op::ReduceMax { input: x, arg })
    }

    /// Same data, different shape.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.tensor(x);
        let len: usize = shape.iter().product();
        if len != t.len() {
            return Err(Error::Shape(format!(
                "reshape {:?} ({} values) to {shape:?} ({len})",
                t.shape(),
                t.len()
            )));
        }
        let values = t.values().to_vec();
        Ok(self.push(Tensor::from_values(shape, values)?, Op::Reshape(x)))
    }

    /// Reverse sweep from a scalar loss; gradients accumulate into every node
    /// the loss depends on. Nodes whose incoming gradient is entirely zero are
    /// skipped (their subgraph receives nothing).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let loss_t = self.tensor(loss);
        if loss_t.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_t.shape()
            )));
        }

        let mut scratch: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        scratch[loss.idx()] = Some(vec![S::one()]);

        for i in (0..=loss.idx()).rev() {
            let Some(g) = scratch[i].take() else { continue };
            if g.iter().all(|&v| v == S::zero()) {
                scratch[i] = Some(g);
                continue;
            }
            self.backward_node(i, &g, &mut scratch);
            scratch[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(scratch) {
            if let Some(g) = g {
                node.tensor.accumulate_grad(g);
            }
        }
        Ok(())
    }

    /// Drops all stored gradients.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.tensor.zero_grad();
        }
    }

    /// Activation pattern of the recorded graph: relu and abs input signs,
    /// pooling argmax choices, reduce_max winners. Two forward passes with
    /// equal signatures lie on the same smooth branch of the piecewise
    /// network; a finite-difference probe is only meaningful between such
    /// points, never across a branch boundary.
    pub(crate) fn kink_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(x) => {
                    sig.push(i as u32);
                    sig.extend(self.tensor(*x).values().iter().map(|&v| (v > S::zero()) as u32));
                }
                Op::Abs(x) => {
                    sig.push(i as u32);
                    sig.extend(self.tensor(*x).values().iter().map(|&v| {
                        if v > S::zero() {
                            2
                        } else {
                            (v < S::zero()) as u32
                        }
                    }));
                }
                Op::MaxPool2d { argmax, .. } => {
                    sig.push(i as u32);
                    sig.extend_from_slice(argmax);
                }
                Op::ReduceMax { arg, .. } => {
                    sig.push(i as u32);
                    sig.push(*arg);
                }
                _ => {}
            }
        }
        sig
    }

    fn backward_node(&self, i: usize, g: &[S], scratch: &mut [Option<Vec<S>>]) {
        fn grab<'a, S: Scalar>(scratch: &'a mut [Option<Vec<S>>], id: NodeId, len: usize) -> &'a mut [S] {
            let slot = &mut scratch[id.idx()];
            if slot.is_none() {
                *slot = Some(vec![S::zero(); len]);
            }
            slot.as_mut().unwrap()
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Relu(x) => {
                let y = self.tensor(NodeId(i as u32)).values();
                let dst = grab(scratch, *x, y.len());
                for j in 0..y.len() {
                    if y[j] > S::zero() {
                        dst[j] += g[j];
                    }
                }
            }
            Op::Tanh(x) => {
                let y = self.tensor(NodeId(i as u32)).values();
                let dst = grab(scratch, *x, y.len());
                for j in 0..y.len() {
                    dst[j] += g[j] * (S::one() - y[j] * y[j]);
                }
            }
            Op::Exp(x) => {
                let y = self.tensor(NodeId(i as u32)).values();
                let dst = grab(scratch, *x, y.len());
                for j in 0..y.len() {
                    dst[j] += g[j] * y[j];
                }
            }
            Op::Abs(x) => {
                let xv = self.tensor(*x).values();
                let dst = grab(scratch, *x, xv.len());
                for j in 0..xv.len() {
                    // Subgradient 0 at x = 0.
                    if xv[j] > S::zero() {
                        dst[j] += g[j];
                    } else if xv[j] < S::zero() {
                        dst[j] -= g[j];
                    }
                }
            }
            Op::Square(x) => {
                let xv = self.tensor(*x).values();
                let two = S::from_f64(2.0);
                let dst = grab(scratch, *x, xv.len());
                for j in 0..xv.len() {
                    dst[j] += g[j] * two * xv[j];
                }
            }
            Op::Add(a, b) => {
                let dst = grab(scratch, *a, g.len());
                for j in 0..g.len() {
                    dst[j] += g[j];
                }
                let dst = grab(scratch, *b, g.len());
                for j in 0..g.len() {
                    dst[j] += g[j];
                }
            }
            Op::Sub(a, b) => {
                let dst = grab(scratch, *a, g.len());
                for j in 0..g.len() {
                    dst[j] += g[j];
                }
                let dst = grab(scratch, *b, g.len());
                for j in 0..g.len() {
                    dst[j] -= g[j];
                }
            }
            Op::Scale { input, factor } => {
                let f = S::from_f64(*factor);
                let dst = grab(scratch, *input, g.len());
                for j in 0..g.len() {
                    dst[j] += g[j] * f;
                }
            }
            Op::Offset(input) => {
                let dst = grab(scratch, *input, g.len());
                for j in 0..g.len() {
                    dst[j] += g[j];
                }
            }
            Op::Slice { input, start } => {
                let len = self.tensor(*input).len();
                let dst = grab(scratch, *input, len);
                for j in 0..g.len() {
                    dst[start + j] += g[j];
                }
            }
            Op::Mean(x) => {
                let len = self.tensor(*x).len();
                let w = g[0] / S::from_f64(len as f64);
                let dst = grab(scratch, *x, len);
                for v in dst.iter_mut() {
                    *v += w;
                }
            }
            Op::ReduceMax { input, arg } => {
                let len = self.tensor(*input).len();
                let dst = grab(scratch, *input, len);
                dst[*arg as usize] += g[0];
            }
            Op::Reshape(x) => {
                let dst = grab(scratch, *x, g.len());
                for j in 0..g.len() {
                    dst[j] += g[j];
                }
            }
            Op::Dense { input, weight, bias } => {
                let x = self.tensor(*input);
                let w = self.tensor(*weight);
                let (batch, k) = match x.shape() {
                    [b, k] => (*b, *k),
                    [k] => (1, *k),
                    _ => unreachable!(),
                };
                let n = w.shape()[1];

                // dX [batch, k] += g [batch, n] · Wᵀ [n, k]
                let dst = grab(scratch, *input, batch * k);
                S::gemm(batch, n, k, S::one(), g, n as isize, 1, w.values(), 1, n as isize, S::one(), dst, k as isize, 1);
                // dW [k, n] += Xᵀ [k, batch] · g [batch, n]
                let dst = grab(scratch, *weight, k * n);
                S::gemm(k, batch, n, S::one(), x.values(), 1, k as isize, g, n as isize, 1, S::one(), dst, n as isize, 1);
                // db [n] += column sums of g
                let dst = grab(scratch, *bias, n);
                for row in g.chunks(n) {
                    for (d, &gv) in dst.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
            }
            Op::Conv2d { input, weight, bias, geom, patches } => {
                let rows = geom.patch_rows();
                let cols = geom.out_positions();
                let w = self.tensor(*weight);
                let image = geom.in_c * geom.in_h * geom.in_w;

                // dW [out_c, rows] += Σ_b dOut_b [out_c, cols] · patches_bᵀ [cols, rows]
                let dst = grab(scratch, *weight, w.len());
                for b in 0..geom.batch {
                    S::gemm(
                        geom.out_c,
                        cols,
                        rows,
                        S::one(),
                        &g[b * geom.out_c * cols..(b + 1) * geom.out_c * cols],
                        cols as isize,
                        1,
                        &patches[b * rows * cols..(b + 1) * rows * cols],
                        1,
                        cols as isize,
                        S::one(),
                        dst,
                        rows as isize,
                        1,
                    );
                }
                // db [out_c] += Σ_b,positions dOut
                let dst = grab(scratch, *bias, geom.out_c);
                for b in 0..geom.batch {
                    for oc in 0..geom.out_c {
                        let base = (b * geom.out_c + oc) * cols;
                        let mut acc = S::zero();
                        for &gv in &g[base..base + cols] {
                            acc += gv;
                        }
                        dst[oc] += acc;
                    }
                }
                // dInput via dPatches = Wᵀ · dOut_b, scattered back per image.
                let mut dpatches = vec![S::zero(); rows * cols];
                let dst = grab(scratch, *input, geom.batch * image);
                for b in 0..geom.batch {
                    S::gemm(
                        rows,
                        geom.out_c,
                        cols,
                        S::one(),
                        w.values(),
                        1,
                        rows as isize,
                        &g[b * geom.out_c * cols..(b + 1) * geom.out_c * cols],
                        cols as isize,
                        1,
                        S::zero(),
                        &mut dpatches,
                        cols as isize,
                        1,
                    );
                    col2im(&dpatches, geom, &mut dst[b * image..(b + 1) * image]);
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let len = self.tensor(*input).len();
                let dst = grab(scratch, *input, len);
                for (o, &src) in argmax.iter().enumerate() {
                    dst[src as usize] += g[o];
                }
            }
        }
    }
}

/// Gathers conv patches: `patches[(c·k+ky)·k+kx][oy·out_w+ox] =
/// input[c][oy·stride+ky−padding][ox·stride+kx−padding]` (zero outside).
fn im2col<S: Scalar>(input: &[S], geom: &ConvGeom, patches: &mut [S]) {
    let k = geom.kernel;
    let cols = geom.out_positions();
    for c in 0..geom.in_c {
        let plane = c * geom.in_h * geom.in_w;
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * cols;
                for oy in 0..geom.out_h {
                    let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                    let dst = &mut patches[row + oy * geom.out_w..row + (oy + 1) * geom.out_w];
                    if iy < 0 || iy >= geom.in_h as isize {
                        for v in dst.iter_mut() {
                            *v = S::zero();
                        }
                        continue;
                    }
                    let src_row = plane + iy as usize * geom.in_w;
                    if geom.stride == 1 {
                        // ix = ox + kx − padding: a shifted copy of the input row.
                        let shift = kx as isize - geom.padding as isize;
                        let ox0 = (-shift).max(0) as usize;
                        let ox1 = (geom.in_w as isize - shift).clamp(0, geom.out_w as isize) as usize;
                        for v in &mut dst[..ox0.min(geom.out_w)] {
                            *v = S::zero();
                        }
                        if ox1 > ox0 {
                            let ix0 = (ox0 as isize + shift) as usize;
                            dst[ox0..ox1].copy_from_slice(&input[src_row + ix0..src_row + ix0 + (ox1 - ox0)]);
                        }
                        for v in &mut dst[ox1.max(ox0)..] {
                            *v = S::zero();
                        }
                    } else {
                        for (ox, v) in dst.iter_mut().enumerate() {
                            let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                            *v = if ix < 0 || ix >= geom.in_w as isize {
                                S::zero()
                            } else {
                                input[src_row + ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatters patch gradients back onto the input image (adjoint of im2col).
fn col2im<S: Scalar>(dpatches: &[S], geom: &ConvGeom, dinput: &mut [S]) {
    let k = geom.kernel;
    let cols = geom.out_positions();
    for c in 0..geom.in_c {
        let plane = c * geom.in_h * geom.in_w;
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * cols;
                for oy in 0..geom.out_h {
                    let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                    if iy < 0 || iy >= geom.in_h as isize {
                        continue;
                    }
                    let src = &dpatches[row + oy * geom.out_w..row + (oy + 1) * geom.out_w];
                    let dst_row = plane + iy as usize * geom.in_w;
                    if geom.stride == 1 {
                        let shift = kx as isize - geom.padding as isize;
                        let ox0 = (-shift).max(0) as usize;
                        let ox1 = (geom.in_w as isize - shift).clamp(0, geom.out_w as isize) as usize;
                        if ox1 > ox0 {
                            let ix0 = (ox0 as isize + shift) as usize;
                            for (d, s) in dinput[dst_row + ix0..dst_row + ix0 + (ox1 - ox0)]
                                .iter_mut()
                                .zip(&src[ox0..ox1])
                            {
                                *d += *s;
                            }
                        }
                    } else {
                        for (ox, &s) in src.iter().enumerate() {
                            let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                            if ix >= 0 && ix < geom.in_w as isize {
                                dinput[dst_row + ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}
