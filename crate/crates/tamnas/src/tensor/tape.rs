//! Reverse-mode automatic differentiation over an append-only operation tape.
//!
//! Each operation records its parents and enough saved state to run its
//! local backward rule. Nodes are appended in execution order, so a single
//! reverse sweep visits every node after all of its consumers.

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Batch-norm behaviour switch; Train consumes batch statistics and updates
/// the running ones, Eval reads the running statistics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
struct BnSaved {
    xhat: Vec<f32>,
    inv_std: Vec<f64>,
    train: bool,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize },
    DwConv2d { x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, saved: BnSaved },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f32 },
    GlobalAvgPool { x: NodeId },
    FullyConnected { x: NodeId, w: NodeId, b: NodeId },
    Matmul { a: NodeId, b: NodeId },
    Bmm { a: NodeId, b: NodeId },
    Transpose12 { x: NodeId },
    Softmax { x: NodeId, axis: usize },
    Concat { a: NodeId, b: NodeId, axis: usize },
    Split { x: NodeId, axis: usize, start: usize },
    ChannelShuffle { x: NodeId, groups: usize },
    Reshape { x: NodeId },
    ChannelScale { x: NodeId, gate: NodeId },
    CrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<f32> },
    KlDiv { p: NodeId, q: NodeId, p_probs: Vec<f32>, q_probs: Vec<f32>, row_kl: Vec<f64> },
    Sum { x: NodeId },
}

struct Node {
    value: Tensor,
    scalar64: Option<f64>,
    op: Op,
    param_name: Option<String>,
    needs_grad: bool,
}

/// Single-use computation record. Build one per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    kink_sig: u64,
    param_ids: std::collections::HashMap<String, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.push_scalar64(value, None, op)
    }

    fn push_scalar64(&mut self, value: Tensor, scalar64: Option<f64>, op: Op) -> NodeId {
        let needs_grad = op_inputs(&op).iter().any(|id| self.nodes[id.0].needs_grad);
        self.nodes.push(Node { value, scalar64, op, param_name: None, needs_grad });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    /// Register a constant leaf (inputs, frozen weights): no gradient is
    /// computed for it or propagated through work that only it feeds.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Register a differentiable unnamed leaf (e.g. an attacked input).
    pub fn var(&mut self, value: Tensor) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.nodes[id.0].needs_grad = true;
        id
    }

    /// Register a named parameter leaf; its gradient is retrievable by name.
    pub fn param(&mut self, name: &str, value: &Tensor) -> NodeId {
        let id = self.push(value.clone(), Op::Leaf);
        self.nodes[id.0].param_name = Some(name.to_string());
        self.nodes[id.0].needs_grad = true;
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value with full f64 precision when the producing op kept one.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let n = &self.nodes[id.0];
        n.scalar64.unwrap_or_else(|| n.value.data()[0] as f64)
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.grads[id.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of all registered parameter leaves, in registration order.
    pub fn param_names(&self) -> Vec<String> {
        self.nodes.iter().filter_map(|n| n.param_name.clone()).collect()
    }

    /// Gradients of all named parameter leaves, zeros when unreachable.
    pub fn named_grads(&self) -> Vec<(String, Vec<f32>)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                n.param_name.as_ref().map(|name| {
                    let g = self.grads[i]
                        .clone()
                        .unwrap_or_else(|| vec![0.0; n.value.numel()]);
                    (name.clone(), g)
                })
            })
            .collect()
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    // ---- operations -----------------------------------------------------

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                msg: format!("want 4-d input/weight, got {xs:?} / {ws:?}"),
            });
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, i, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if c != i {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                axis_a: "input channels".into(),
                axis_b: "weight in-channels".into(),
                dim_a: c,
                dim_b: i,
            });
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                msg: format!("kernel must be odd square, got {kh}x{kw}"),
            });
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                msg: format!("stride {stride} not in {{1,2}}"),
            });
        }
        if let Some(bid) = b {
            let bs = self.shape(bid);
            if bs != [o] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    axis_a: "bias length".into(),
                    axis_b: "weight out-channels".into(),
                    dim_a: bs.iter().product(),
                    dim_b: o,
                });
            }
        }
        let oh = kernels::conv_out_dim(h, kh, stride, pad);
        let ow = kernels::conv_out_dim(wd, kh, stride, pad);
        let mut out = Tensor::zeros(&[n, o, oh, ow]);
        let span = oh * ow;
        let ck2 = c * kh * kh;
        let mut cols = vec![0f32; ck2 * span];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = b.map(|bid| self.value(bid).data().to_vec());
            let od = out.data_mut();
            for s in 0..n {
                kernels::im2col(&xv[s * c * h * wd..(s + 1) * c * h * wd], c, h, wd, kh, stride, pad, &mut cols);
                let dst = &mut od[s * o * span..(s + 1) * o * span];
                kernels::matmul(wv, &cols, o, ck2, span, dst);
                if let Some(bv) = &bv {
                    for oc in 0..o {
                        let bb = bv[oc];
                        for v in dst[oc * span..(oc + 1) * span].iter_mut() {
                            *v += bb;
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }))
    }

    pub fn depthwise_conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != 1 {
            return Err(Error::InvalidArgument {
                op: "depthwise_conv2d",
                msg: format!("want NCHW input and (C,1,k,k) weight, got {xs:?} / {ws:?}"),
            });
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let k = ws[2];
        if ws[0] != c {
            return Err(Error::ShapeMismatch {
                op: "depthwise_conv2d",
                axis_a: "input channels".into(),
                axis_b: "weight channels".into(),
                dim_a: c,
                dim_b: ws[0],
            });
        }
        if ws[3] != k || k % 2 == 0 {
            return Err(Error::InvalidArgument {
                op: "depthwise_conv2d",
                msg: format!("kernel must be odd square, got {}x{}", ws[2], ws[3]),
            });
        }
        let oh = kernels::conv_out_dim(h, k, stride, pad);
        let ow = kernels::conv_out_dim(wd, k, stride, pad);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = b.map(|bid| self.value(bid).data().to_vec());
            let od = out.data_mut();
            for s in 0..n {
                kernels::depthwise_forward(
                    &xv[s * c * h * wd..(s + 1) * c * h * wd],
                    c,
                    h,
                    wd,
                    wv,
                    bv.as_deref(),
                    k,
                    stride,
                    pad,
                    &mut od[s * c * oh * ow..(s + 1) * c * oh * ow],
                );
            }
        }
        Ok(self.push(out, Op::DwConv2d { x, w, b, stride, pad }))
    }

    /// Batch normalization over the channel axis of an NCHW (or NC) tensor.
    /// Train mode updates `running_mean`/`running_var` in place:
    /// running = (1 - momentum) * running + momentum * batch.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &mut [f32],
        running_var: &mut [f32],
        momentum: f32,
        eps: f32,
        mode: Mode,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let c = match xs.len() {
            4 => xs[1],
            2 => xs[1],
            _ => {
                return Err(Error::InvalidArgument {
                    op: "batch_norm",
                    msg: format!("want NCHW or NC input, got {xs:?}"),
                })
            }
        };
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            let gs = self.shape(id);
            if gs != [c] {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm",
                    axis_a: format!("{name} length"),
                    axis_b: "input channels".into(),
                    dim_a: gs.iter().product(),
                    dim_b: c,
                });
            }
        }
        let n = xs[0];
        let spatial: usize = if xs.len() == 4 { xs[2] * xs[3] } else { 1 };
        let m = (n * spatial) as f64;
        let xv = self.value(x).data().to_vec();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();

        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                let mut mean = vec![0f64; c];
                let mut var = vec![0f64; c];
                for s in 0..n {
                    for ci in 0..c {
                        let base = (s * c + ci) * spatial;
                        for &v in &xv[base..base + spatial] {
                            mean[ci] += v as f64;
                        }
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for s in 0..n {
                    for ci in 0..c {
                        let base = (s * c + ci) * spatial;
                        for &v in &xv[base..base + spatial] {
                            let d = v as f64 - mean[ci];
                            var[ci] += d * d;
                        }
                    }
                }
                // biased variance, for both normalization and running stats
                var.iter_mut().for_each(|v| *v /= m);
                for ci in 0..c {
                    running_mean[ci] =
                        (1.0 - momentum) * running_mean[ci] + momentum * mean[ci] as f32;
                    running_var[ci] =
                        (1.0 - momentum) * running_var[ci] + momentum * var[ci] as f32;
                }
                (mean, var)
            }
            Mode::Eval => (
                running_mean.iter().map(|&v| v as f64).collect(),
                running_var.iter().map(|&v| v as f64).collect(),
            ),
        };

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps as f64).sqrt()).collect();
        let mut xhat = vec![0f32; xv.len()];
        let mut out = Tensor::zeros(&xs);
        {
            let od = out.data_mut();
            for s in 0..n {
                for ci in 0..c {
                    let base = (s * c + ci) * spatial;
                    let (mu, is) = (mean[ci], inv_std[ci]);
                    let (g, bb) = (gv[ci] as f64, bv[ci] as f64);
                    for idx in base..base + spatial {
                        let xh = (xv[idx] as f64 - mu) * is;
                        xhat[idx] = xh as f32;
                        od[idx] = (g * xh + bb) as f32;
                    }
                }
            }
        }
        let saved = BnSaved { xhat, inv_std, train: matches!(mode, Mode::Train) };
        Ok(self.push(out, Op::BatchNorm { x, gamma, beta, saved }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        let mut sig = self.kink_sig;
        for v in out.data_mut().iter_mut() {
            // fold the activation sign pattern into the kink signature
            sig = sig.wrapping_mul(0x100000001b3).wrapping_add(u64::from(*v > 0.0));
            *v = v.max(0.0);
        }
        self.kink_sig = sig;
        self.push(out, Op::Relu { x })
    }

    /// Hash of every relu input sign seen by this tape. Two forward passes
    /// with equal signatures traverse the same smooth region of the loss
    /// surface, so finite differences between them are valid derivatives.
    pub fn kink_signature(&self) -> u64 {
        self.kink_sig
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = sigmoid_f32(*v));
        self.push(out, Op::Sigmoid { x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "add",
                axis_a: format!("{:?}", self.shape(a)),
                axis_b: format!("{:?}", self.shape(b)),
                dim_a: self.value(a).numel(),
                dim_b: self.value(b).numel(),
            });
        }
        let mut out = self.value(a).clone();
        let bv = self.value(b).data().to_vec();
        for (o, &v) in out.data_mut().iter_mut().zip(bv.iter()) {
            *o += v;
        }
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "mul",
                axis_a: format!("{:?}", self.shape(a)),
                axis_b: format!("{:?}", self.shape(b)),
                dim_a: self.value(a).numel(),
                dim_b: self.value(b).numel(),
            });
        }
        let mut out = self.value(a).clone();
        let bv = self.value(b).data().to_vec();
        for (o, &v) in out.data_mut().iter_mut().zip(bv.iter()) {
            *o *= v;
        }
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: NodeId, c: f32) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= c);
        self.push(out, Op::Scale { x, c })
    }

    /// NCHW -> NC mean over the spatial plane.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::InvalidArgument {
                op: "global_avg_pool",
                msg: format!("want NCHW, got {xs:?}"),
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let span = h * w;
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(&[n, c]);
        {
            let od = out.data_mut();
            for s in 0..n {
                for ci in 0..c {
                    let base = (s * c + ci) * span;
                    let mut acc = 0f64;
                    for &v in &xv[base..base + span] {
                        acc += v as f64;
                    }
                    od[s * c + ci] = (acc / span as f64) as f32;
                }
            }
        }
        Ok(self.push(out, Op::GlobalAvgPool { x }))
    }

    /// x (N,F) . w (O,F)^T + b (O) -> (N,O)
    pub fn fully_connected(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::ShapeMismatch {
                op: "fully_connected",
                axis_a: format!("input features {:?}", xs),
                axis_b: format!("weight features {:?}", ws),
                dim_a: *xs.last().unwrap_or(&0),
                dim_b: *ws.last().unwrap_or(&0),
            });
        }
        let (n, f, o) = (xs[0], xs[1], ws[0]);
        if self.shape(b) != [o] {
            return Err(Error::ShapeMismatch {
                op: "fully_connected",
                axis_a: "bias length".into(),
                axis_b: "weight out".into(),
                dim_a: self.value(b).numel(),
                dim_b: o,
            });
        }
        let mut out = Tensor::zeros(&[n, o]);
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data().to_vec();
            kernels::matmul_bt(xv, wv, n, f, o, out.data_mut());
            let od = out.data_mut();
            for s in 0..n {
                for oc in 0..o {
                    od[s * o + oc] += bv[oc];
                }
            }
        }
        Ok(self.push(out, Op::FullyConnected { x, w, b }))
    }

    /// Plain 2-d matrix product (m,k) . (k,n).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                axis_a: format!("{as_:?}"),
                axis_b: format!("{bs:?}"),
                dim_a: *as_.last().unwrap_or(&0),
                dim_b: *bs.first().unwrap_or(&0),
            });
        }
        let (m, k, n) = (as_[0], as_[1], bs[1]);
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n, out.data_mut());
        Ok(self.push(out, Op::Matmul { a, b }))
    }

    /// Batched matrix product (B,p,q) . (B,q,r).
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] || as_[2] != bs[1] {
            return Err(Error::ShapeMismatch {
                op: "bmm",
                axis_a: format!("{as_:?}"),
                axis_b: format!("{bs:?}"),
                dim_a: *as_.last().unwrap_or(&0),
                dim_b: bs.get(1).copied().unwrap_or(0),
            });
        }
        let (bt, p, q, r) = (as_[0], as_[1], as_[2], bs[2]);
        let mut out = Tensor::zeros(&[bt, p, r]);
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let od = out.data_mut();
            for s in 0..bt {
                kernels::matmul(
                    &av[s * p * q..(s + 1) * p * q],
                    &bv[s * q * r..(s + 1) * q * r],
                    p,
                    q,
                    r,
                    &mut od[s * p * r..(s + 1) * p * r],
                );
            }
        }
        Ok(self.push(out, Op::Bmm { a, b }))
    }

    /// Swap the last two axes of a 3-d tensor.
    pub fn transpose12(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::InvalidArgument {
                op: "transpose12",
                msg: format!("want 3-d, got {xs:?}"),
            });
        }
        let (b, p, q) = (xs[0], xs[1], xs[2]);
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(&[b, q, p]);
        {
            let od = out.data_mut();
            for s in 0..b {
                for i in 0..p {
                    for j in 0..q {
                        od[(s * q + j) * p + i] = xv[(s * p + i) * q + j];
                    }
                }
            }
        }
        Ok(self.push(out, Op::Transpose12 { x }))
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(Error::InvalidArgument {
                op: "softmax",
                msg: format!("axis {axis} out of range for {xs:?}"),
            });
        }
        let (outer, len, inner) = axis_strides(&xs, axis);
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(&xs);
        {
            let od = out.data_mut();
            let mut row = vec![0f32; len];
            let mut ls = vec![0f64; len];
            for o in 0..outer {
                for i in 0..inner {
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = xv[(o * len + j) * inner + i];
                    }
                    kernels::log_softmax_row(&row, &mut ls);
                    for (j, &l) in ls.iter().enumerate() {
                        od[(o * len + j) * inner + i] = l.exp() as f32;
                    }
                }
            }
        }
        Ok(self.push(out, Op::Softmax { x, axis }))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if as_.len() != bs.len() || axis >= as_.len() {
            return Err(Error::InvalidArgument {
                op: "concat",
                msg: format!("rank/axis mismatch: {as_:?} vs {bs:?} at axis {axis}"),
            });
        }
        for d in 0..as_.len() {
            if d != axis && as_[d] != bs[d] {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    axis_a: format!("lhs axis {d}"),
                    axis_b: format!("rhs axis {d}"),
                    dim_a: as_[d],
                    dim_b: bs[d],
                });
            }
        }
        let mut shape = as_.clone();
        shape[axis] += bs[axis];
        let (outer, _, inner) = axis_strides(&as_, axis);
        let (la, lb) = (as_[axis], bs[axis]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Tensor::zeros(&shape);
        {
            let od = out.data_mut();
            let l = la + lb;
            for o in 0..outer {
                let dst = &mut od[o * l * inner..(o + 1) * l * inner];
                dst[..la * inner].copy_from_slice(&av[o * la * inner..(o + 1) * la * inner]);
                dst[la * inner..].copy_from_slice(&bv[o * lb * inner..(o + 1) * lb * inner]);
            }
        }
        Ok(self.push(out, Op::Concat { a, b, axis }))
    }

    /// Split into two parts at `at` along `axis`; inverse of `concat`.
    pub fn split(&mut self, x: NodeId, axis: usize, at: usize) -> Result<(NodeId, NodeId)> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || at == 0 || at >= xs[axis] {
            return Err(Error::InvalidArgument {
                op: "split",
                msg: format!("cannot split {xs:?} at {at} on axis {axis}"),
            });
        }
        let (outer, len, inner) = axis_strides(&xs, axis);
        let xv = self.value(x).data().to_vec();
        let mut parts = Vec::with_capacity(2);
        for (start, plen) in [(0usize, at), (at, xs[axis] - at)] {
            let mut shape = xs.clone();
            shape[axis] = plen;
            let mut t = Tensor::zeros(&shape);
            {
                let od = t.data_mut();
                for o in 0..outer {
                    let src = &xv[(o * len + start) * inner..(o * len + start + plen) * inner];
                    od[o * plen * inner..(o + 1) * plen * inner].copy_from_slice(src);
                }
            }
            parts.push(self.push(t, Op::Split { x, axis, start }));
        }
        Ok((parts[0], parts[1]))
    }

    /// ShuffleNet channel shuffle: channel i moves to (i mod g)*(C/g) + i/g.
    pub fn channel_shuffle(&mut self, x: NodeId, groups: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::InvalidArgument {
                op: "channel_shuffle",
                msg: format!("want NCHW, got {xs:?}"),
            });
        }
        let c = xs[1];
        if groups == 0 || c % groups != 0 {
            return Err(Error::InvalidArgument {
                op: "channel_shuffle",
                msg: format!("channels {c} not divisible by groups {groups}"),
            });
        }
        let (n, h, w) = (xs[0], xs[2], xs[3]);
        let span = h * w;
        let per = c / groups;
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(&xs);
        {
            let od = out.data_mut();
            for s in 0..n {
                for ci in 0..c {
                    let dest = (ci % groups) * per + ci / groups;
                    let src = &xv[(s * c + ci) * span..(s * c + ci + 1) * span];
                    od[(s * c + dest) * span..(s * c + dest + 1) * span].copy_from_slice(src);
                }
            }
        }
        Ok(self.push(out, Op::ChannelShuffle { x, groups }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// Multiply each (n,c) channel plane of x by gate[n,c].
    pub fn channel_scale(&mut self, x: NodeId, gate: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let gs = self.shape(gate).to_vec();
        if xs.len() != 4 || gs.len() != 2 || xs[0] != gs[0] || xs[1] != gs[1] {
            return Err(Error::ShapeMismatch {
                op: "channel_scale",
                axis_a: format!("input {xs:?}"),
                axis_b: format!("gate {gs:?}"),
                dim_a: xs.get(1).copied().unwrap_or(0),
                dim_b: gs.get(1).copied().unwrap_or(0),
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let span = h * w;
        let gv = self.value(gate).data().to_vec();
        let mut out = self.value(x).clone();
        {
            let od = out.data_mut();
            for s in 0..n {
                for ci in 0..c {
                    let g = gv[s * c + ci];
                    for v in od[(s * c + ci) * span..(s * c + ci + 1) * span].iter_mut() {
                        *v *= g;
                    }
                }
            }
        }
        Ok(self.push(out, Op::ChannelScale { x, gate }))
    }

    /// Mean cross-entropy of logits (N,K) against integer labels.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(Error::InvalidArgument {
                op: "cross_entropy",
                msg: format!("logits {ls:?} vs {} labels", labels.len()),
            });
        }
        let (n, k) = (ls[0], ls[1]);
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::LabelOutOfRange { label: l, classes: k, index: i });
            }
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0f32; n * k];
        let mut ls64 = vec![0f64; k];
        let mut total = 0f64;
        for s in 0..n {
            kernels::log_softmax_row(&lv[s * k..(s + 1) * k], &mut ls64);
            total -= ls64[labels[s]];
            for (j, &l) in ls64.iter().enumerate() {
                probs[s * k + j] = l.exp() as f32;
            }
        }
        let mean = total / n as f64;
        let value = Tensor::scalar(mean as f32);
        Ok(self.push_scalar64(
            value,
            Some(mean),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
        ))
    }

    /// Mean KL(softmax(p) || softmax(q)) over the batch; differentiable in
    /// both logit arguments.
    pub fn kl_divergence(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        let ps = self.shape(p).to_vec();
        let qs = self.shape(q).to_vec();
        if ps.len() != 2 || ps != qs {
            return Err(Error::ShapeMismatch {
                op: "kl_divergence",
                axis_a: format!("{ps:?}"),
                axis_b: format!("{qs:?}"),
                dim_a: ps.iter().product(),
                dim_b: qs.iter().product(),
            });
        }
        let (n, k) = (ps[0], ps[1]);
        let pv = self.value(p).data();
        let qv = self.value(q).data();
        let mut p_probs = vec![0f32; n * k];
        let mut q_probs = vec![0f32; n * k];
        let mut row_kl = vec![0f64; n];
        let mut lp = vec![0f64; k];
        let mut lq = vec![0f64; k];
        let mut total = 0f64;
        for s in 0..n {
            kernels::log_softmax_row(&pv[s * k..(s + 1) * k], &mut lp);
            kernels::log_softmax_row(&qv[s * k..(s + 1) * k], &mut lq);
            let mut kl = 0f64;
            for j in 0..k {
                let pj = lp[j].exp();
                p_probs[s * k + j] = pj as f32;
                q_probs[s * k + j] = lq[j].exp() as f32;
                kl += pj * (lp[j] - lq[j]);
            }
            // rounding can leave a tiny negative epsilon on identical rows
            row_kl[s] = kl.max(0.0);
            total += row_kl[s];
        }
        let mean = total / n as f64;
        let value = Tensor::scalar(mean as f32);
        Ok(self.push_scalar64(value, Some(mean), Op::KlDiv { p, q, p_probs, q_probs, row_kl }))
    }

    /// Sum of all elements (f64 accumulation).
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let value = Tensor::scalar(total as f32);
        self.push_scalar64(value, Some(total), Op::Sum { x })
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar output. Populates gradients for every
    /// reachable node; named leaves left unreached report zero gradients.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        if self.value(output).numel() != 1 {
            return Err(Error::NonScalarBackward { shape: self.value(output).shape().to_vec() });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[output.0] = Some(vec![1.0]);
        for idx in (0..self.nodes.len()).rev() {
            let Some(gout) = self.grads[idx].take() else { continue };
            self.apply_backward(idx, &gout);
            self.grads[idx] = Some(gout);
        }
        Ok(())
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn accumulate(&mut self, id: NodeId, contrib: &[f32]) {
        if !self.needs_grad(id) {
            return;
        }
        let slot = &mut self.grads[id.0];
        match slot {
            Some(g) => {
                for (a, &b) in g.iter_mut().zip(contrib) {
                    *a += b;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    fn accumulate_f64(&mut self, id: NodeId, contrib: &[f64]) {
        let as_f32: Vec<f32> = contrib.iter().map(|&v| v as f32).collect();
        self.accumulate(id, &as_f32);
    }

    fn apply_backward(&mut self, idx: usize, gout: &[f32]) {
        // Values are read through raw indexing to keep the borrow checker
        // happy while we mutate the grad table.
        macro_rules! val {
            ($id:expr) => {
                self.nodes[$id.0].value.data()
            };
        }
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                let xs = self.shape(x).to_vec();
                let ws = self.shape(w).to_vec();
                let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let (o, k) = (ws[0], ws[2]);
                let oh = kernels::conv_out_dim(h, k, stride, pad);
                let ow = kernels::conv_out_dim(wd, k, stride, pad);
                let span = oh * ow;
                let ck2 = c * k * k;
                let want_x = self.needs_grad(x);
                let want_w = self.needs_grad(w);
                let want_b = b.map(|bid| self.needs_grad(bid)).unwrap_or(false);
                let mut dw = vec![0f64; if want_w { o * ck2 } else { 0 }];
                let mut dx = vec![0f32; if want_x { n * c * h * wd } else { 0 }];
                let mut db = if want_b { Some(vec![0f64; o]) } else { None };
                let mut cols = vec![0f32; ck2 * span];
                let mut dcols = vec![0f32; ck2 * span];
                {
                    let xv = val!(x);
                    let wv = val!(w);
                    for s in 0..n {
                        let gslice = &gout[s * o * span..(s + 1) * o * span];
                        if want_w {
                            kernels::im2col(
                                &xv[s * c * h * wd..(s + 1) * c * h * wd],
                                c,
                                h,
                                wd,
                                k,
                                stride,
                                pad,
                                &mut cols,
                            );
                            // dW += g . colsT
                            for oc in 0..o {
                                let gr = &gslice[oc * span..(oc + 1) * span];
                                let dst = &mut dw[oc * ck2..(oc + 1) * ck2];
                                for (r, d) in dst.iter_mut().enumerate() {
                                    let crow = &cols[r * span..(r + 1) * span];
                                    let mut acc = 0f64;
                                    for (&g, &cv) in gr.iter().zip(crow) {
                                        acc += g as f64 * cv as f64;
                                    }
                                    *d += acc;
                                }
                            }
                        }
                        if want_x {
                            // dcols = wT . g ; dx = col2im(dcols)
                            kernels::matmul_at(wv, gslice, o, ck2, span, &mut dcols);
                            kernels::col2im(
                                &dcols,
                                c,
                                h,
                                wd,
                                k,
                                stride,
                                pad,
                                &mut dx[s * c * h * wd..(s + 1) * c * h * wd],
                            );
                        }
                        if let Some(db) = db.as_mut() {
                            for oc in 0..o {
                                for &g in &gslice[oc * span..(oc + 1) * span] {
                                    db[oc] += g as f64;
                                }
                            }
                        }
                    }
                }
                if want_x {
                    self.accumulate(x, &dx);
                }
                if want_w {
                    self.accumulate_f64(w, &dw);
                }
                if let (Some(bid), Some(db)) = (b, db) {
                    self.accumulate_f64(bid, &db);
                }
            }
            Op::DwConv2d { x, w, b, stride, pad } => {
                let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                let xs = self.shape(x).to_vec();
                let k = self.shape(w)[2];
                let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let oh = kernels::conv_out_dim(h, k, stride, pad);
                let ow = kernels::conv_out_dim(wd, k, stride, pad);
                let mut dw = vec![0f64; c * k * k];
                let mut db = b.map(|_| vec![0f64; c]);
                let mut dx = vec![0f32; n * c * h * wd];
                {
                    let xv = val!(x);
                    let wv = val!(w);
                    let mut dxs = vec![0f64; c * h * wd];
                    for s in 0..n {
                        dxs.iter_mut().for_each(|v| *v = 0.0);
                        kernels::depthwise_backward(
                            &xv[s * c * h * wd..(s + 1) * c * h * wd],
                            wv,
                            &gout[s * c * oh * ow..(s + 1) * c * oh * ow],
                            c,
                            h,
                            wd,
                            k,
                            stride,
                            pad,
                            &mut dxs,
                            &mut dw,
                            db.as_deref_mut(),
                        );
                        for (d, &v) in dx[s * c * h * wd..(s + 1) * c * h * wd]
                            .iter_mut()
                            .zip(dxs.iter())
                        {
                            *d = v as f32;
                        }
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate_f64(w, &dw);
                if let (Some(bid), Some(db)) = (b, db) {
                    self.accumulate_f64(bid, &db);
                }
            }
            Op::BatchNorm { x, gamma, beta, saved } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let xs = self.shape(x).to_vec();
                let c = xs[1];
                let n = xs[0];
                let spatial: usize = if xs.len() == 4 { xs[2] * xs[3] } else { 1 };
                let m = (n * spatial) as f64;
                let gv: Vec<f64> = val!(gamma).iter().map(|&v| v as f64).collect();
                let mut dgamma = vec![0f64; c];
                let mut dbeta = vec![0f64; c];
                let mut sum_dxhat = vec![0f64; c];
                let mut sum_dxhat_xhat = vec![0f64; c];
                for s in 0..n {
                    for ci in 0..c {
                        let base = (s * c + ci) * spatial;
                        for idx in base..base + spatial {
                            let g = gout[idx] as f64;
                            let xh = saved.xhat[idx] as f64;
                            dgamma[ci] += g * xh;
                            dbeta[ci] += g;
                            let dxh = g * gv[ci];
                            sum_dxhat[ci] += dxh;
                            sum_dxhat_xhat[ci] += dxh * xh;
                        }
                    }
                }
                let mut dx = vec![0f32; gout.len()];
                for s in 0..n {
                    for ci in 0..c {
                        let base = (s * c + ci) * spatial;
                        let is = saved.inv_std[ci];
                        for idx in base..base + spatial {
                            let dxh = gout[idx] as f64 * gv[ci];
                            let v = if saved.train {
                                is * (dxh
                                    - sum_dxhat[ci] / m
                                    - saved.xhat[idx] as f64 * sum_dxhat_xhat[ci] / m)
                            } else {
                                is * dxh
                            };
                            dx[idx] = v as f32;
                        }
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate_f64(gamma, &dgamma);
                self.accumulate_f64(beta, &dbeta);
            }
            Op::Relu { x } => {
                let x = *x;
                let dx: Vec<f32> = val!(x)
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let yv = self.nodes[idx].value.data();
                let dx: Vec<f32> = yv.iter().zip(gout).map(|(&y, &g)| g * y * (1.0 - y)).collect();
                self.accumulate(x, &dx);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, gout);
                self.accumulate(b, gout);
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let da: Vec<f32> = val!(b).iter().zip(gout).map(|(&v, &g)| v * g).collect();
                let db: Vec<f32> = val!(a).iter().zip(gout).map(|(&v, &g)| v * g).collect();
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                let dx: Vec<f32> = gout.iter().map(|&g| g * c).collect();
                self.accumulate(x, &dx);
            }
            Op::GlobalAvgPool { x } => {
                let x = *x;
                let xs = self.shape(x).to_vec();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let span = h * w;
                let mut dx = vec![0f32; n * c * span];
                for s in 0..n {
                    for ci in 0..c {
                        let g = gout[s * c + ci] / span as f32;
                        dx[(s * c + ci) * span..(s * c + ci + 1) * span].fill(g);
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::FullyConnected { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let xs = self.shape(x).to_vec();
                let (n, f) = (xs[0], xs[1]);
                let o = self.shape(w)[0];
                let mut dx = vec![0f32; n * f];
                let mut dw = vec![0f32; o * f];
                let mut db = vec![0f64; o];
                kernels::matmul(gout, val!(w), n, o, f, &mut dx);
                kernels::matmul_at(gout, val!(x), n, o, f, &mut dw);
                for s in 0..n {
                    for oc in 0..o {
                        db[oc] += gout[s * o + oc] as f64;
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(w, &dw);
                self.accumulate_f64(b, &db);
            }
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let as_ = self.shape(a).to_vec();
                let bs = self.shape(b).to_vec();
                let (m, k, n) = (as_[0], as_[1], bs[1]);
                let mut da = vec![0f32; m * k];
                let mut db = vec![0f32; k * n];
                kernels::matmul_bt(gout, val!(b), m, n, k, &mut da);
                kernels::matmul_at(val!(a), gout, m, k, n, &mut db);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Bmm { a, b } => {
                let (a, b) = (*a, *b);
                let as_ = self.shape(a).to_vec();
                let bs = self.shape(b).to_vec();
                let (bt, p, q, r) = (as_[0], as_[1], as_[2], bs[2]);
                let mut da = vec![0f32; bt * p * q];
                let mut db = vec![0f32; bt * q * r];
                {
                    let av = val!(a);
                    let bv = val!(b);
                    for s in 0..bt {
                        let g = &gout[s * p * r..(s + 1) * p * r];
                        kernels::matmul_bt(
                            g,
                            &bv[s * q * r..(s + 1) * q * r],
                            p,
                            r,
                            q,
                            &mut da[s * p * q..(s + 1) * p * q],
                        );
                        kernels::matmul_at(
                            &av[s * p * q..(s + 1) * p * q],
                            g,
                            p,
                            q,
                            r,
                            &mut db[s * q * r..(s + 1) * q * r],
                        );
                    }
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Transpose12 { x } => {
                let x = *x;
                let xs = self.shape(x).to_vec();
                let (b, p, q) = (xs[0], xs[1], xs[2]);
                let mut dx = vec![0f32; b * p * q];
                for s in 0..b {
                    for j in 0..q {
                        for i in 0..p {
                            dx[(s * p + i) * q + j] = gout[(s * q + j) * p + i];
                        }
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::Softmax { x, axis } => {
                let (x, axis) = (*x, *axis);
                let xs = self.shape(x).to_vec();
                let (outer, len, inner) = axis_strides(&xs, axis);
                let yv = self.nodes[idx].value.data();
                let mut dx = vec![0f32; yv.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut dot = 0f64;
                        for j in 0..len {
                            let at = (o * len + j) * inner + i;
                            dot += gout[at] as f64 * yv[at] as f64;
                        }
                        for j in 0..len {
                            let at = (o * len + j) * inner + i;
                            dx[at] = ((gout[at] as f64 - dot) * yv[at] as f64) as f32;
                        }
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::Concat { a, b, axis } => {
                let (a, b, axis) = (*a, *b, *axis);
                let as_ = self.shape(a).to_vec();
                let bs = self.shape(b).to_vec();
                let (outer, la, inner) = axis_strides(&as_, axis);
                let lb = bs[axis];
                let l = la + lb;
                let mut da = vec![0f32; as_.iter().product()];
                let mut db = vec![0f32; bs.iter().product()];
                for o in 0..outer {
                    let src = &gout[o * l * inner..(o + 1) * l * inner];
                    da[o * la * inner..(o + 1) * la * inner].copy_from_slice(&src[..la * inner]);
                    db[o * lb * inner..(o + 1) * lb * inner].copy_from_slice(&src[la * inner..]);
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Split { x, axis, start } => {
                let (x, axis, start) = (*x, *axis, *start);
                let xs = self.shape(x).to_vec();
                let (outer, len, inner) = axis_strides(&xs, axis);
                let plen = self.nodes[idx].value.shape()[axis];
                let mut dx = vec![0f32; xs.iter().product()];
                for o in 0..outer {
                    dx[(o * len + start) * inner..(o * len + start + plen) * inner]
                        .copy_from_slice(&gout[o * plen * inner..(o + 1) * plen * inner]);
                }
                self.accumulate(x, &dx);
            }
            Op::ChannelShuffle { x, groups } => {
                let (x, groups) = (*x, *groups);
                let xs = self.shape(x).to_vec();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let span = h * w;
                let per = c / groups;
                let mut dx = vec![0f32; n * c * span];
                for s in 0..n {
                    for ci in 0..c {
                        let dest = (ci % groups) * per + ci / groups;
                        dx[(s * c + ci) * span..(s * c + ci + 1) * span]
                            .copy_from_slice(&gout[(s * c + dest) * span..(s * c + dest + 1) * span]);
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::Reshape { x } => {
                let x = *x;
                self.accumulate(x, gout);
            }
            Op::ChannelScale { x, gate } => {
                let (x, gate) = (*x, *gate);
                let xs = self.shape(x).to_vec();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let span = h * w;
                let mut dx = vec![0f32; n * c * span];
                let mut dgate = vec![0f64; n * c];
                {
                    let xv = val!(x);
                    let gv = val!(gate);
                    for s in 0..n {
                        for ci in 0..c {
                            let base = (s * c + ci) * span;
                            let g = gv[s * c + ci];
                            let mut acc = 0f64;
                            for off in base..base + span {
                                dx[off] = gout[off] * g;
                                acc += gout[off] as f64 * xv[off] as f64;
                            }
                            dgate[s * c + ci] = acc;
                        }
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate_f64(gate, &dgate);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let logits = *logits;
                let ls = self.shape(logits).to_vec();
                let (n, k) = (ls[0], ls[1]);
                let g = gout[0] as f64 / n as f64;
                let mut dl = vec![0f32; n * k];
                for s in 0..n {
                    for j in 0..k {
                        let mut v = probs[s * k + j] as f64;
                        if j == labels[s] {
                            v -= 1.0;
                        }
                        dl[s * k + j] = (v * g) as f32;
                    }
                }
                self.accumulate(logits, &dl);
            }
            Op::KlDiv { p, q, p_probs, q_probs, row_kl } => {
                let (p, q) = (*p, *q);
                let ps = self.shape(p).to_vec();
                let (n, k) = (ps[0], ps[1]);
                let g = gout[0] as f64 / n as f64;
                let mut dp = vec![0f32; n * k];
                let mut dq = vec![0f32; n * k];
                for s in 0..n {
                    for j in 0..k {
                        let pj = p_probs[s * k + j] as f64;
                        let qj = q_probs[s * k + j] as f64;
                        // log-ratio recovered from saved probabilities
                        let lr = (pj.max(1e-300)).ln() - (qj.max(1e-300)).ln();
                        dp[s * k + j] = (g * pj * (lr - row_kl[s])) as f32;
                        dq[s * k + j] = (g * (qj - pj)) as f32;
                    }
                }
                self.accumulate(p, &dp);
                self.accumulate(q, &dq);
            }
            Op::Sum { x } => {
                let x = *x;
                let dx = vec![gout[0]; self.nodes[x.0].value.numel()];
                self.accumulate(x, &dx);
            }
        }
        self.nodes[idx].op = op;
    }
}

fn op_inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf => vec![],
        Op::Conv2d { x, w, b, .. } | Op::DwConv2d { x, w, b, .. } => {
            let mut v = vec![*x, *w];
            v.extend(b.iter().copied());
            v
        }
        Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Relu { x }
        | Op::Sigmoid { x }
        | Op::Scale { x, .. }
        | Op::GlobalAvgPool { x }
        | Op::Transpose12 { x }
        | Op::Softmax { x, .. }
        | Op::Split { x, .. }
        | Op::ChannelShuffle { x, .. }
        | Op::Reshape { x }
        | Op::Sum { x } => vec![*x],
        Op::Add { a, b } | Op::Mul { a, b } | Op::Matmul { a, b } | Op::Bmm { a, b } => {
            vec![*a, *b]
        }
        Op::FullyConnected { x, w, b } => vec![*x, *w, *b],
        Op::Concat { a, b, .. } => vec![*a, *b],
        Op::ChannelScale { x, gate } => vec![*x, *gate],
        Op::CrossEntropy { logits, .. } => vec![*logits],
        Op::KlDiv { p, q, .. } => vec![*p, *q],
    }
}

fn sigmoid_f32(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Decompose a shape around `axis` into (outer, axis_len, inner) strides.
fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
