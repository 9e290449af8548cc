use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{
    add_bias, channel_sums, conv_backward_input, conv_backward_weight, conv_forward, conv_out_len,
};
use super::tensor::{numel, Tensor};
use super::BCE_EPS;
use crate::error::{Error, Result};
use crate::math;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
}

// log-width offsets are clamped here before exponentiation in `decode_boxes`
const MAX_LOG_SIZE: f64 = 20.0;

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Add(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    Bce {
        pred: Var,
        target: Tensor,
        mask: Option<Tensor>,
        count: f64,
    },
    DecodeBoxes(Var),
    IouLoss {
        pred: Var,
        target: Tensor,
        mask: Tensor,
        count: f64,
    },
    SmoothL1 {
        pred: Var,
        target: Tensor,
        mask: Tensor,
        count: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of tensor operations.
///
/// A graph is single-threaded; build a new one per forward pass. Gradients
/// from successive [`Graph::backward`] calls are summed until
/// [`Graph::zero_grad`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, out_c: usize) -> Result<()> {
        if let Some(b) = b {
            let s = self.value(b).shape();
            if s != [1, out_c, 1, 1] {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: [1, out_c, 1, 1],
                    rhs: s,
                });
            }
        }
        Ok(())
    }

    /// 2-D convolution with square kernel `w (out_c, in_c, k, k)` and an
    /// optional `(1, out_c, 1, 1)` bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if ws[1] != xs[1] || ws[2] != ws[3] || stride == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        let k = ws[2];
        let (ho, wo) = match (conv_out_len(xs[2], k, stride, pad), conv_out_len(xs[3], k, stride, pad)) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: xs,
                    rhs: ws,
                })
            }
        };
        self.check_bias("conv2d", b, ws[0])?;
        let mut y = conv_forward(self.value(x), self.value(w), stride, pad, ho, wo);
        if let Some(b) = b {
            add_bias(&mut y, self.value(b));
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        let rg = self.rg(&parents);
        Ok(self.push(y, Op::Conv { x, w, b, stride, pad }, rg))
    }

    /// Transposed convolution; `w` is `(in_c, out_c, k, k)` and the output
    /// spatial size is `(h - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if ws[0] != xs[1] || ws[2] != ws[3] || stride == 0 || xs[2] == 0 || xs[3] == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: xs,
                rhs: ws,
            });
        }
        let k = ws[2];
        let ho = ((xs[2] - 1) * stride + k).checked_sub(2 * pad);
        let wo = ((xs[3] - 1) * stride + k).checked_sub(2 * pad);
        let (ho, wo) = match (ho, wo) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv_transpose2d",
                    lhs: xs,
                    rhs: ws,
                })
            }
        };
        self.check_bias("conv_transpose2d", b, ws[1])?;
        let mut y = conv_backward_input(self.value(x), self.value(w), stride, pad, ho, wo);
        if let Some(b) = b {
            add_bias(&mut y, self.value(b));
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        let rg = self.rg(&parents);
        Ok(self.push(y, Op::ConvTranspose { x, w, b, stride, pad }, rg))
    }

    /// 1x1 convolution remapping channels; `w` must be `(out_c, in_c, 1, 1)`.
    pub fn pointwise_conv(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let ws = self.value(w).shape();
        if ws[2] != 1 || ws[3] != 1 {
            return Err(Error::ShapeMismatch {
                op: "pointwise_conv",
                lhs: self.value(x).shape(),
                rhs: ws,
            });
        }
        self.conv2d(x, w, b, 1, 0)
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        let values: Vec<&Tensor> = xs.iter().map(|v| &self.nodes[v.0].value).collect();
        let y = Tensor::concat_channels(&values)?;
        let rg = self.rg(xs);
        Ok(self.push(y, Op::Concat(xs.to_vec()), rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let y = self.value(x).slice_channels(start, end)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Slice { x, start }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let y = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x]);
        self.push(y, Op::Scale(x, factor), rg)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let rg = self.rg(&[x]);
        match kind {
            Activation::LeakyRelu(alpha) => {
                let y = self.value(x).map(|v| if v > 0.0 { v } else { alpha * v });
                self.push(y, Op::LeakyRelu(x, alpha), rg)
            }
            Activation::Sigmoid => {
                let y = self.value(x).map(math::sigmoid);
                self.push(y, Op::Sigmoid(x), rg)
            }
        }
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        self.activation(x, Activation::LeakyRelu(alpha))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(y, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.len().max(1) as f64;
        let y = Tensor::scalar(t.sum() / n);
        let rg = self.rg(&[x]);
        self.push(y, Op::Mean(x), rg)
    }

    /// Binary cross-entropy: mean over unmasked elements of
    /// `-(y ln p + (1 - y) ln(1 - p))`, with `p` clamped to `[eps, 1 - eps]`.
    ///
    /// `mask` entries weight each element (normally 0 or 1). An all-zero mask
    /// yields a zero loss with zero gradient.
    pub fn bce(&mut self, pred: Var, target: Tensor, mask: Option<Tensor>) -> Result<Var> {
        let ps = self.value(pred).shape();
        if target.shape() != ps {
            return Err(Error::ShapeMismatch {
                op: "bce",
                lhs: ps,
                rhs: target.shape(),
            });
        }
        if let Some(m) = &mask {
            if m.shape() != ps {
                return Err(Error::ShapeMismatch {
                    op: "bce",
                    lhs: ps,
                    rhs: m.shape(),
                });
            }
        }
        let p = self.value(pred).data();
        let count = match &mask {
            Some(m) => m.sum(),
            None => p.len() as f64,
        };
        let mut total = 0.0;
        if count > 0.0 {
            for (i, (&pv, &y)) in p.iter().zip(target.data()).enumerate() {
                let wgt = mask.as_ref().map_or(1.0, |m| m.data()[i]);
                if wgt == 0.0 {
                    continue;
                }
                let pc = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
                total -= wgt * (y * math::ln(pc) + (1.0 - y) * math::ln(1.0 - pc));
            }
            total /= count;
        }
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::Bce {
                pred,
                target,
                mask,
                count,
            },
            rg,
        ))
    }

    /// Turns per-cell regression outputs `(b, 4, gx, gy)` holding
    /// `(dx, dy, log w, log h)` into `(x1, y1, x2, y2)` boxes in normalized
    /// coordinates. Cell `(i, j)` has center `((i + 0.5) / gx, (j + 0.5) / gy)`,
    /// offsets are in cell units and sizes are `exp(log w) / gx`.
    pub fn decode_boxes(&mut self, reg: Var) -> Result<Var> {
        let r = self.value(reg);
        let [b, c, gx, gy] = r.shape();
        if c != 4 {
            return Err(Error::contract("decode_boxes", format!("expected 4 channels, got {c}")));
        }
        let mut out = Tensor::zeros([b, 4, gx, gy]);
        for bi in 0..b {
            for i in 0..gx {
                for j in 0..gy {
                    let (x1, y1, x2, y2) = decode_cell(
                        [r.get(bi, 0, i, j), r.get(bi, 1, i, j), r.get(bi, 2, i, j), r.get(bi, 3, i, j)],
                        i,
                        j,
                        gx,
                        gy,
                    );
                    out.set(bi, 0, i, j, x1);
                    out.set(bi, 1, i, j, y1);
                    out.set(bi, 2, i, j, x2);
                    out.set(bi, 3, i, j, y2);
                }
            }
        }
        let rg = self.rg(&[reg]);
        Ok(self.push(out, Op::DecodeBoxes(reg), rg))
    }

    /// Mean of `1 - IoU` over cells where `mask` (shape `(b, 1, h, w)`) is
    /// nonzero. Boxes are `(b, 4, h, w)` tensors of `(x1, y1, x2, y2)`.
    pub fn iou_loss(&mut self, pred: Var, target: Tensor, mask: Tensor) -> Result<Var> {
        let ps = self.value(pred).shape();
        check_box_shapes("iou_loss", ps, &target, &mask)?;
        let p = self.value(pred);
        let [b, _, h, w] = ps;
        let mut total = 0.0;
        let mut count = 0.0;
        for bi in 0..b {
            for i in 0..h {
                for j in 0..w {
                    let m = mask.get(bi, 0, i, j);
                    if m == 0.0 {
                        continue;
                    }
                    let pb = read_box(p, bi, i, j);
                    let gb = read_box(&target, bi, i, j);
                    total += m * (1.0 - box_iou_grad(pb, gb).0);
                    count += m;
                }
            }
        }
        if count > 0.0 {
            total /= count;
        }
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::IouLoss {
                pred,
                target,
                mask,
                count,
            },
            rg,
        ))
    }

    /// Smooth L1 (threshold 1) averaged over masked elements; `mask` is
    /// `(b, 1, h, w)` and applies to every channel of the cell.
    pub fn smooth_l1(&mut self, pred: Var, target: Tensor, mask: Tensor) -> Result<Var> {
        let ps = self.value(pred).shape();
        if target.shape() != ps {
            return Err(Error::ShapeMismatch {
                op: "smooth_l1",
                lhs: ps,
                rhs: target.shape(),
            });
        }
        if mask.shape() != [ps[0], 1, ps[2], ps[3]] {
            return Err(Error::ShapeMismatch {
                op: "smooth_l1",
                lhs: ps,
                rhs: mask.shape(),
            });
        }
        let p = self.value(pred);
        let [b, c, h, w] = ps;
        let mut total = 0.0;
        let mut count = 0.0;
        for bi in 0..b {
            for i in 0..h {
                for j in 0..w {
                    let m = mask.get(bi, 0, i, j);
                    if m == 0.0 {
                        continue;
                    }
                    for ci in 0..c {
                        let d = p.get(bi, ci, i, j) - target.get(bi, ci, i, j);
                        total += m * if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
                        count += m;
                    }
                }
            }
        }
        if count > 0.0 {
            total /= count;
        }
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::SmoothL1 {
                pred,
                target,
                mask,
                count,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar root. Gradients are added to whatever the
    /// graph already holds.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if numel(root.value.shape()) != 1 {
            return Err(Error::contract(
                "backward",
                format!("root must be scalar, got shape {:?}", root.value.shape()),
            ));
        }
        let mut pending: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = pending[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut pending);
            match &mut self.grads[idx] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, pending: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, stride, pad } => {
                let xv = &nodes[x.0].value;
                let wv = &nodes[w.0].value;
                if wants(*x) {
                    let dx = conv_backward_input(g, wv, *stride, *pad, xv.height(), xv.width());
                    accumulate(pending, *x, dx);
                }
                if wants(*w) {
                    accumulate(pending, *w, conv_backward_weight(xv, g, *stride, *pad, wv.height()));
                }
                if let Some(b) = b {
                    if wants(*b) {
                        accumulate(pending, *b, channel_sums(g));
                    }
                }
            }
            Op::ConvTranspose { x, w, b, stride, pad } => {
                let xv = &nodes[x.0].value;
                let wv = &nodes[w.0].value;
                if wants(*x) {
                    let dx = conv_forward(g, wv, *stride, *pad, xv.height(), xv.width());
                    accumulate(pending, *x, dx);
                }
                if wants(*w) {
                    accumulate(pending, *w, conv_backward_weight(g, xv, *stride, *pad, wv.height()));
                }
                if let Some(b) = b {
                    if wants(*b) {
                        accumulate(pending, *b, channel_sums(g));
                    }
                }
            }
            Op::Concat(xs) => {
                let mut start = 0;
                for x in xs {
                    let c = nodes[x.0].value.channels();
                    if wants(*x) {
                        let part = g.slice_channels(start, start + c).expect("concat slice in range");
                        accumulate(pending, *x, part);
                    }
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                if wants(*x) {
                    let xs = nodes[x.0].value.shape();
                    let mut dx = Tensor::zeros(xs);
                    let [b, c, h, w] = xs;
                    let gc = g.channels();
                    let plane = h * w;
                    for bi in 0..b {
                        let src = bi * gc * plane;
                        let dst = (bi * c + start) * plane;
                        dx.data_mut()[dst..dst + gc * plane].copy_from_slice(&g.data()[src..src + gc * plane]);
                    }
                    accumulate(pending, *x, dx);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(pending, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(pending, *b, g.clone());
                }
            }
            Op::Scale(x, f) => {
                if wants(*x) {
                    accumulate(pending, *x, g.map(|v| v * f));
                }
            }
            Op::LeakyRelu(x, alpha) => {
                if wants(*x) {
                    let xv = &nodes[x.0].value;
                    let mut dx = g.clone();
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *d *= alpha;
                        }
                    }
                    accumulate(pending, *x, dx);
                }
            }
            Op::Sigmoid(x) => {
                if wants(*x) {
                    let mut dx = g.clone();
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y * (1.0 - y);
                    }
                    accumulate(pending, *x, dx);
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    accumulate(pending, *x, Tensor::full(nodes[x.0].value.shape(), g.item()));
                }
            }
            Op::Mean(x) => {
                if wants(*x) {
                    let s = nodes[x.0].value.shape();
                    let n = numel(s).max(1) as f64;
                    accumulate(pending, *x, Tensor::full(s, g.item() / n));
                }
            }
            Op::Bce {
                pred,
                target,
                mask,
                count,
            } => {
                if wants(*pred) {
                    let pv = &nodes[pred.0].value;
                    let mut dp = Tensor::zeros(pv.shape());
                    if *count > 0.0 {
                        let scale = g.item() / count;
                        for (i, d) in dp.data_mut().iter_mut().enumerate() {
                            let wgt = mask.as_ref().map_or(1.0, |m| m.data()[i]);
                            let p = pv.data()[i];
                            if wgt == 0.0 || p < BCE_EPS || p > 1.0 - BCE_EPS {
                                continue;
                            }
                            let y = target.data()[i];
                            *d = scale * wgt * (-y / p + (1.0 - y) / (1.0 - p));
                        }
                    }
                    accumulate(pending, *pred, dp);
                }
            }
            Op::DecodeBoxes(reg) => {
                if wants(*reg) {
                    let r = &nodes[reg.0].value;
                    let [b, _, gx, gy] = r.shape();
                    let mut dr = Tensor::zeros(r.shape());
                    for bi in 0..b {
                        for i in 0..gx {
                            for j in 0..gy {
                                let gx1 = g.get(bi, 0, i, j);
                                let gy1 = g.get(bi, 1, i, j);
                                let gx2 = g.get(bi, 2, i, j);
                                let gy2 = g.get(bi, 3, i, j);
                                let (fx, fy) = (gx as f64, gy as f64);
                                dr.set(bi, 0, i, j, (gx1 + gx2) / fx);
                                dr.set(bi, 1, i, j, (gy1 + gy2) / fy);
                                let lw = r.get(bi, 2, i, j);
                                let lh = r.get(bi, 3, i, j);
                                if lw.abs() < MAX_LOG_SIZE {
                                    let half = math::exp(lw) / (2.0 * fx);
                                    dr.set(bi, 2, i, j, (gx2 - gx1) * half);
                                }
                                if lh.abs() < MAX_LOG_SIZE {
                                    let half = math::exp(lh) / (2.0 * fy);
                                    dr.set(bi, 3, i, j, (gy2 - gy1) * half);
                                }
                            }
                        }
                    }
                    accumulate(pending, *reg, dr);
                }
            }
            Op::IouLoss {
                pred,
                target,
                mask,
                count,
            } => {
                if wants(*pred) && *count > 0.0 {
                    let pv = &nodes[pred.0].value;
                    let [b, _, h, w] = pv.shape();
                    let mut dp = Tensor::zeros(pv.shape());
                    let scale = g.item() / count;
                    for bi in 0..b {
                        for i in 0..h {
                            for j in 0..w {
                                let m = mask.get(bi, 0, i, j);
                                if m == 0.0 {
                                    continue;
                                }
                                let (_, d) = box_iou_grad(read_box(pv, bi, i, j), read_box(target, bi, i, j));
                                for (c, dv) in d.iter().enumerate() {
                                    dp.set(bi, c, i, j, -scale * m * dv);
                                }
                            }
                        }
                    }
                    accumulate(pending, *pred, dp);
                }
            }
            Op::SmoothL1 {
                pred,
                target,
                mask,
                count,
            } => {
                if wants(*pred) && *count > 0.0 {
                    let pv = &nodes[pred.0].value;
                    let [b, c, h, w] = pv.shape();
                    let mut dp = Tensor::zeros(pv.shape());
                    let scale = g.item() / count;
                    for bi in 0..b {
                        for i in 0..h {
                            for j in 0..w {
                                let m = mask.get(bi, 0, i, j);
                                if m == 0.0 {
                                    continue;
                                }
                                for ci in 0..c {
                                    let d = pv.get(bi, ci, i, j) - target.get(bi, ci, i, j);
                                    let gd = if d.abs() < 1.0 { d } else { d.signum() };
                                    dp.set(bi, ci, i, j, scale * m * gd);
                                }
                            }
                        }
                    }
                    accumulate(pending, *pred, dp);
                }
            }
        }
    }
}

fn accumulate(pending: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut pending[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn check_box_shapes(op: &'static str, ps: [usize; 4], target: &Tensor, mask: &Tensor) -> Result<()> {
    if ps[1] != 4 || target.shape() != ps {
        return Err(Error::ShapeMismatch {
            op,
            lhs: ps,
            rhs: target.shape(),
        });
    }
    if mask.shape() != [ps[0], 1, ps[2], ps[3]] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: ps,
            rhs: mask.shape(),
        });
    }
    Ok(())
}

#[inline]
fn read_box(t: &Tensor, b: usize, i: usize, j: usize) -> [f64; 4] {
    [t.get(b, 0, i, j), t.get(b, 1, i, j), t.get(b, 2, i, j), t.get(b, 3, i, j)]
}

/// Box of cell `(i, j)` from `(dx, dy, log w, log h)`.
pub(crate) fn decode_cell(reg: [f64; 4], i: usize, j: usize, gx: usize, gy: usize) -> (f64, f64, f64, f64) {
    let (fx, fy) = (gx as f64, gy as f64);
    let cx = (i as f64 + 0.5 + reg[0]) / fx;
    let cy = (j as f64 + 0.5 + reg[1]) / fy;
    let hw = math::exp(reg[2].clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE)) / (2.0 * fx);
    let hh = math::exp(reg[3].clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE)) / (2.0 * fy);
    (cx - hw, cy - hh, cx + hw, cy + hh)
}

/// IoU of `p` against `t` and its gradient with respect to `p`.
fn box_iou_grad(p: [f64; 4], t: [f64; 4]) -> (f64, [f64; 4]) {
    let [x1, y1, x2, y2] = p;
    let [gx1, gy1, gx2, gy2] = t;
    let iw = x2.min(gx2) - x1.max(gx1);
    let ih = y2.min(gy2) - y1.max(gy1);
    let pw = x2 - x1;
    let ph = y2 - y1;
    let area_p = pw * ph;
    let area_t = (gx2 - gx1) * (gy2 - gy1);
    if iw <= 0.0 || ih <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let inter = iw * ih;
    let union = area_p + area_t - inter;
    if union <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let iou = inter / union;
    let d_inter = [
        if x1 > gx1 { -ih } else { 0.0 },
        if y1 > gy1 { -iw } else { 0.0 },
        if x2 < gx2 { ih } else { 0.0 },
        if y2 < gy2 { iw } else { 0.0 },
    ];
    let d_area = [-ph, -pw, ph, pw];
    let mut d = [0.0; 4];
    for c in 0..4 {
        let d_union = d_area[c] - d_inter[c];
        d[c] = (d_inter[c] * union - inter * d_union) / (union * union);
    }
    (iou, d)
}
