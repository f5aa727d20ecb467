//! Reverse-mode autodiff over a tape of eagerly evaluated ops.
//!
//! Nodes are appended in construction order, which is a topological order,
//! so the backward pass is a single reverse sweep. Gradient accumulation
//! order is fixed by node index, making backward deterministic.
//!
//! A graph instance is single-threaded; independent graphs may live on
//! different threads.

use crate::error::{Result, SthqError};
use crate::tensor::{broadcast_binary, broadcast_shape, reduce_to_shape, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    MatMul,
    Transpose,
    Relu,
    Softmax,
    LogSoftmax,
    Log,
    Sum,
    SqErrSum,
    Scale(f64),
    Reshape,
    Conv2d { stride: usize, pad: usize },
    Upsample2x,
    Slice { axis: usize, start: usize, len: usize },
    Concat { axis: usize },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
}

/// Computational graph with cached forward values.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        self.nodes.push(Node { op, inputs, value, grad: None, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf; gradients accumulate here.
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(SthqError::NonFinite("leaf"));
        }
        self.nodes.push(Node { op: Op::Leaf, inputs: vec![], value, grad: None, requires_grad: true });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(SthqError::NonFinite("constant"));
        }
        self.nodes.push(Node { op: Op::Leaf, inputs: vec![], value, grad: None, requires_grad: false });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last [`Graph::backward`] call.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    // ---- elementwise / broadcast ----

    fn binary(&mut self, op: Op, name: &'static str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out_shape = broadcast_shape(name, self.value(a).shape(), self.value(b).shape())?;
        let f: fn(f64, f64) -> f64 = match op {
            Op::Add => |x, y| x + y,
            Op::Sub => |x, y| x - y,
            Op::Mul => |x, y| x * y,
            _ => unreachable!(),
        };
        let value = broadcast_binary(self.value(a), self.value(b), &out_shape, f);
        Ok(self.push(op, vec![a, b], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Mul, "mul", a, b)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let value = Tensor::from_raw(
            self.value(a).shape().to_vec(),
            self.value(a).data().iter().map(|&x| c * x).collect(),
        );
        Ok(self.push(Op::Scale(c), vec![a], value))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(SthqError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", sa, sb),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Op::MatMul, vec![a, b], Tensor::from_raw(vec![m, n], value)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).shape();
        if s.len() != 2 {
            return Err(SthqError::ShapeMismatch {
                op: "transpose",
                detail: format!("expected 2-d, got {:?}", s),
            });
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(Op::Transpose, vec![a], Tensor::from_raw(vec![n, m], out)))
    }

    // ---- activations ----

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Tensor::from_raw(
            self.value(a).shape().to_vec(),
            self.value(a).data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
        );
        Ok(self.push(Op::Relu, vec![a], value))
    }

    /// Softmax along the last axis, max-subtracted.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.value(a).shape().to_vec();
        let l = *shape.last().ok_or_else(|| SthqError::ShapeMismatch {
            op: "softmax",
            detail: "rank-0 input".into(),
        })?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(l) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Ok(self.push(Op::Softmax, vec![a], Tensor::from_raw(shape, out)))
    }

    /// Log-softmax along the last axis (stable form).
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.value(a).shape().to_vec();
        let l = *shape.last().ok_or_else(|| SthqError::ShapeMismatch {
            op: "log_softmax",
            detail: "rank-0 input".into(),
        })?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(l) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln() + m;
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.push(Op::LogSoftmax, vec![a], Tensor::from_raw(shape, out)))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Tensor::from_raw(
            self.value(a).shape().to_vec(),
            self.value(a).data().iter().map(|&x| x.ln()).collect(),
        );
        Ok(self.push(Op::Log, vec![a], value))
    }

    // ---- reductions ----

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(a).data().iter().sum();
        Ok(self.push(Op::Sum, vec![a], Tensor::from_raw(vec![1], vec![s])))
    }

    /// `sum((a - b)^2)`, shape `[1]`. Operand shapes must match exactly.
    pub fn sq_err_sum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(SthqError::ShapeMismatch {
                op: "sq_err_sum",
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Op::SqErrSum, vec![a, b], Tensor::from_raw(vec![1], vec![s])))
    }

    // ---- shape ops ----

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.value(a).numel() {
            return Err(SthqError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.value(a).shape(), shape),
            });
        }
        let value = self.value(a).reshaped(shape);
        Ok(self.push(Op::Reshape, vec![a], value))
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(SthqError::ShapeMismatch {
                op: "slice",
                detail: format!("axis {} range {}..{} of {:?}", axis, start, start + len, shape),
            });
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let (outer, mid, inner) = split_at_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        Ok(self.push(Op::Slice { axis, start, len }, vec![a], Tensor::from_raw(out_shape, out)))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(SthqError::InvalidArgument("concat of zero tensors".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(SthqError::ShapeMismatch {
                op: "concat",
                detail: format!("axis {} of {:?}", axis, first),
            });
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(SthqError::ShapeMismatch {
                    op: "concat",
                    detail: format!("{:?} vs {:?} (axis {})", s, first, axis),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = split_at_axis(&out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let s = self.value(p).shape();
                let mid = s[axis];
                let src = self.value(p).data();
                out.extend_from_slice(&src[o * mid * inner..(o + 1) * mid * inner]);
            }
        }
        Ok(self.push(Op::Concat { axis }, parts.to_vec(), Tensor::from_raw(out_shape, out)))
    }

    // ---- spatial ops (NCHW) ----

    /// 2-D convolution, zero padding `pad`, stride `stride`.
    /// Input `[B, Cin, H, W]`, weight `[Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let si = self.value(input).shape().to_vec();
        let sw = self.value(weight).shape().to_vec();
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[1] || stride == 0 {
            return Err(SthqError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input {:?} weight {:?} stride {}", si, sw, stride),
            });
        }
        let (b, cin, h, w) = (si[0], si[1], si[2], si[3]);
        let (cout, _, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(SthqError::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel {:?} larger than padded input {:?}", sw, si),
            });
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let x = self.value(input).data();
        let k = self.value(weight).data();
        let mut out = vec![0.0f64; b * cout * oh * ow];
        for bi in 0..b {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ky in 0..kh {
                                let iy = oy * stride + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let iy = iy - pad;
                                for kx in 0..kw {
                                    let ix = ox * stride + kx;
                                    if ix < pad || ix - pad >= w {
                                        continue;
                                    }
                                    let ix = ix - pad;
                                    acc += x[((bi * cin + ci) * h + iy) * w + ix]
                                        * k[((co * cin + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Ok(self.push(
            Op::Conv2d { stride, pad },
            vec![input, weight],
            Tensor::from_raw(vec![b, cout, oh, ow], out),
        ))
    }

    /// Nearest-neighbor 2x upsampling of `[B, C, H, W]`.
    pub fn upsample2x(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).shape().to_vec();
        if s.len() != 4 {
            return Err(SthqError::ShapeMismatch {
                op: "upsample2x",
                detail: format!("expected 4-d, got {:?}", s),
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let src = self.value(a).data();
        let mut out = vec![0.0; b * c * 4 * h * w];
        for bc in 0..b * c {
            for y in 0..h {
                for x in 0..w {
                    let v = src[(bc * h + y) * w + x];
                    let base = bc * 4 * h * w;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            out[base + (2 * y + dy) * 2 * w + (2 * x + dx)] = v;
                        }
                    }
                }
            }
        }
        Ok(self.push(Op::Upsample2x, vec![a], Tensor::from_raw(vec![b, c, 2 * h, 2 * w], out)))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar output; fills gradients of every node
    /// reachable from trainable leaves.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        if !self.value(output).is_scalar() {
            return Err(SthqError::NonScalarBackward(self.value(output).shape().to_vec()));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[output.0].grad = Some(Tensor::from_raw(
            self.value(output).shape().to_vec(),
            vec![1.0],
        ));
        for i in (0..=output.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let grad = self.nodes[i].grad.as_ref().unwrap().clone();
            let inputs = self.nodes[i].inputs.clone();
            let op = self.nodes[i].op.clone();
            let adjoints = self.input_adjoints(&op, i, &inputs, &grad);
            for (input, adj) in inputs.iter().zip(adjoints) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                let adj = match adj {
                    Some(a) => a,
                    None => continue,
                };
                match &mut self.nodes[input.0].grad {
                    Some(g) => {
                        for (gv, av) in g.data_mut().iter_mut().zip(adj.data()) {
                            *gv += av;
                        }
                    }
                    slot @ None => *slot = Some(adj),
                }
            }
        }
        Ok(())
    }

    fn input_adjoints(
        &self,
        op: &Op,
        node: usize,
        inputs: &[NodeId],
        grad: &Tensor,
    ) -> Vec<Option<Tensor>> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let out_val = &self.nodes[node].value;
        match op {
            Op::Leaf => vec![],
            Op::Add => vec![
                Some(reduce_to_shape(grad, val(inputs[0]).shape())),
                Some(reduce_to_shape(grad, val(inputs[1]).shape())),
            ],
            Op::Sub => {
                let db = reduce_to_shape(grad, val(inputs[1]).shape());
                let db = Tensor::from_raw(db.shape().to_vec(), db.data().iter().map(|&v| -v).collect());
                vec![Some(reduce_to_shape(grad, val(inputs[0]).shape())), Some(db)]
            }
            Op::Mul => {
                let (a, b) = (val(inputs[0]), val(inputs[1]));
                let ga = broadcast_binary(grad, b, grad.shape(), |g, y| g * y);
                let gb = broadcast_binary(grad, a, grad.shape(), |g, x| g * x);
                vec![
                    Some(reduce_to_shape(&ga, a.shape())),
                    Some(reduce_to_shape(&gb, b.shape())),
                ]
            }
            Op::MatMul => {
                let (a, b) = (val(inputs[0]), val(inputs[1]));
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                // dA = g . B^T ; dB = A^T . g
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = grad.data()[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for kk in 0..k {
                            da[i * k + kk] += g * b.data()[kk * n + j];
                        }
                    }
                }
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for kk in 0..k {
                        let av = a.data()[i * k + kk];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[kk * n + j] += av * grad.data()[i * n + j];
                        }
                    }
                }
                vec![
                    Some(Tensor::from_raw(vec![m, k], da)),
                    Some(Tensor::from_raw(vec![k, n], db)),
                ]
            }
            Op::Transpose => {
                let s = out_val.shape();
                let (n, m) = (s[0], s[1]);
                let mut out = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        out[j * n + i] = grad.data()[i * m + j];
                    }
                }
                vec![Some(Tensor::from_raw(vec![m, n], out))]
            }
            Op::Relu => {
                let x = val(inputs[0]);
                let data = x
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                    .collect();
                vec![Some(Tensor::from_raw(x.shape().to_vec(), data))]
            }
            Op::Softmax => {
                let y = out_val;
                let l = *y.shape().last().unwrap();
                let mut out = vec![0.0; y.numel()];
                for (r, (yrow, grow)) in y.data().chunks(l).zip(grad.data().chunks(l)).enumerate() {
                    let dot: f64 = yrow.iter().zip(grow).map(|(&yv, &g)| yv * g).sum();
                    for j in 0..l {
                        out[r * l + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                vec![Some(Tensor::from_raw(y.shape().to_vec(), out))]
            }
            Op::LogSoftmax => {
                let y = out_val;
                let l = *y.shape().last().unwrap();
                let mut out = vec![0.0; y.numel()];
                for (r, (yrow, grow)) in y.data().chunks(l).zip(grad.data().chunks(l)).enumerate() {
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..l {
                        out[r * l + j] = grow[j] - yrow[j].exp() * gsum;
                    }
                }
                vec![Some(Tensor::from_raw(y.shape().to_vec(), out))]
            }
            Op::Log => {
                let x = val(inputs[0]);
                let data = x.data().iter().zip(grad.data()).map(|(&xv, &g)| g / xv).collect();
                vec![Some(Tensor::from_raw(x.shape().to_vec(), data))]
            }
            Op::Sum => {
                let x = val(inputs[0]);
                let g = grad.item();
                vec![Some(Tensor::from_raw(x.shape().to_vec(), vec![g; x.numel()]))]
            }
            Op::SqErrSum => {
                let (a, b) = (val(inputs[0]), val(inputs[1]));
                let g = grad.item();
                let da: Vec<f64> = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| 2.0 * (x - y) * g)
                    .collect();
                let db: Vec<f64> = da.iter().map(|&v| -v).collect();
                vec![
                    Some(Tensor::from_raw(a.shape().to_vec(), da)),
                    Some(Tensor::from_raw(b.shape().to_vec(), db)),
                ]
            }
            Op::Scale(c) => {
                let data = grad.data().iter().map(|&g| c * g).collect();
                vec![Some(Tensor::from_raw(val(inputs[0]).shape().to_vec(), data))]
            }
            Op::Reshape => {
                let x = val(inputs[0]);
                vec![Some(grad.reshaped(x.shape().to_vec()))]
            }
            Op::Slice { axis, start, len } => {
                let x = val(inputs[0]);
                let shape = x.shape().to_vec();
                let (outer, mid, inner) = split_at_axis(&shape, *axis);
                let mut out = vec![0.0; x.numel()];
                for o in 0..outer {
                    let dst = (o * mid + start) * inner;
                    let src = o * len * inner;
                    out[dst..dst + len * inner].copy_from_slice(&grad.data()[src..src + len * inner]);
                }
                vec![Some(Tensor::from_raw(shape, out))]
            }
            Op::Concat { axis } => {
                let out_shape = out_val.shape().to_vec();
                let (outer, _, inner) = split_at_axis(&out_shape, *axis);
                let mut adjoints = Vec::with_capacity(inputs.len());
                // per-part axis extents and running offset along the axis
                let mids: Vec<usize> = inputs.iter().map(|&p| val(p).shape()[*axis]).collect();
                let total_mid: usize = mids.iter().sum();
                let mut offset = 0usize;
                for (pi, &p) in inputs.iter().enumerate() {
                    let mid = mids[pi];
                    let mut part = vec![0.0; val(p).numel()];
                    for o in 0..outer {
                        let src = (o * total_mid + offset) * inner;
                        let dst = o * mid * inner;
                        part[dst..dst + mid * inner]
                            .copy_from_slice(&grad.data()[src..src + mid * inner]);
                    }
                    adjoints.push(Some(Tensor::from_raw(val(p).shape().to_vec(), part)));
                    offset += mid;
                }
                adjoints
            }
            Op::Conv2d { stride, pad } => {
                let (x, k) = (val(inputs[0]), val(inputs[1]));
                let (b, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                let (cout, _, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
                let (oh, ow) = (out_val.shape()[2], out_val.shape()[3]);
                let mut dx = vec![0.0; x.numel()];
                let mut dk = vec![0.0; k.numel()];
                for bi in 0..b {
                    for co in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = grad.data()[((bi * cout + co) * oh + oy) * ow + ox];
                                if g == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = oy * stride + ky;
                                        if iy < *pad || iy - pad >= h {
                                            continue;
                                        }
                                        let iy = iy - pad;
                                        for kx in 0..kw {
                                            let ix = ox * stride + kx;
                                            if ix < *pad || ix - pad >= w {
                                                continue;
                                            }
                                            let ix = ix - pad;
                                            let xi = ((bi * cin + ci) * h + iy) * w + ix;
                                            let ki = ((co * cin + ci) * kh + ky) * kw + kx;
                                            dx[xi] += g * k.data()[ki];
                                            dk[ki] += g * x.data()[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![
                    Some(Tensor::from_raw(x.shape().to_vec(), dx)),
                    Some(Tensor::from_raw(k.shape().to_vec(), dk)),
                ]
            }
            Op::Upsample2x => {
                let x = val(inputs[0]);
                let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                let mut dx = vec![0.0; x.numel()];
                for bc in 0..b * c {
                    let base = bc * 4 * h * w;
                    for y in 0..h {
                        for xx in 0..w {
                            let mut acc = 0.0;
                            for dy in 0..2 {
                                for dxo in 0..2 {
                                    acc += grad.data()[base + (2 * y + dy) * 2 * w + (2 * xx + dxo)];
                                }
                            }
                            dx[(bc * h + y) * w + xx] = acc;
                        }
                    }
                }
                vec![Some(Tensor::from_raw(x.shape().to_vec(), dx))]
            }
        }
    }
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// (outer, axis extent, inner) block sizes around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_shapes() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.])).unwrap();
        let b = g.constant(t(&[3, 1], &[1., 0., -1.])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 1]);
        assert_eq!(g.value(c).data(), &[-2., -2.]);
        let bad = g.matmul(b, b);
        assert!(bad.is_err());
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[-1., 0., 2.])).unwrap();
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0., 0., 2.]);
    }

    #[test]
    fn softmax_symmetry() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[0., 0.])).unwrap();
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0)).unwrap();
        let y = g.leaf(Tensor::scalar(3.0)).unwrap();
        let p = g.mul(x, y).unwrap();
        g.backward(p).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 3.0);
        assert_eq!(g.grad(y).unwrap().item(), 2.0);
    }

    #[test]
    fn relu_subgradient_zero_at_kink() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[-1., 2.])).unwrap();
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0., 1.]);

        let mut g = Graph::new();
        let x = g.leaf(t(&[1], &[0.])).unwrap();
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1., 2.])).unwrap();
        assert!(matches!(g.backward(x), Err(SthqError::NonScalarBackward(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut g = Graph::new();
            let a = g.constant(t(&[2, 2], &[0.1, 0.7, -0.3, 1.9])).unwrap();
            let b = g.constant(t(&[2, 2], &[1.5, -0.2, 0.9, 0.4])).unwrap();
            let m = g.matmul(a, b).unwrap();
            let s = g.softmax(m).unwrap();
            g.value(s).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn grad_accumulates_over_fanout() {
        // y = x*x + x  => dy/dx = 2x + 1
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0)).unwrap();
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 7.0);
    }

    #[test]
    fn concat_slice_roundtrip() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 2], &[1., 2., 3., 4.])).unwrap();
        let b = g.leaf(t(&[2, 1], &[5., 6.])).unwrap();
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 5., 3., 4., 6.]);
        let s = g.slice(c, 1, 2, 1).unwrap();
        assert_eq!(g.value(s).data(), &[5., 6.]);
        let total = g.sum(s).unwrap();
        g.backward(total).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[0., 0., 0., 0.]);
        assert_eq!(g.grad(b).unwrap().data(), &[1., 1.]);
    }

    #[test]
    fn upsample_forward() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 1, 2], &[1., 2.])).unwrap();
        let u = g.upsample2x(x).unwrap();
        assert_eq!(g.value(u).shape(), &[1, 1, 2, 4]);
        assert_eq!(g.value(u).data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
    }
}
