//! Eager op tape with reverse-mode backward.
//!
//! Every operation computes its value immediately and records itself as a
//! node. The node list is therefore already in topological order, and
//! [`Graph::backward`] is a single reverse sweep that visits each node
//! exactly once, summing contributions when a tensor feeds several
//! consumers.

use crate::tensor::Tensor;
use crate::{NumError, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Neg(TensorId),
    Abs(TensorId),
    Exp(TensorId),
    Ln(TensorId),
    Sqrt(TensorId),
    Relu(TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    // The shift amount only documents the node; its gradient is identity.
    AddScalar(TensorId, #[allow(dead_code)] f64),
    MulScalar(TensorId, f64),
    SumAll(TensorId),
    MeanAll(TensorId),
    Softmax(TensorId),
    Dense {
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
    },
    Matvec {
        m: TensorId,
        v: TensorId,
    },
    MatvecT {
        m: TensorId,
        v: TensorId,
    },
    Conv2d {
        x: TensorId,
        k: TensorId,
        stride: usize,
        pad: usize,
    },
    AddChannelBias {
        x: TensorId,
        b: TensorId,
    },
    GlobalAvgPool(TensorId),
    ScaleChannels {
        x: TensorId,
        s: TensorId,
    },
    ScaleBy {
        x: TensorId,
        s: TensorId,
    },
    StackRows(Vec<TensorId>),
    Concat(Vec<TensorId>),
    Reshape(TensorId),
    Slice1 {
        x: TensorId,
        idx: usize,
    },
}

struct Node {
    tensor: Tensor,
    op: Op,
    /// True when a gradient must flow into or through this node.
    needs: bool,
}

/// Recorded computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_finite(data: &[f64], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumError::NonFinite { op })
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. The tensor's `requires_grad` flag decides whether
    /// `backward` will produce a gradient for it.
    pub fn input(&mut self, tensor: Tensor) -> TensorId {
        let needs = tensor.requires_grad;
        self.push(tensor, Op::Leaf, needs)
    }

    /// Leaf that never receives a gradient, regardless of the tensor flag.
    pub fn constant(&mut self, mut tensor: Tensor) -> TensorId {
        tensor.requires_grad = false;
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Gradient of the most recent `backward` pass, if one reached `id`.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    fn push(&mut self, tensor: Tensor, op: Op, needs: bool) -> TensorId {
        self.nodes.push(Node { tensor, op, needs });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs
    }

    fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].tensor.data()
    }

    fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    fn record(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, name: &'static str) -> Result<TensorId> {
        check_finite(&data, name)?;
        let needs = match &op {
            Op::Leaf => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::Neg(a)
            | Op::Abs(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::AddScalar(a, _)
            | Op::MulScalar(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::Softmax(a)
            | Op::GlobalAvgPool(a)
            | Op::Reshape(a)
            | Op::Slice1 { x: a, .. } => self.needs(*a),
            Op::Dense { x, w, b } => {
                self.needs(*x) || self.needs(*w) || b.map(|b| self.needs(b)).unwrap_or(false)
            }
            Op::Matvec { m, v } | Op::MatvecT { m, v } => self.needs(*m) || self.needs(*v),
            Op::Conv2d { x, k, .. } => self.needs(*x) || self.needs(*k),
            Op::AddChannelBias { x, b } => self.needs(*x) || self.needs(*b),
            Op::ScaleChannels { x, s } | Op::ScaleBy { x, s } => self.needs(*x) || self.needs(*s),
            Op::StackRows(ids) | Op::Concat(ids) => ids.iter().any(|i| self.needs(*i)),
        };
        let mut tensor = Tensor::new(shape, data)?;
        tensor.requires_grad = needs;
        Ok(self.push(tensor, op, needs))
    }

    fn binary_same_shape(&self, a: TensorId, b: TensorId, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NumError::DimensionMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    // ── elementwise binary ──────────────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "add")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        self.record(self.shape(a).to_vec(), data, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "sub")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        self.record(self.shape(a).to_vec(), data, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "mul")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        self.record(self.shape(a).to_vec(), data, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "div")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x / y)
            .collect();
        self.record(self.shape(a).to_vec(), data, Op::Div(a, b), "div")
    }

    // ── elementwise unary ───────────────────────────────────────────────

    pub fn neg(&mut self, a: TensorId) -> Result<TensorId> {
        let data = self.data(a).iter().map(|x| -x).collect();
        self.record(self.shape(a).to_vec(), data, Op::Neg(a), "neg")
    }

    pub fn abs(&mut self, a: TensorId) -> Result<TensorId> {
        let data = self.data(a).iter().map(|x| x.abs()).collect();
        self.record(self.shape(a).to_vec(), data, Op::Abs(a), "abs")
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        let data = self.data(a).iter().map(|x| x.exp()).collect();
        self.record(self.shape(a).to_vec(), data, Op::Exp(a), "exp")
    }

    pub fn ln(&mut self, a: TensorId) -> Result<TensorId> {
        let data = self.data(a).iter().map(|x| x.ln()).collect();
        self.record(self.shape(a).to_vec(), data, Op::Ln(a), "ln")
    }

    pub fn sqrt(&mut self, a: TensorId) -> Result<TensorId> {
        let data = self.data(a).iter().map(|x| x.sqrt()).collect();
        self.record(self.shape(a).to_vec(), data, Op::Sqrt(a), "sqrt")
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let data = self.data(a).iter().map(|x| x.max(0.0)).collect();
        self.record(self.shape(a).to_vec(), data, Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let data = self.data(a).iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        self.record(self.shape(a).to_vec(), data, Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        let data = self.data(a).iter().map(|x| x.tanh()).collect();
        self.record(self.shape(a).to_vec(), data, Op::Tanh(a), "tanh")
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let data = self.data(a).iter().map(|x| x + c).collect();
        self.record(self.shape(a).to_vec(), data, Op::AddScalar(a, c), "add_scalar")
    }

    pub fn mul_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let data = self.data(a).iter().map(|x| x * c).collect();
        self.record(self.shape(a).to_vec(), data, Op::MulScalar(a, c), "mul_scalar")
    }

    // ── reductions ──────────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let s: f64 = self.data(a).iter().sum();
        self.record(vec![1], vec![s], Op::SumAll(a), "sum_all")
    }

    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId> {
        let n = self.data(a).len();
        if n == 0 {
            return Err(NumError::InvalidArgument {
                op: "mean_all",
                detail: "empty tensor".into(),
            });
        }
        let s: f64 = self.data(a).iter().sum::<f64>() / n as f64;
        self.record(vec![1], vec![s], Op::MeanAll(a), "mean_all")
    }

    // ── softmax ─────────────────────────────────────────────────────────

    /// Softmax over a 1-D tensor, computed with max-subtraction.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId> {
        if self.shape(a).len() != 1 || self.data(a).is_empty() {
            return Err(NumError::DimensionMismatch {
                op: "softmax",
                detail: format!("expected nonempty 1-D input, got {:?}", self.shape(a)),
            });
        }
        let x = self.data(a);
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let data: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        self.record(self.shape(a).to_vec(), data, Op::Softmax(a), "softmax")
    }

    // ── linear layers ───────────────────────────────────────────────────

    /// `y = W·x (+ b)` with `x: [d_in]`, `w: [d_out, d_in]`, `b: [d_out]`.
    pub fn dense(&mut self, x: TensorId, w: TensorId, b: Option<TensorId>) -> Result<TensorId> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] {
            return Err(NumError::DimensionMismatch {
                op: "dense",
                detail: format!("x {:?} w {:?}", xs, ws),
            });
        }
        let d_out = ws[0];
        let d_in = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return Err(NumError::DimensionMismatch {
                    op: "dense",
                    detail: format!("bias {:?}, expected [{}]", self.shape(b), d_out),
                });
            }
        }
        let xv = self.data(x);
        let wv = self.data(w);
        let mut data = vec![0.0; d_out];
        for o in 0..d_out {
            let row = &wv[o * d_in..(o + 1) * d_in];
            data[o] = row.iter().zip(xv).map(|(w, x)| w * x).sum();
        }
        if let Some(b) = b {
            for (y, bv) in data.iter_mut().zip(self.data(b)) {
                *y += bv;
            }
        }
        self.record(vec![d_out], data, Op::Dense { x, w, b }, "dense")
    }

    /// `y = M·v` with `m: [n, d]`, `v: [d]`.
    pub fn matvec(&mut self, m: TensorId, v: TensorId) -> Result<TensorId> {
        let (ms, vs) = (self.shape(m), self.shape(v));
        if ms.len() != 2 || vs.len() != 1 || ms[1] != vs[0] {
            return Err(NumError::DimensionMismatch {
                op: "matvec",
                detail: format!("m {:?} v {:?}", ms, vs),
            });
        }
        let (n, d) = (ms[0], ms[1]);
        let mv = self.data(m);
        let vv = self.data(v);
        let data: Vec<f64> = (0..n)
            .map(|i| mv[i * d..(i + 1) * d].iter().zip(vv).map(|(a, b)| a * b).sum())
            .collect();
        self.record(vec![n], data, Op::Matvec { m, v }, "matvec")
    }

    /// `y = Mᵀ·v` with `m: [n, d]`, `v: [n]`.
    pub fn matvec_t(&mut self, m: TensorId, v: TensorId) -> Result<TensorId> {
        let (ms, vs) = (self.shape(m), self.shape(v));
        if ms.len() != 2 || vs.len() != 1 || ms[0] != vs[0] {
            return Err(NumError::DimensionMismatch {
                op: "matvec_t",
                detail: format!("m {:?} v {:?}", ms, vs),
            });
        }
        let (n, d) = (ms[0], ms[1]);
        let mv = self.data(m);
        let vv = self.data(v);
        let mut data = vec![0.0; d];
        for i in 0..n {
            let row = &mv[i * d..(i + 1) * d];
            for j in 0..d {
                data[j] += row[j] * vv[i];
            }
        }
        self.record(vec![d], data, Op::MatvecT { m, v }, "matvec_t")
    }

    // ── convolution ─────────────────────────────────────────────────────

    /// Direct 2-D convolution. `x: [H, W, C_in]`, `k: [K, K, C_in, C_out]`,
    /// output `[H', W', C_out]` with `H' = (H + 2·pad − K)/stride + 1`.
    pub fn conv2d(&mut self, x: TensorId, k: TensorId, stride: usize, pad: usize) -> Result<TensorId> {
        if stride < 1 {
            return Err(NumError::InvalidArgument {
                op: "conv2d",
                detail: "stride must be ≥ 1".into(),
            });
        }
        let (xs, ks) = (self.shape(x), self.shape(k));
        if xs.len() != 3 || ks.len() != 4 || ks[0] != ks[1] {
            return Err(NumError::DimensionMismatch {
                op: "conv2d",
                detail: format!("x {:?} k {:?}", xs, ks),
            });
        }
        let (h, w, c_in) = (xs[0], xs[1], xs[2]);
        let (kk, c_out) = (ks[0], ks[3]);
        if ks[2] != c_in {
            return Err(NumError::DimensionMismatch {
                op: "conv2d",
                detail: format!("kernel C_in {} vs input C_in {}", ks[2], c_in),
            });
        }
        if kk > h + 2 * pad || kk > w + 2 * pad {
            return Err(NumError::DimensionMismatch {
                op: "conv2d",
                detail: format!("kernel {} exceeds padded input {}x{}", kk, h + 2 * pad, w + 2 * pad),
            });
        }
        let h_out = (h + 2 * pad - kk) / stride + 1;
        let w_out = (w + 2 * pad - kk) / stride + 1;
        let xv = self.data(x);
        let kv = self.data(k);
        let mut data = vec![0.0; h_out * w_out * c_out];
        for oh in 0..h_out {
            for ow in 0..w_out {
                for kh in 0..kk {
                    let ih = (oh * stride + kh) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for kw in 0..kk {
                        let iw = (ow * stride + kw) as isize - pad as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let x_base = ((ih as usize * w) + iw as usize) * c_in;
                        let k_base = (kh * kk + kw) * c_in * c_out;
                        let y_base = (oh * w_out + ow) * c_out;
                        for ci in 0..c_in {
                            let xval = xv[x_base + ci];
                            let k_row = k_base + ci * c_out;
                            for co in 0..c_out {
                                data[y_base + co] += xval * kv[k_row + co];
                            }
                        }
                    }
                }
            }
        }
        self.record(
            vec![h_out, w_out, c_out],
            data,
            Op::Conv2d { x, k, stride, pad },
            "conv2d",
        )
    }

    /// `y[h,w,c] = x[h,w,c] + b[c]` with `x: [H, W, C]`, `b: [C]`.
    pub fn add_channel_bias(&mut self, x: TensorId, b: TensorId) -> Result<TensorId> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if xs.len() != 3 || bs.len() != 1 || bs[0] != xs[2] {
            return Err(NumError::DimensionMismatch {
                op: "add_channel_bias",
                detail: format!("x {:?} b {:?}", xs, bs),
            });
        }
        let c = xs[2];
        let bv = self.data(b);
        let data: Vec<f64> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % c])
            .collect();
        self.record(xs.to_vec(), data, Op::AddChannelBias { x, b }, "add_channel_bias")
    }

    /// Per-channel mean over the spatial plane: `[H, W, C] -> [C]`.
    pub fn global_avg_pool(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x);
        if xs.len() != 3 || xs[0] == 0 || xs[1] == 0 {
            return Err(NumError::DimensionMismatch {
                op: "global_avg_pool",
                detail: format!("expected [H≥1, W≥1, C], got {:?}", xs),
            });
        }
        let (h, w, c) = (xs[0], xs[1], xs[2]);
        let xv = self.data(x);
        let mut data = vec![0.0; c];
        for plane in xv.chunks_exact(c) {
            for (acc, v) in data.iter_mut().zip(plane) {
                *acc += v;
            }
        }
        let inv = 1.0 / (h * w) as f64;
        for v in &mut data {
            *v *= inv;
        }
        self.record(vec![c], data, Op::GlobalAvgPool(x), "global_avg_pool")
    }

    /// `y[h,w,c] = s[c]·x[h,w,c]` with `x: [H, W, C]`, `s: [C]`.
    pub fn scale_channels(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        let (xs, ss) = (self.shape(x), self.shape(s));
        if xs.len() != 3 || ss.len() != 1 || ss[0] != xs[2] {
            return Err(NumError::DimensionMismatch {
                op: "scale_channels",
                detail: format!("x {:?} s {:?}", xs, ss),
            });
        }
        let c = xs[2];
        let sv = self.data(s);
        let data: Vec<f64> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v * sv[i % c])
            .collect();
        self.record(xs.to_vec(), data, Op::ScaleChannels { x, s }, "scale_channels")
    }

    /// Multiplies every element of `x` by the scalar tensor `s`.
    pub fn scale_by(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        if self.data(s).len() != 1 {
            return Err(NumError::NotScalar {
                op: "scale_by",
                numel: self.data(s).len(),
            });
        }
        let sv = self.data(s)[0];
        let data = self.data(x).iter().map(|v| v * sv).collect();
        self.record(self.shape(x).to_vec(), data, Op::ScaleBy { x, s }, "scale_by")
    }

    // ── shape plumbing ──────────────────────────────────────────────────

    /// Stacks equal-length 1-D tensors into an `[n, m]` matrix.
    pub fn stack_rows(&mut self, rows: &[TensorId]) -> Result<TensorId> {
        if rows.is_empty() {
            return Err(NumError::InvalidArgument {
                op: "stack_rows",
                detail: "no rows".into(),
            });
        }
        let m = self.data(rows[0]).len();
        for &r in rows {
            if self.shape(r).len() != 1 || self.data(r).len() != m {
                return Err(NumError::DimensionMismatch {
                    op: "stack_rows",
                    detail: format!("row shape {:?}, expected [{}]", self.shape(r), m),
                });
            }
        }
        let mut data = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            data.extend_from_slice(self.data(r));
        }
        self.record(vec![rows.len(), m], data, Op::StackRows(rows.to_vec()), "stack_rows")
    }

    /// Concatenates 1-D tensors end to end.
    pub fn concat(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(NumError::InvalidArgument {
                op: "concat",
                detail: "no parts".into(),
            });
        }
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(NumError::DimensionMismatch {
                    op: "concat",
                    detail: format!("expected 1-D parts, got {:?}", self.shape(p)),
                });
            }
            data.extend_from_slice(self.data(p));
        }
        let n = data.len();
        self.record(vec![n], data, Op::Concat(parts.to_vec()), "concat")
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let n: usize = shape.iter().product();
        if n != self.data(x).len() {
            return Err(NumError::ShapeDataMismatch {
                shape,
                expected: n,
                actual: self.data(x).len(),
            });
        }
        let data = self.data(x).to_vec();
        self.record(shape, data, Op::Reshape(x), "reshape")
    }

    /// Extracts element `idx` of a 1-D tensor as a scalar.
    pub fn slice1(&mut self, x: TensorId, idx: usize) -> Result<TensorId> {
        if self.shape(x).len() != 1 || idx >= self.data(x).len() {
            return Err(NumError::DimensionMismatch {
                op: "slice1",
                detail: format!("index {} into {:?}", idx, self.shape(x)),
            });
        }
        let v = self.data(x)[idx];
        self.record(vec![1], vec![v], Op::Slice1 { x, idx }, "slice1")
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients land in the `grad`
    /// field of every node that required them; earlier gradients are
    /// cleared first.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.data(loss).len() != 1 {
            return Err(NumError::NotScalar {
                op: "backward",
                numel: self.data(loss).len(),
            });
        }
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].needs {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let Some(g) = g {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(NumError::NonFinite { op: "backward" });
                }
                node.tensor.grad = Some(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // Adds `f` into the gradient buffer of `id` iff that node needs one.
        macro_rules! into_grad {
            ($id:expr, $f:expr) => {
                if self.needs($id) {
                    let buf = grads[$id.0]
                        .get_or_insert_with(|| vec![0.0; self.data($id).len()]);
                    #[allow(clippy::redundant_closure_call)]
                    ($f)(buf.as_mut_slice());
                }
            };
        }

        let node = &self.nodes[i];
        let out = node.tensor.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                into_grad!(*a, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(g) {
                    *d += g;
                });
                into_grad!(*b, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(g) {
                    *d += g;
                });
            }
            Op::Sub(a, b) => {
                into_grad!(*a, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(g) {
                    *d += g;
                });
                into_grad!(*b, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(g) {
                    *d -= g;
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                into_grad!(*a, |buf: &mut [f64]| for k in 0..buf.len() {
                    buf[k] += g[k] * bv[k];
                });
                into_grad!(*b, |buf: &mut [f64]| for k in 0..buf.len() {
                    buf[k] += g[k] * av[k];
                });
            }
            Op::Div(a, b) => {
                let bv = self.data(*b);
                into_grad!(*a, |buf: &mut [f64]| for k in 0..buf.len() {
                    buf[k] += g[k] / bv[k];
                });
                into_grad!(*b, |buf: &mut [f64]| for k in 0..buf.len() {
                    buf[k] -= g[k] * out[k] / bv[k];
                });
            }
            Op::Neg(a) => {
                into_grad!(*a, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(g) {
                    *d -= g;
                });
            }
            Op::Abs(a) => {
                let av = self.data(*a);
                into_grad!(*a, |buf: &mut [f64]| for k in 0..buf.len() {
                    let s = if av[k] > 0.0 {
                        1.0
                    } else if av[k] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    buf[k] += g[k] * s;
                });
            }
            Op::Exp(a) => {
                into_grad!(*a, |buf: &mut [f64]| for k in 0..buf.len() {
                    buf[k] += g[k] * out[k];
                });
            }
            Op::Ln(a) => {
                let av = self.data(*a);
                into_grad!(*a, |buf: &mut [f64]| for k in 0..buf.len() {
                    buf[k] += g[k] / av[k];
                });
            }
            Op::Sqrt(a) => {
                into_grad!(*a, |buf: &mut [f64]| for k in 0..buf.len() {
                    buf[k] += g[k] / (2.0 * out[k]);
                });
            }
            Op::Relu(a) => {
                let av = self.data(*a);
                into_grad!(*a, |buf: &mut [f64]| for k in 0..buf.len() {
                    if av[k] > 0.0 {
                        buf[k] += g[k];
                    }
                });
            }
            Op::Sigmoid(a) => {
                into_grad!(*a, |buf: &mut [f64]| for k in 0..buf.len() {
                    buf[k] += g[k] * out[k] * (1.0 - out[k]);
                });
            }
            Op::Tanh(a) => {
                into_grad!(*a, |buf: &mut [f64]| for k in 0..buf.len() {
                    buf[k] += g[k] * (1.0 - out[k] * out[k]);
                });
            }
            Op::AddScalar(a, _) => {
                into_grad!(*a, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(g) {
                    *d += g;
                });
            }
            Op::MulScalar(a, c) => {
                let c = *c;
                into_grad!(*a, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(g) {
                    *d += g * c;
                });
            }
            Op::SumAll(a) => {
                into_grad!(*a, |buf: &mut [f64]| for d in buf.iter_mut() {
                    *d += g[0];
                });
            }
            Op::MeanAll(a) => {
                let inv = 1.0 / self.data(*a).len() as f64;
                into_grad!(*a, |buf: &mut [f64]| for d in buf.iter_mut() {
                    *d += g[0] * inv;
                });
            }
            Op::Softmax(a) => {
                let dot: f64 = g.iter().zip(out).map(|(g, y)| g * y).sum();
                into_grad!(*a, |buf: &mut [f64]| for k in 0..buf.len() {
                    buf[k] += out[k] * (g[k] - dot);
                });
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.data(*x), self.data(*w));
                let d_in = xv.len();
                into_grad!(*x, |buf: &mut [f64]| {
                    for (o, go) in g.iter().enumerate() {
                        let row = &wv[o * d_in..(o + 1) * d_in];
                        for (d, w) in buf.iter_mut().zip(row) {
                            *d += go * w;
                        }
                    }
                });
                into_grad!(*w, |buf: &mut [f64]| {
                    for (o, go) in g.iter().enumerate() {
                        let row = &mut buf[o * d_in..(o + 1) * d_in];
                        for (d, x) in row.iter_mut().zip(xv) {
                            *d += go * x;
                        }
                    }
                });
                if let Some(b) = b {
                    into_grad!(*b, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(g) {
                        *d += g;
                    });
                }
            }
            Op::Matvec { m, v } => {
                let (mv, vv) = (self.data(*m), self.data(*v));
                let d = vv.len();
                into_grad!(*m, |buf: &mut [f64]| {
                    for (i, gi) in g.iter().enumerate() {
                        let row = &mut buf[i * d..(i + 1) * d];
                        for (dst, v) in row.iter_mut().zip(vv) {
                            *dst += gi * v;
                        }
                    }
                });
                into_grad!(*v, |buf: &mut [f64]| {
                    for (i, gi) in g.iter().enumerate() {
                        let row = &mv[i * d..(i + 1) * d];
                        for (dst, m) in buf.iter_mut().zip(row) {
                            *dst += gi * m;
                        }
                    }
                });
            }
            Op::MatvecT { m, v } => {
                let (mv, vv) = (self.data(*m), self.data(*v));
                let d = g.len();
                into_grad!(*m, |buf: &mut [f64]| {
                    for (i, vi) in vv.iter().enumerate() {
                        let row = &mut buf[i * d..(i + 1) * d];
                        for (dst, g) in row.iter_mut().zip(g) {
                            *dst += vi * g;
                        }
                    }
                });
                into_grad!(*v, |buf: &mut [f64]| {
                    for (i, dst) in buf.iter_mut().enumerate() {
                        let row = &mv[i * d..(i + 1) * d];
                        *dst += row.iter().zip(g).map(|(m, g)| m * g).sum::<f64>();
                    }
                });
            }
            Op::Conv2d { x, k, stride, pad } => {
                let xs = self.shape(*x);
                let ks = self.shape(*k);
                let (h, w, c_in) = (xs[0], xs[1], xs[2]);
                let (kk, c_out) = (ks[0], ks[3]);
                let w_out = (w + 2 * pad - kk) / stride + 1;
                let h_out = (h + 2 * pad - kk) / stride + 1;
                let (xv, kv) = (self.data(*x), self.data(*k));
                let needs_x = self.needs(*x);
                let needs_k = self.needs(*k);
                let mut gx = if needs_x { Some(vec![0.0; xv.len()]) } else { None };
                let mut gk = if needs_k { Some(vec![0.0; kv.len()]) } else { None };
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        for kh in 0..kk {
                            let ih = (oh * stride + kh) as isize - *pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for kw in 0..kk {
                                let iw = (ow * stride + kw) as isize - *pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let x_base = ((ih as usize * w) + iw as usize) * c_in;
                                let k_base = (kh * kk + kw) * c_in * c_out;
                                let y_base = (oh * w_out + ow) * c_out;
                                for ci in 0..c_in {
                                    let k_row = k_base + ci * c_out;
                                    if let Some(gx) = gx.as_mut() {
                                        let mut acc = 0.0;
                                        for co in 0..c_out {
                                            acc += g[y_base + co] * kv[k_row + co];
                                        }
                                        gx[x_base + ci] += acc;
                                    }
                                    if let Some(gk) = gk.as_mut() {
                                        let xval = xv[x_base + ci];
                                        for co in 0..c_out {
                                            gk[k_row + co] += g[y_base + co] * xval;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gx) = gx {
                    into_grad!(*x, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(&gx) {
                        *d += g;
                    });
                }
                if let Some(gk) = gk {
                    into_grad!(*k, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(&gk) {
                        *d += g;
                    });
                }
            }
            Op::AddChannelBias { x, b } => {
                let c = self.data(*b).len();
                into_grad!(*x, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(g) {
                    *d += g;
                });
                into_grad!(*b, |buf: &mut [f64]| for (k, g) in g.iter().enumerate() {
                    buf[k % c] += g;
                });
            }
            Op::GlobalAvgPool(a) => {
                let xs = self.shape(*a);
                let (h, w, c) = (xs[0], xs[1], xs[2]);
                let inv = 1.0 / (h * w) as f64;
                into_grad!(*a, |buf: &mut [f64]| for (k, d) in buf.iter_mut().enumerate() {
                    *d += g[k % c] * inv;
                });
            }
            Op::ScaleChannels { x, s } => {
                let (xv, sv) = (self.data(*x), self.data(*s));
                let c = sv.len();
                into_grad!(*x, |buf: &mut [f64]| for k in 0..buf.len() {
                    buf[k] += g[k] * sv[k % c];
                });
                into_grad!(*s, |buf: &mut [f64]| for k in 0..g.len() {
                    buf[k % c] += g[k] * xv[k];
                });
            }
            Op::ScaleBy { x, s } => {
                let (xv, sv) = (self.data(*x), self.data(*s)[0]);
                into_grad!(*x, |buf: &mut [f64]| for k in 0..buf.len() {
                    buf[k] += g[k] * sv;
                });
                into_grad!(*s, |buf: &mut [f64]| {
                    buf[0] += g.iter().zip(xv).map(|(g, x)| g * x).sum::<f64>();
                });
            }
            Op::StackRows(rows) => {
                let m = self.data(rows[0]).len();
                for (r, &row) in rows.iter().enumerate() {
                    let gr = &g[r * m..(r + 1) * m];
                    into_grad!(row, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(gr) {
                        *d += g;
                    });
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.data(p).len();
                    let gp = &g[off..off + len];
                    into_grad!(p, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(gp) {
                        *d += g;
                    });
                    off += len;
                }
            }
            Op::Reshape(a) => {
                into_grad!(*a, |buf: &mut [f64]| for (d, g) in buf.iter_mut().zip(g) {
                    *d += g;
                });
            }
            Op::Slice1 { x, idx } => {
                let idx = *idx;
                into_grad!(*x, |buf: &mut [f64]| buf[idx] += g[0]);
            }
        }
    }
}
