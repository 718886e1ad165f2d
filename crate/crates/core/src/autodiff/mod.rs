//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order: an operation can only consume nodes that exist. A
//! backward pass walks the record once in reverse and accumulates into the
//! `grad` buffer of every leaf created with `requires_grad`.
//!
//! ```
//! use irb_core::autodiff::Graph;
//! use irb_core::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::scalar(3.0).with_grad());
//! let y = g.square(x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[6.0]);
//! ```

pub mod kernels;
mod optim;

pub use kernels::conv_out_len;
pub use optim::{AdamConfig, AdamState};

use kernels::{col2im, gemm, im2col, ConvGeom, MatView};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    Abs,
    Square,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        geom: ConvGeom,
        // None for pointwise convolutions, whose columns are the input itself
        cols: Option<Vec<f64>>,
    },
    Binary {
        kind: BinaryOp,
        a: NodeId,
        b: NodeId,
        broadcast: Option<Box<(Vec<usize>, Vec<usize>)>>,
    },
    Unary {
        kind: UnaryOp,
        a: NodeId,
    },
    Scale {
        a: NodeId,
        factor: f64,
    },
    MaskMul {
        a: NodeId,
        mask: Vec<f64>,
    },
    SpatialSum {
        a: NodeId,
    },
    Softmax {
        a: NodeId,
    },
    BoxMean {
        a: NodeId,
        window: usize,
    },
    Sum {
        terms: Vec<NodeId>,
    },
    Mean {
        a: NodeId,
    },
    NegLogPick {
        a: NodeId,
        index: usize,
        eps: f64,
    },
    SoftmaxCrossEntropy {
        a: NodeId,
        label: usize,
    },
    BinaryEntropyMean {
        a: NodeId,
        eps: f64,
    },
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation record for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Adds an input tensor. Gradients are tracked iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        let needs_grad = tensor.requires_grad;
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Adds an input tensor that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> NodeId {
        tensor.requires_grad = false;
        tensor.grad = None;
        self.leaf(tensor)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    /// Removes the leaf tensor (with its gradient) from the graph.
    pub fn take(&mut self, id: NodeId) -> Tensor {
        std::mem::replace(&mut self.nodes[id.0].tensor, Tensor::scalar(0.0))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }
    }

    fn push(&mut self, tensor: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { tensor, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn vals(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].tensor.values()
    }

    /// 2-D cross-correlation of `[C_in,H,W]` with `[C_out,C_in,k,k]` kernels.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (is, ks, bs) = (self.shape(input), self.shape(kernels), self.shape(bias));
        if is.len() != 3 || ks.len() != 4 || ks[2] != ks[3] {
            return Err(shape_err(
                "conv2d",
                format!("input {is:?} must be [C,H,W], kernels {ks:?} must be [O,C,k,k]"),
            ));
        }
        if ks[1] != is[0] {
            return Err(shape_err(
                "conv2d",
                format!("kernel expects {} input channels, input has {}", ks[1], is[0]),
            ));
        }
        if bs != [ks[0]] {
            return Err(shape_err(
                "conv2d",
                format!("bias {bs:?} does not match {} output channels", ks[0]),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let (c_in, h, w, c_out, k) = (is[0], is[1], is[2], ks[0], ks[2]);
        let (Some(h_out), Some(w_out)) = (conv_out_len(h, k, stride, padding), conv_out_len(w, k, stride, padding))
        else {
            return Err(shape_err(
                "conv2d",
                format!("{k}x{k} kernel with padding {padding} yields empty output on {h}x{w}"),
            ));
        };
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            padding,
            h_out,
            w_out,
        };
        let plane = geom.out_plane();
        let mut out = vec![0.0; c_out * plane];
        for (o, row) in out.chunks_exact_mut(plane).enumerate() {
            row.fill(self.vals(bias)[o]);
        }
        let kview = MatView::row_major(c_out, geom.patch_len());
        let cols = if geom.is_pointwise() {
            gemm(
                self.vals(kernels),
                kview,
                self.vals(input),
                MatView::row_major(c_in, plane),
                1.0,
                &mut out,
            );
            None
        } else {
            let mut cols = vec![0.0; geom.patch_len() * plane];
            im2col(self.vals(input), &geom, &mut cols);
            gemm(
                self.vals(kernels),
                kview,
                &cols,
                MatView::row_major(geom.patch_len(), plane),
                1.0,
                &mut out,
            );
            Some(cols)
        };
        let needs = self.needs(input) || self.needs(kernels) || self.needs(bias);
        let t = Tensor::new(&[c_out, h_out, w_out], out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
                cols,
            },
            needs,
        ))
    }

    /// Elementwise binary op. Shapes must agree per dimension or be 1 on
    /// one side (singleton broadcast).
    pub fn binary(&mut self, kind: BinaryOp, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (out_shape, broadcast) = if sa == sb {
            (sa, None)
        } else {
            let out = broadcast_shape(&sa, &sb)
                .ok_or_else(|| shape_err("elementwise", format!("cannot broadcast {sa:?} with {sb:?}")))?;
            let oa = broadcast_offsets(&out, &sa);
            let ob = broadcast_offsets(&out, &sb);
            (out, Some(Box::new((oa, ob))))
        };
        let f = match kind {
            BinaryOp::Add => |x: f64, y: f64| x + y,
            BinaryOp::Sub => |x: f64, y: f64| x - y,
            BinaryOp::Mul => |x: f64, y: f64| x * y,
        };
        let (va, vb) = (self.vals(a), self.vals(b));
        let values: Vec<f64> = match &broadcast {
            None => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            Some(bc) => bc.0.iter().zip(&bc.1).map(|(&i, &j)| f(va[i], vb[j])).collect(),
        };
        let needs = self.needs(a) || self.needs(b);
        let t = Tensor::new(&out_shape, values)?;
        Ok(self.push(t, Op::Binary { kind, a, b, broadcast }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn unary(&mut self, kind: UnaryOp, a: NodeId) -> Result<NodeId> {
        let f: fn(f64) -> f64 = match kind {
            UnaryOp::Relu => |x| x.max(0.0),
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Abs => f64::abs,
            UnaryOp::Square => |x| x * x,
        };
        let t = self.value(a).map(f);
        let needs = self.needs(a);
        Ok(self.push(t, Op::Unary { kind, a }, needs))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Abs, a)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(UnaryOp::Square, a)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let t = self.value(a).map(|v| v * factor);
        let needs = self.needs(a);
        Ok(self.push(t, Op::Scale { a, factor }, needs))
    }

    /// Multiplies by a constant mask of the same shape. The mask receives
    /// no gradient.
    pub fn mask_mul(&mut self, a: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        if mask.len() != self.value(a).len() {
            return Err(shape_err(
                "mask_mul",
                format!("mask has {} entries, tensor {:?}", mask.len(), self.shape(a)),
            ));
        }
        let values = self.vals(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(self.shape(a), values)?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::MaskMul { a, mask }, needs))
    }

    /// `[N,H,W] -> [N]`, summing each channel plane.
    pub fn spatial_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 3 {
            return Err(shape_err("spatial_sum", format!("expected [N,H,W], got {s:?}")));
        }
        let (n, plane) = (s[0], s[1] * s[2]);
        let values = self.vals(a).chunks_exact(plane).map(|c| c.iter().sum()).collect();
        let t = Tensor::new(&[n], values)?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::SpatialSum { a }, needs))
    }

    /// Max-shifted softmax of a rank-1 tensor.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 1 || s[0] < 2 {
            return Err(shape_err("softmax", format!("expected [N] with N >= 2, got {s:?}")));
        }
        let t = Tensor::new(s, softmax(self.vals(a)))?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::Softmax { a }, needs))
    }

    /// Per-channel mean over a `window x window` neighbourhood clipped at
    /// the borders. Shape preserving.
    pub fn box_mean(&mut self, a: NodeId, window: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(shape_err("box_mean", format!("expected [N,H,W], got {s:?}")));
        }
        if window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("box_mean window {window} must be odd")));
        }
        let (h, w) = (s[1], s[2]);
        let r = window / 2;
        let src = self.vals(a);
        let mut out = vec![0.0; src.len()];
        for (plane_in, plane_out) in src.chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
            for i in 0..h {
                let (i0, i1) = (i.saturating_sub(r), (i + r).min(h - 1));
                for j in 0..w {
                    let (j0, j1) = (j.saturating_sub(r), (j + r).min(w - 1));
                    let mut acc = 0.0;
                    for ii in i0..=i1 {
                        acc += plane_in[ii * w + j0..=ii * w + j1].iter().sum::<f64>();
                    }
                    plane_out[i * w + j] = acc / ((i1 - i0 + 1) * (j1 - j0 + 1)) as f64;
                }
            }
        }
        let t = Tensor::new(&s, out)?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::BoxMean { a, window }, needs))
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn sum(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = terms.first() else {
            return Err(Error::InvalidArgument("sum of zero terms".into()));
        };
        let shape = self.shape(first).to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &t in terms {
            if self.shape(t) != shape.as_slice() {
                return Err(shape_err("sum", format!("{:?} vs {:?}", self.shape(t), shape)));
            }
            for (a, v) in acc.iter_mut().zip(self.vals(t)) {
                *a += v;
            }
        }
        let needs = terms.iter().any(|&t| self.needs(t));
        let t = Tensor::new(&shape, acc)?;
        Ok(self.push(t, Op::Sum { terms: terms.to_vec() }, needs))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.vals(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(m), Op::Mean { a }, needs))
    }

    /// `-ln(max(p[index], eps))` for a rank-1 tensor `p`.
    pub fn neg_log_pick(&mut self, a: NodeId, index: usize, eps: f64) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 1 || index >= s[0] {
            return Err(Error::InvalidArgument(format!(
                "index {index} out of range for shape {s:?}"
            )));
        }
        let p = self.vals(a)[index];
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::scalar(-p.max(eps).ln()),
            Op::NegLogPick { a, index, eps },
            needs,
        ))
    }

    /// `-ln softmax(z)[label]` evaluated as `(z_max - z[label]) + ln(1 + Σ_{k≠max} e^(z_k - z_max))`.
    /// The gradient is `softmax(z) - onehot(label)`.
    pub fn softmax_cross_entropy(&mut self, z: NodeId, label: usize) -> Result<NodeId> {
        let s = self.shape(z);
        if s.len() != 1 || s[0] < 2 || label >= s[0] {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for logits of shape {s:?}"
            )));
        }
        let v = self.vals(z);
        let top = (0..v.len()).fold(0, |best, k| if v[k] > v[best] { k } else { best });
        let rest: f64 = v
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != top)
            .map(|(_, &x)| (x - v[top]).exp())
            .sum();
        let value = (v[top] - v[label]) + rest.ln_1p();
        let needs = self.needs(z);
        Ok(self.push(Tensor::scalar(value), Op::SoftmaxCrossEntropy { a: z, label }, needs))
    }

    /// `-(1/N) Σ [q ln q + (1-q) ln(1-q)]` with `q = clamp(p, eps, 1-eps)`.
    pub fn binary_entropy_mean(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let v = self.vals(a);
        let n = v.len() as f64;
        let total: f64 = v
            .iter()
            .map(|&p| {
                let q = p.clamp(eps, 1.0 - eps);
                q * q.ln() + (1.0 - q) * (1.0 - q).ln()
            })
            .sum();
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(-total / n), Op::BinaryEntropyMean { a, eps }, needs))
    }

    /// Reverse pass from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let t = &mut self.nodes[id].tensor;
                match &mut t.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                    None => t.grad = Some(g),
                }
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut acc = |target: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[target.0].needs_grad {
                return;
            }
            let n = self.nodes[target.0].tensor.len();
            f(grads[target.0].get_or_insert_with(|| vec![0.0; n]));
        };
        match &node.op {
            Op::Leaf => unreachable!("leaves handled by backward"),
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
                cols,
            } => {
                let plane = geom.out_plane();
                acc(*bias, &mut |db| {
                    for (o, row) in g.chunks_exact(plane).enumerate() {
                        db[o] += row.iter().sum::<f64>();
                    }
                });
                let gview = MatView::row_major(geom.c_out, plane);
                let colview = MatView::row_major(geom.patch_len(), plane);
                let col_src = cols.as_deref().unwrap_or_else(|| self.vals(*input));
                acc(*kernels, &mut |dk| gemm(g, gview, col_src, colview.t(), 1.0, dk));
                let kview = MatView::row_major(geom.c_out, geom.patch_len());
                let kv = self.vals(*kernels);
                acc(*input, &mut |dx| {
                    if geom.is_pointwise() {
                        gemm(kv, kview.t(), g, gview, 1.0, dx);
                    } else {
                        let mut dcols = vec![0.0; geom.patch_len() * plane];
                        gemm(kv, kview.t(), g, gview, 0.0, &mut dcols);
                        col2im(&dcols, geom, dx);
                    }
                });
            }
            Op::Binary { kind, a, b, broadcast } => {
                let (va, vb) = (self.vals(*a), self.vals(*b));
                let n = g.len();
                let (ia, ib): (Box<dyn Fn(usize) -> usize>, Box<dyn Fn(usize) -> usize>) = match broadcast {
                    None => (Box::new(|i| i), Box::new(|i| i)),
                    Some(bc) => (Box::new(move |i| bc.0[i]), Box::new(move |i| bc.1[i])),
                };
                acc(*a, &mut |da| {
                    for i in 0..n {
                        da[ia(i)] += match kind {
                            BinaryOp::Add | BinaryOp::Sub => g[i],
                            BinaryOp::Mul => g[i] * vb[ib(i)],
                        };
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..n {
                        db[ib(i)] += match kind {
                            BinaryOp::Add => g[i],
                            BinaryOp::Sub => -g[i],
                            BinaryOp::Mul => g[i] * va[ia(i)],
                        };
                    }
                });
            }
            Op::Unary { kind, a } => {
                let x = self.vals(*a);
                let y = node.tensor.values();
                acc(*a, &mut |da| {
                    for i in 0..g.len() {
                        da[i] += g[i]
                            * match kind {
                                UnaryOp::Relu => f64::from(u8::from(x[i] > 0.0)),
                                UnaryOp::Sigmoid => y[i] * (1.0 - y[i]),
                                UnaryOp::Abs => {
                                    if x[i] > 0.0 {
                                        1.0
                                    } else if x[i] < 0.0 {
                                        -1.0
                                    } else {
                                        0.0
                                    }
                                }
                                UnaryOp::Square => 2.0 * x[i],
                            };
                    }
                });
            }
            Op::Scale { a, factor } => acc(*a, &mut |da| {
                da.iter_mut().zip(g).for_each(|(d, v)| *d += factor * v);
            }),
            Op::MaskMul { a, mask } => acc(*a, &mut |da| {
                for ((d, v), m) in da.iter_mut().zip(g).zip(mask) {
                    *d += v * m;
                }
            }),
            Op::SpatialSum { a } => {
                let s = self.shape(*a);
                let plane = s[1] * s[2];
                acc(*a, &mut |da| {
                    for (c, chunk) in da.chunks_exact_mut(plane).enumerate() {
                        chunk.iter_mut().for_each(|d| *d += g[c]);
                    }
                });
            }
            Op::Softmax { a } => {
                let p = node.tensor.values();
                let dot: f64 = g.iter().zip(p).map(|(x, y)| x * y).sum();
                acc(*a, &mut |da| {
                    for i in 0..p.len() {
                        da[i] += p[i] * (g[i] - dot);
                    }
                });
            }
            Op::BoxMean { a, window } => {
                let s = self.shape(*a);
                let (h, w) = (s[1], s[2]);
                let r = window / 2;
                acc(*a, &mut |da| {
                    for (gp, dp) in g.chunks_exact(h * w).zip(da.chunks_exact_mut(h * w)) {
                        for i in 0..h {
                            let (i0, i1) = (i.saturating_sub(r), (i + r).min(h - 1));
                            for j in 0..w {
                                let (j0, j1) = (j.saturating_sub(r), (j + r).min(w - 1));
                                let share = gp[i * w + j] / ((i1 - i0 + 1) * (j1 - j0 + 1)) as f64;
                                for ii in i0..=i1 {
                                    dp[ii * w + j0..=ii * w + j1].iter_mut().for_each(|d| *d += share);
                                }
                            }
                        }
                    }
                });
            }
            Op::Sum { terms } => {
                for &t in terms {
                    acc(t, &mut |dt| dt.iter_mut().zip(g).for_each(|(d, v)| *d += v));
                }
            }
            Op::Mean { a } => {
                let n = self.value(*a).len() as f64;
                acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::NegLogPick { a, index, eps } => {
                let p = self.vals(*a)[*index];
                if p > *eps {
                    acc(*a, &mut |da| da[*index] -= g[0] / p);
                }
            }
            Op::SoftmaxCrossEntropy { a, label } => {
                let p = softmax(self.vals(*a));
                acc(*a, &mut |da| {
                    for (k, (d, pk)) in da.iter_mut().zip(&p).enumerate() {
                        *d += g[0] * (pk - f64::from(u8::from(k == *label)));
                    }
                });
            }
            Op::BinaryEntropyMean { a, eps } => {
                let v = self.vals(*a);
                let n = v.len() as f64;
                acc(*a, &mut |da| {
                    for (d, &p) in da.iter_mut().zip(v) {
                        if p > *eps && p < 1.0 - eps {
                            *d += g[0] * ((1.0 - p) / p).ln() / n;
                        }
                    }
                });
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax on a slice.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// Flat source offset for every flat index of `out`, with stride 0 on
/// broadcast dimensions.
fn broadcast_offsets(out: &[usize], src: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; src.len()];
    let mut s = 1;
    for d in (0..src.len()).rev() {
        strides[d] = if src[d] == 1 { 0 } else { s };
        s *= src[d];
    }
    let total: usize = out.iter().product();
    let mut idx = vec![0usize; out.len()];
    let mut offsets = Vec::with_capacity(total);
    for _ in 0..total {
        offsets.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    offsets
}
