//! Reverse-mode tape over eagerly evaluated tensor ops.
//!
//! Every op appends a node holding its output values, its parent ids, and
//! whatever context its backward rule needs (argmax indices, normalized
//! activations, ...). `backward` seeds d(loss)/d(loss)=1 and walks the nodes
//! in reverse creation order, which is already a topological order.

use std::collections::BTreeMap;

use super::tensor::{numel, Tensor};
use super::{DiffError, Result};

pub type NodeId = usize;

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    ScalarAdd(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Matmul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    Bmm { a: NodeId, b: NodeId, g: usize, m: usize, k: usize, n: usize },
    AddBias { x: NodeId, b: NodeId, d: usize },
    Conv1d { x: NodeId, w: NodeId, b: NodeId, batch: usize, cin: usize, cout: usize, t_in: usize, k: usize },
    MaxPool1d { x: NodeId, argmax: Vec<usize> },
    AvgSegments { x: NodeId, lead: usize, t_in: usize, bounds: Vec<(usize, usize)> },
    BatchNormTrain { x: NodeId, gamma: NodeId, beta: NodeId, c: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNormEval { x: NodeId, gamma: NodeId, beta: NodeId, c: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    SoftmaxLast { x: NodeId, cols: usize },
    Sum(NodeId),
    Mean(NodeId),
    SumLast { x: NodeId, d: usize },
    MeanAxis { x: NodeId, lead: usize, n: usize, trail: usize },
    Reshape(NodeId),
    Permute { x: NodeId, perm: Vec<usize>, in_shape: Vec<usize> },
    Concat { parts: Vec<NodeId>, lead: usize, trails: Vec<usize> },
    SliceAxis { x: NodeId, lead: usize, full: usize, start: usize, len: usize, trail: usize },
    RowScale { x: NodeId, s: NodeId, cols: usize },
    MulMask { x: NodeId, mask: Vec<f64> },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

/// One forward graph. Parameter leaves are registered by name so gradients
/// can be copied back into a [`super::ParameterSet`] after `backward`.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: BTreeMap<String, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn value(&self, id: NodeId) -> f64 {
        self.nodes[id].data[0]
    }

    pub fn bindings(&self) -> &BTreeMap<String, NodeId> {
        &self.bindings
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> NodeId {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node { op, shape, data, requires_grad });
        self.nodes.len() - 1
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    /// Leaf that gradients flow into (model parameters).
    pub fn leaf(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, shape, data, true)
    }

    /// Leaf that gradients do not flow into (inputs, labels, buffers).
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, shape, data, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(vec![1], vec![v])
    }

    /// Registers a named parameter leaf. Binding the same name twice is an
    /// error; shared weights should reuse the returned id.
    pub fn leaf_param(&mut self, name: &str, t: &Tensor) -> Result<NodeId> {
        if self.bindings.contains_key(name) {
            return Err(DiffError::DuplicateParam { name: name.to_string() });
        }
        let id = if t.requires_grad {
            self.leaf(t.shape().to_vec(), t.data().to_vec())
        } else {
            self.constant(t.shape().to_vec(), t.data().to_vec())
        };
        self.bindings.insert(name.to_string(), id);
        Ok(id)
    }

    /// Copies a node's values into a fresh constant leaf: stop-gradient.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let shape = self.nodes[x].shape.clone();
        let data = self.nodes[x].data.clone();
        self.constant(shape, data)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(DiffError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.nodes[a].shape, self.nodes[b].shape),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data: Vec<f64> =
            self.nodes[a].data.iter().zip(&self.nodes[b].data).map(|(x, y)| x + y).collect();
        let shape = self.nodes[a].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), shape, data, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data: Vec<f64> =
            self.nodes[a].data.iter().zip(&self.nodes[b].data).map(|(x, y)| x - y).collect();
        let shape = self.nodes[a].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), shape, data, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data: Vec<f64> =
            self.nodes[a].data.iter().zip(&self.nodes[b].data).map(|(x, y)| x * y).collect();
        let shape = self.nodes[a].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), shape, data, rg))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("div", a, b)?;
        let data: Vec<f64> =
            self.nodes[a].data.iter().zip(&self.nodes[b].data).map(|(x, y)| x / y).collect();
        let shape = self.nodes[a].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Div(a, b), shape, data, rg))
    }

    pub fn scalar_mul(&mut self, x: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[x].data.iter().map(|v| v * c).collect();
        let shape = self.nodes[x].shape.clone();
        let rg = self.rg(x);
        self.push(Op::ScalarMul(x, c), shape, data, rg)
    }

    pub fn scalar_add(&mut self, x: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[x].data.iter().map(|v| v + c).collect();
        let shape = self.nodes[x].shape.clone();
        let rg = self.rg(x);
        self.push(Op::ScalarAdd(x), shape, data, rg)
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: impl Fn(NodeId) -> Op) -> NodeId {
        let data: Vec<f64> = self.nodes[x].data.iter().map(|&v| f(v)).collect();
        let shape = self.nodes[x].shape.clone();
        let rg = self.rg(x);
        self.push(op(x), shape, data, rg)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::exp, Op::Exp)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::ln, Op::Ln)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::sqrt, Op::Sqrt)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.max(0.0), Op::Relu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::tanh, Op::Tanh)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(&self.nodes[a].data, &self.nodes[b].data, &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Matmul { a, b, m, k, n }, vec![m, n], out, rg))
    }

    /// Batched matmul: `[g,m,k] x [g,k,n] -> [g,m,n]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(DiffError::ShapeMismatch { op: "bmm", detail: format!("{sa:?} x {sb:?}") });
        }
        let (g, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; g * m * n];
        for i in 0..g {
            matmul_into(
                &self.nodes[a].data[i * m * k..(i + 1) * m * k],
                &self.nodes[b].data[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Bmm { a, b, g, m, k, n }, vec![g, m, n], out, rg))
    }

    /// Adds a `[d]` bias over the trailing axis of `x`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let d = *self.nodes[x].shape.last().unwrap();
        if self.nodes[b].shape != [d] {
            return Err(DiffError::ShapeMismatch {
                op: "add_bias",
                detail: format!("bias {:?} vs trailing dim {d}", self.nodes[b].shape),
            });
        }
        let bias = self.nodes[b].data.clone();
        let data: Vec<f64> =
            self.nodes[x].data.iter().enumerate().map(|(i, v)| v + bias[i % d]).collect();
        let shape = self.nodes[x].shape.clone();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Op::AddBias { x, b, d }, shape, data, rg))
    }

    /// Valid 1D convolution along time: `x [B,Cin,T], w [Cout,Cin,K], b [Cout]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let sx = self.nodes[x].shape.clone();
        let sw = self.nodes[w].shape.clone();
        if sx.len() != 3 || sw.len() != 3 {
            return Err(DiffError::ShapeMismatch {
                op: "conv1d",
                detail: format!("input {sx:?}, weight {sw:?}"),
            });
        }
        let (batch, cin, t_in) = (sx[0], sx[1], sx[2]);
        let (cout, wcin, k) = (sw[0], sw[1], sw[2]);
        if wcin != cin {
            return Err(DiffError::ShapeMismatch {
                op: "conv1d",
                detail: format!("input channels {cin} vs weight channels {wcin}"),
            });
        }
        if self.nodes[b].shape != [cout] {
            return Err(DiffError::ShapeMismatch {
                op: "conv1d",
                detail: format!("bias {:?} vs out channels {cout}", self.nodes[b].shape),
            });
        }
        if t_in < k {
            return Err(DiffError::ShapeMismatch {
                op: "conv1d",
                detail: format!("time {t_in} shorter than kernel {k}"),
            });
        }
        let t_out = t_in - k + 1;
        let mut out = vec![0.0; batch * cout * t_out];
        {
            let xd = &self.nodes[x].data;
            let wd = &self.nodes[w].data;
            let bd = &self.nodes[b].data;
            for bi in 0..batch {
                for co in 0..cout {
                    let o0 = (bi * cout + co) * t_out;
                    out[o0..o0 + t_out].fill(bd[co]);
                    for ci in 0..cin {
                        let x0 = (bi * cin + ci) * t_in;
                        let w0 = (co * cin + ci) * k;
                        for kk in 0..k {
                            let wv = wd[w0 + kk];
                            for t in 0..t_out {
                                out[o0 + t] += wv * xd[x0 + t + kk];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Op::Conv1d { x, w, b, batch, cin, cout, t_in, k },
            vec![batch, cout, t_out],
            out,
            rg,
        ))
    }

    /// Max pooling along the trailing (time) axis of `[.., T]`.
    pub fn maxpool1d(&mut self, x: NodeId, width: usize, stride: usize) -> Result<NodeId> {
        let sx = self.nodes[x].shape.clone();
        let t_in = *sx.last().unwrap();
        if width == 0 || stride == 0 {
            return Err(DiffError::NotPositive { what: "pool width/stride", got: 0.0 });
        }
        if t_in < width {
            return Err(DiffError::ShapeMismatch {
                op: "maxpool1d",
                detail: format!("time {t_in} shorter than pool width {width}"),
            });
        }
        let t_out = (t_in - width) / stride + 1;
        let lead = numel(&sx) / t_in;
        let mut out = vec![0.0; lead * t_out];
        let mut argmax = vec![0usize; lead * t_out];
        let xd = &self.nodes[x].data;
        for l in 0..lead {
            for t in 0..t_out {
                let base = l * t_in + t * stride;
                let (mut best_i, mut best) = (base, xd[base]);
                for j in 1..width {
                    let v = xd[base + j];
                    if v > best {
                        best = v;
                        best_i = base + j;
                    }
                }
                out[l * t_out + t] = best;
                argmax[l * t_out + t] = best_i;
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = t_out;
        let rg = self.rg(x);
        Ok(self.push(Op::MaxPool1d { x, argmax }, shape, out, rg))
    }

    /// Adaptive average pooling of the trailing axis into `segs` contiguous
    /// segments (segment s covers `[s*T/S, (s+1)*T/S)` like torch's adaptive
    /// average pool).
    pub fn avg_segments(&mut self, x: NodeId, segs: usize) -> Result<NodeId> {
        let sx = self.nodes[x].shape.clone();
        let t_in = *sx.last().unwrap();
        if segs == 0 || t_in < segs {
            return Err(DiffError::ShapeMismatch {
                op: "avg_segments",
                detail: format!("time {t_in} into {segs} segments"),
            });
        }
        let bounds: Vec<(usize, usize)> =
            (0..segs).map(|s| (s * t_in / segs, (s + 1) * t_in / segs)).collect();
        let lead = numel(&sx) / t_in;
        let mut out = vec![0.0; lead * segs];
        let xd = &self.nodes[x].data;
        for l in 0..lead {
            for (s, &(a, b)) in bounds.iter().enumerate() {
                let sum: f64 = xd[l * t_in + a..l * t_in + b].iter().sum();
                out[l * segs + s] = sum / (b - a) as f64;
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = segs;
        let rg = self.rg(x);
        Ok(self.push(Op::AvgSegments { x, lead, t_in, bounds }, shape, out, rg))
    }

    /// Batch normalization over `[B,C,T]` with per-channel statistics taken
    /// from the batch (training) and an affine scale/shift.
    pub fn batchnorm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let sx = self.nodes[x].shape.clone();
        if sx.len() != 3 {
            return Err(DiffError::ShapeMismatch {
                op: "batchnorm",
                detail: format!("expected [B,C,T], got {sx:?}"),
            });
        }
        let (batch, c, t) = (sx[0], sx[1], sx[2]);
        self.check_bn_params("batchnorm", gamma, beta, c)?;
        let (mean, var) = channel_stats(&self.nodes[x].data, batch, c, t);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xd = &self.nodes[x].data;
        let mut xhat = vec![0.0; xd.len()];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * t;
                for i in 0..t {
                    xhat[base + i] = (xd[base + i] - mean[ch]) * inv_std[ch];
                }
            }
        }
        let gd = &self.nodes[gamma].data;
        let bd = &self.nodes[beta].data;
        let mut out = vec![0.0; xd.len()];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * t;
                for i in 0..t {
                    out[base + i] = gd[ch] * xhat[base + i] + bd[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(Op::BatchNormTrain { x, gamma, beta, c, xhat, inv_std }, sx, out, rg))
    }

    /// Batch normalization with fixed (running) statistics: inference mode.
    pub fn batchnorm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        let sx = self.nodes[x].shape.clone();
        if sx.len() != 3 {
            return Err(DiffError::ShapeMismatch {
                op: "batchnorm",
                detail: format!("expected [B,C,T], got {sx:?}"),
            });
        }
        let (batch, c, t) = (sx[0], sx[1], sx[2]);
        self.check_bn_params("batchnorm", gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(DiffError::ShapeMismatch {
                op: "batchnorm",
                detail: format!("running stats length vs {c} channels"),
            });
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xd = &self.nodes[x].data;
        let mut xhat = vec![0.0; xd.len()];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * t;
                for i in 0..t {
                    xhat[base + i] = (xd[base + i] - running_mean[ch]) * inv_std[ch];
                }
            }
        }
        let gd = &self.nodes[gamma].data;
        let bd = &self.nodes[beta].data;
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / t) % c;
                gd[ch] * v + bd[ch]
            })
            .collect();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(Op::BatchNormEval { x, gamma, beta, c, xhat, inv_std }, sx, out, rg))
    }

    fn check_bn_params(&self, op: &'static str, gamma: NodeId, beta: NodeId, c: usize) -> Result<()> {
        for p in [gamma, beta] {
            if self.nodes[p].shape != [c] {
                return Err(DiffError::ShapeMismatch {
                    op,
                    detail: format!("scale/shift {:?} vs {c} channels", self.nodes[p].shape),
                });
            }
        }
        Ok(())
    }

    /// Softmax over the trailing axis.
    pub fn softmax_last(&mut self, x: NodeId) -> NodeId {
        let shape = self.nodes[x].shape.clone();
        let cols = *shape.last().unwrap();
        let rows = numel(&shape) / cols;
        let xd = &self.nodes[x].data;
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for i in 0..cols {
                let e = (row[i] - m).exp();
                out[r * cols + i] = e;
                denom += e;
            }
            for i in 0..cols {
                out[r * cols + i] /= denom;
            }
        }
        let rg = self.rg(x);
        self.push(Op::SoftmaxLast { x, cols }, shape, out, rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x].data.iter().sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), vec![1], vec![s], rg)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x].data.len() as f64;
        let s: f64 = self.nodes[x].data.iter().sum();
        let rg = self.rg(x);
        self.push(Op::Mean(x), vec![1], vec![s / n], rg)
    }

    /// Sums the trailing axis away: `[.., d] -> [..]`.
    pub fn sum_last(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.nodes[x].shape.clone();
        if shape.len() < 2 {
            return Err(DiffError::ShapeMismatch {
                op: "sum_last",
                detail: format!("need rank >= 2, got {shape:?}"),
            });
        }
        let d = *shape.last().unwrap();
        let lead = numel(&shape) / d;
        let xd = &self.nodes[x].data;
        let out: Vec<f64> = (0..lead).map(|l| xd[l * d..(l + 1) * d].iter().sum()).collect();
        let out_shape = shape[..shape.len() - 1].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Op::SumLast { x, d }, out_shape, out, rg))
    }

    /// Mean over one interior axis: `[lead.., n, trail..] -> [lead.., trail..]`.
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.nodes[x].shape.clone();
        if axis >= shape.len() {
            return Err(DiffError::ShapeMismatch {
                op: "mean_axis",
                detail: format!("axis {axis} of {shape:?}"),
            });
        }
        let lead: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let trail: usize = shape[axis + 1..].iter().product();
        let xd = &self.nodes[x].data;
        let mut out = vec![0.0; lead * trail];
        for l in 0..lead {
            for j in 0..n {
                let base = (l * n + j) * trail;
                for t in 0..trail {
                    out[l * trail + t] += xd[base + t];
                }
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(Op::MeanAxis { x, lead, n, trail }, out_shape, out, rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if numel(&shape) != self.nodes[x].data.len() {
            return Err(DiffError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.nodes[x].shape),
            });
        }
        let data = self.nodes[x].data.clone();
        let rg = self.rg(x);
        Ok(self.push(Op::Reshape(x), shape, data, rg))
    }

    /// Axis permutation; output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let in_shape = self.nodes[x].shape.clone();
        let rank = in_shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(DiffError::ShapeMismatch {
                op: "permute",
                detail: format!("perm {perm:?} on rank {rank}"),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let map = permute_map(&in_shape, perm);
        let xd = &self.nodes[x].data;
        let out: Vec<f64> = map.iter().map(|&src| xd[src]).collect();
        let rg = self.rg(x);
        Ok(self.push(Op::Permute { x, perm: perm.to_vec(), in_shape }, out_shape, out, rg))
    }

    /// Concatenation along `axis`; all other dims must match.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(DiffError::ShapeMismatch { op: "concat", detail: "no inputs".into() });
        }
        let first = self.nodes[parts[0]].shape.clone();
        let rank = first.len();
        if axis >= rank {
            return Err(DiffError::ShapeMismatch {
                op: "concat",
                detail: format!("axis {axis} of rank {rank}"),
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = &self.nodes[p].shape;
            if s.len() != rank
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(DiffError::ShapeMismatch {
                    op: "concat",
                    detail: format!("{s:?} vs {first:?} along axis {axis}"),
                });
            }
            axis_total += s[axis];
        }
        let lead: usize = first[..axis].iter().product();
        let trail: usize = first[axis + 1..].iter().product();
        let trails: Vec<usize> =
            parts.iter().map(|&p| self.nodes[p].shape[axis] * trail).collect();
        let row_out = axis_total * trail;
        let mut out = vec![0.0; lead * row_out];
        for l in 0..lead {
            let mut off = 0;
            for (pi, &p) in parts.iter().enumerate() {
                let chunk = trails[pi];
                let src = &self.nodes[p].data[l * chunk..(l + 1) * chunk];
                out[l * row_out + off..l * row_out + off + chunk].copy_from_slice(src);
                off += chunk;
            }
        }
        let mut shape = first;
        shape[axis] = axis_total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::Concat { parts: parts.to_vec(), lead, trails }, shape, out, rg))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice_axis(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.nodes[x].shape.clone();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(DiffError::ShapeMismatch {
                op: "slice_axis",
                detail: format!("[{start}, {start}+{len}) along axis {axis} of {shape:?}"),
            });
        }
        let lead: usize = shape[..axis].iter().product();
        let full = shape[axis];
        let trail: usize = shape[axis + 1..].iter().product();
        let xd = &self.nodes[x].data;
        let mut out = vec![0.0; lead * len * trail];
        for l in 0..lead {
            let src = (l * full + start) * trail;
            out[l * len * trail..(l + 1) * len * trail]
                .copy_from_slice(&xd[src..src + len * trail]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Op::SliceAxis { x, lead, full, start, len, trail }, out_shape, out, rg))
    }

    /// Scales row `r` of `x [rows, cols]` by `s[r]`.
    pub fn row_scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sx = self.nodes[x].shape.clone();
        if sx.len() != 2 || self.nodes[s].shape != [sx[0]] {
            return Err(DiffError::ShapeMismatch {
                op: "row_scale",
                detail: format!("{sx:?} scaled by {:?}", self.nodes[s].shape),
            });
        }
        let (rows, cols) = (sx[0], sx[1]);
        let sd = self.nodes[s].data.clone();
        let data: Vec<f64> = self.nodes[x]
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v * sd[i / cols])
            .collect();
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(Op::RowScale { x, s, cols }, vec![rows, cols], data, rg))
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mul_mask(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        if mask.len() != self.nodes[x].data.len() {
            return Err(DiffError::ShapeMismatch {
                op: "mul_mask",
                detail: format!("mask {} vs {} values", mask.len(), self.nodes[x].data.len()),
            });
        }
        let data: Vec<f64> =
            self.nodes[x].data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.nodes[x].shape.clone();
        let rg = self.rg(x);
        Ok(self.push(Op::MulMask { x, mask }, shape, data, rg))
    }

    /// Reverse pass from a scalar loss. Returns one gradient buffer per node
    /// (None where no gradient flowed). Gradients accumulate additively across
    /// all uses of a node.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Vec<f64>>>> {
        if self.nodes[loss].shape != [1] {
            return Err(DiffError::NotScalar {
                op: "backward",
                shape: self.nodes[loss].shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    fn grad_buf<'a>(
        &self,
        grads: &'a mut Vec<Option<Vec<f64>>>,
        id: NodeId,
    ) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[id].requires_grad {
            return None;
        }
        Some(grads[id].get_or_insert_with(|| vec![0.0; self.nodes[id].data.len()]))
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate(&self, id: NodeId, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(da) = self.grad_buf(grads, *a) {
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                if let Some(db) = self.grad_buf(grads, *b) {
                    for (d, gi) in db.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.grad_buf(grads, *a) {
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                if let Some(db) = self.grad_buf(grads, *b) {
                    for (d, gi) in db.iter_mut().zip(g) {
                        *d -= gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a].requires_grad {
                    let bd = self.nodes[b].data.clone();
                    let da = self.grad_buf(grads, a).unwrap();
                    for i in 0..g.len() {
                        da[i] += g[i] * bd[i];
                    }
                }
                if self.nodes[b].requires_grad {
                    let ad = self.nodes[a].data.clone();
                    let db = self.grad_buf(grads, b).unwrap();
                    for i in 0..g.len() {
                        db[i] += g[i] * ad[i];
                    }
                }
            }
            Op::Div(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a].requires_grad {
                    let bd = self.nodes[b].data.clone();
                    let da = self.grad_buf(grads, a).unwrap();
                    for i in 0..g.len() {
                        da[i] += g[i] / bd[i];
                    }
                }
                if self.nodes[b].requires_grad {
                    let ad = self.nodes[a].data.clone();
                    let bd = self.nodes[b].data.clone();
                    let db = self.grad_buf(grads, b).unwrap();
                    for i in 0..g.len() {
                        db[i] -= g[i] * ad[i] / (bd[i] * bd[i]);
                    }
                }
            }
            Op::ScalarMul(x, c) => {
                let c = *c;
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += gi * c;
                    }
                }
            }
            Op::ScalarAdd(x) => {
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            Op::Exp(x) => {
                let y = self.nodes[id].data.clone();
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        dx[i] += g[i] * y[i];
                    }
                }
            }
            Op::Ln(x) => {
                let x = *x;
                if self.nodes[x].requires_grad {
                    let xd = self.nodes[x].data.clone();
                    let dx = self.grad_buf(grads, x).unwrap();
                    for i in 0..g.len() {
                        dx[i] += g[i] / xd[i];
                    }
                }
            }
            Op::Sqrt(x) => {
                let y = self.nodes[id].data.clone();
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        dx[i] += g[i] * 0.5 / y[i];
                    }
                }
            }
            Op::Relu(x) => {
                let x = *x;
                if self.nodes[x].requires_grad {
                    let xd = self.nodes[x].data.clone();
                    let dx = self.grad_buf(grads, x).unwrap();
                    for i in 0..g.len() {
                        if xd[i] > 0.0 {
                            dx[i] += g[i];
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[id].data.clone();
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        dx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Tanh(x) => {
                let y = self.nodes[id].data.clone();
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        dx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Matmul { a, b, m, k, n } => {
                let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                if self.nodes[a].requires_grad {
                    let bd = self.nodes[b].data.clone();
                    let da = self.grad_buf(grads, a).unwrap();
                    // dA += g . B^T
                    for i in 0..m {
                        for j in 0..k {
                            let mut acc = 0.0;
                            for c in 0..n {
                                acc += g[i * n + c] * bd[j * n + c];
                            }
                            da[i * k + j] += acc;
                        }
                    }
                }
                if self.nodes[b].requires_grad {
                    let ad = self.nodes[a].data.clone();
                    let db = self.grad_buf(grads, b).unwrap();
                    // dB += A^T . g
                    for j in 0..k {
                        for c in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += ad[i * k + j] * g[i * n + c];
                            }
                            db[j * n + c] += acc;
                        }
                    }
                }
            }
            Op::Bmm { a, b, g: gb, m, k, n } => {
                let (a, b, gb, m, k, n) = (*a, *b, *gb, *m, *k, *n);
                if self.nodes[a].requires_grad {
                    let bd = self.nodes[b].data.clone();
                    let da = self.grad_buf(grads, a).unwrap();
                    for q in 0..gb {
                        let (g0, b0, a0) = (q * m * n, q * k * n, q * m * k);
                        for i in 0..m {
                            for j in 0..k {
                                let mut acc = 0.0;
                                for c in 0..n {
                                    acc += g[g0 + i * n + c] * bd[b0 + j * n + c];
                                }
                                da[a0 + i * k + j] += acc;
                            }
                        }
                    }
                }
                if self.nodes[b].requires_grad {
                    let ad = self.nodes[a].data.clone();
                    let db = self.grad_buf(grads, b).unwrap();
                    for q in 0..gb {
                        let (g0, b0, a0) = (q * m * n, q * k * n, q * m * k);
                        for j in 0..k {
                            for c in 0..n {
                                let mut acc = 0.0;
                                for i in 0..m {
                                    acc += ad[a0 + i * k + j] * g[g0 + i * n + c];
                                }
                                db[b0 + j * n + c] += acc;
                            }
                        }
                    }
                }
            }
            Op::AddBias { x, b, d } => {
                let d = *d;
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for (dv, gi) in dx.iter_mut().zip(g) {
                        *dv += gi;
                    }
                }
                if let Some(db) = self.grad_buf(grads, *b) {
                    for (i, gi) in g.iter().enumerate() {
                        db[i % d] += gi;
                    }
                }
            }
            Op::Conv1d { x, w, b, batch, cin, cout, t_in, k } => {
                let (x, w, b) = (*x, *w, *b);
                let (batch, cin, cout, t_in, k) = (*batch, *cin, *cout, *t_in, *k);
                let t_out = t_in - k + 1;
                if self.nodes[x].requires_grad {
                    let wd = self.nodes[w].data.clone();
                    let dx = self.grad_buf(grads, x).unwrap();
                    for bi in 0..batch {
                        for co in 0..cout {
                            let g0 = (bi * cout + co) * t_out;
                            for ci in 0..cin {
                                let x0 = (bi * cin + ci) * t_in;
                                let w0 = (co * cin + ci) * k;
                                for kk in 0..k {
                                    let wv = wd[w0 + kk];
                                    for t in 0..t_out {
                                        dx[x0 + t + kk] += g[g0 + t] * wv;
                                    }
                                }
                            }
                        }
                    }
                }
                if self.nodes[w].requires_grad {
                    let xd = self.nodes[x].data.clone();
                    let dw = self.grad_buf(grads, w).unwrap();
                    for bi in 0..batch {
                        for co in 0..cout {
                            let g0 = (bi * cout + co) * t_out;
                            for ci in 0..cin {
                                let x0 = (bi * cin + ci) * t_in;
                                let w0 = (co * cin + ci) * k;
                                for kk in 0..k {
                                    let mut acc = 0.0;
                                    for t in 0..t_out {
                                        acc += g[g0 + t] * xd[x0 + t + kk];
                                    }
                                    dw[w0 + kk] += acc;
                                }
                            }
                        }
                    }
                }
                if let Some(db) = self.grad_buf(grads, b) {
                    for bi in 0..batch {
                        for co in 0..cout {
                            let g0 = (bi * cout + co) * t_out;
                            db[co] += g[g0..g0 + t_out].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::MaxPool1d { x, argmax } => {
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for (i, &src) in argmax.iter().enumerate() {
                        dx[src] += g[i];
                    }
                }
            }
            Op::AvgSegments { x, lead, t_in, bounds } => {
                let (lead, t_in) = (*lead, *t_in);
                let segs = bounds.len();
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for l in 0..lead {
                        for (s, &(a, b)) in bounds.iter().enumerate() {
                            let share = g[l * segs + s] / (b - a) as f64;
                            for i in a..b {
                                dx[l * t_in + i] += share;
                            }
                        }
                    }
                }
            }
            Op::BatchNormTrain { x, gamma, beta, c, xhat, inv_std } => {
                let (x, gamma, beta, c) = (*x, *gamma, *beta, *c);
                let n = self.nodes[id].data.len();
                let t = n / (self.nodes[id].shape[0] * c);
                let batch = self.nodes[id].shape[0];
                let per_c = (batch * t) as f64;
                let gd = self.nodes[gamma].data.clone();
                // Per-channel reductions of g and g*xhat.
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for b in 0..batch {
                    for ch in 0..c {
                        let base = (b * c + ch) * t;
                        for i in 0..t {
                            sum_g[ch] += g[base + i];
                            sum_gx[ch] += g[base + i] * xhat[base + i];
                        }
                    }
                }
                if self.nodes[x].requires_grad {
                    let dx = self.grad_buf(grads, x).unwrap();
                    for b in 0..batch {
                        for ch in 0..c {
                            let base = (b * c + ch) * t;
                            let m_g = sum_g[ch] / per_c;
                            let m_gx = sum_gx[ch] / per_c;
                            let scale = gd[ch] * inv_std[ch];
                            for i in 0..t {
                                dx[base + i] +=
                                    scale * (g[base + i] - m_g - xhat[base + i] * m_gx);
                            }
                        }
                    }
                }
                if let Some(dg) = self.grad_buf(grads, gamma) {
                    for ch in 0..c {
                        dg[ch] += sum_gx[ch];
                    }
                }
                if let Some(db) = self.grad_buf(grads, beta) {
                    for ch in 0..c {
                        db[ch] += sum_g[ch];
                    }
                }
            }
            Op::BatchNormEval { x, gamma, beta, c, xhat, inv_std } => {
                let (x, gamma, beta, c) = (*x, *gamma, *beta, *c);
                let batch = self.nodes[id].shape[0];
                let t = self.nodes[id].data.len() / (batch * c);
                let gd = self.nodes[gamma].data.clone();
                if self.nodes[x].requires_grad {
                    let dx = self.grad_buf(grads, x).unwrap();
                    for b in 0..batch {
                        for ch in 0..c {
                            let base = (b * c + ch) * t;
                            let scale = gd[ch] * inv_std[ch];
                            for i in 0..t {
                                dx[base + i] += g[base + i] * scale;
                            }
                        }
                    }
                }
                if let Some(dg) = self.grad_buf(grads, gamma) {
                    for b in 0..batch {
                        for ch in 0..c {
                            let base = (b * c + ch) * t;
                            for i in 0..t {
                                dg[ch] += g[base + i] * xhat[base + i];
                            }
                        }
                    }
                }
                if let Some(db) = self.grad_buf(grads, beta) {
                    for b in 0..batch {
                        for ch in 0..c {
                            let base = (b * c + ch) * t;
                            for i in 0..t {
                                db[ch] += g[base + i];
                            }
                        }
                    }
                }
            }
            Op::SoftmaxLast { x, cols } => {
                let cols = *cols;
                let y = self.nodes[id].data.clone();
                if let Some(dx) = self.grad_buf(grads, *x) {
                    let rows = y.len() / cols;
                    for r in 0..rows {
                        let base = r * cols;
                        let dot: f64 =
                            (0..cols).map(|i| g[base + i] * y[base + i]).sum();
                        for i in 0..cols {
                            dx[base + i] += y[base + i] * (g[base + i] - dot);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                let x = *x;
                let n = self.nodes[x].data.len() as f64;
                if let Some(dx) = self.grad_buf(grads, x) {
                    let share = g[0] / n;
                    for d in dx.iter_mut() {
                        *d += share;
                    }
                }
            }
            Op::SumLast { x, d } => {
                let d = *d;
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for (i, dv) in dx.iter_mut().enumerate() {
                        *dv += g[i / d];
                    }
                }
            }
            Op::MeanAxis { x, lead, n, trail } => {
                let (lead, n, trail) = (*lead, *n, *trail);
                if let Some(dx) = self.grad_buf(grads, *x) {
                    let share = 1.0 / n as f64;
                    for l in 0..lead {
                        for j in 0..n {
                            let base = (l * n + j) * trail;
                            for t in 0..trail {
                                dx[base + t] += g[l * trail + t] * share;
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            Op::Permute { x, perm, in_shape } => {
                if self.nodes[*x].requires_grad {
                    let map = permute_map(in_shape, perm);
                    let dx = self.grad_buf(grads, *x).unwrap();
                    for (dst, &src) in map.iter().enumerate() {
                        dx[src] += g[dst];
                    }
                }
            }
            Op::Concat { parts, lead, trails } => {
                let row_out: usize = trails.iter().sum();
                for (pi, &p) in parts.iter().enumerate() {
                    let off: usize = trails[..pi].iter().sum();
                    let chunk = trails[pi];
                    if self.nodes[p].requires_grad {
                        let dp = self.grad_buf(grads, p).unwrap();
                        for l in 0..*lead {
                            for i in 0..chunk {
                                dp[l * chunk + i] += g[l * row_out + off + i];
                            }
                        }
                    }
                }
            }
            Op::SliceAxis { x, lead, full, start, len, trail } => {
                let (lead, full, start, len, trail) = (*lead, *full, *start, *len, *trail);
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for l in 0..lead {
                        let dst = (l * full + start) * trail;
                        let src = l * len * trail;
                        for i in 0..len * trail {
                            dx[dst + i] += g[src + i];
                        }
                    }
                }
            }
            Op::RowScale { x, s, cols } => {
                let (x, s, cols) = (*x, *s, *cols);
                if self.nodes[x].requires_grad {
                    let sd = self.nodes[s].data.clone();
                    let dx = self.grad_buf(grads, x).unwrap();
                    for i in 0..g.len() {
                        dx[i] += g[i] * sd[i / cols];
                    }
                }
                if self.nodes[s].requires_grad {
                    let xd = self.nodes[x].data.clone();
                    let ds = self.grad_buf(grads, s).unwrap();
                    for i in 0..g.len() {
                        ds[i / cols] += g[i] * xd[i];
                    }
                }
            }
            Op::MulMask { x, mask } => {
                if self.nodes[*x].requires_grad {
                    let dx = self.grad_buf(grads, *x).unwrap();
                    for i in 0..g.len() {
                        dx[i] += g[i] * mask[i];
                    }
                }
            }
        }
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for j in 0..k {
            let av = a[i * k + j];
            if av == 0.0 {
                continue;
            }
            let brow = &b[j * n..(j + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for c in 0..n {
                orow[c] += av * brow[c];
            }
        }
    }
}

/// For each output flat index, the source flat index in the unpermuted input.
fn permute_map(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let n = numel(in_shape);
    let mut map = vec![0usize; n];
    let mut idx = vec![0usize; rank];
    for (dst, slot) in map.iter_mut().enumerate() {
        let mut rem = dst;
        for i in (0..rank).rev() {
            idx[i] = rem % out_shape[i];
            rem /= out_shape[i];
        }
        let mut src = 0;
        for i in 0..rank {
            src += idx[i] * in_strides[perm[i]];
        }
        *slot = src;
    }
    map
}

fn channel_stats(x: &[f64], batch: usize, c: usize, t: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    let n = (batch * t) as f64;
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * t;
            for i in 0..t {
                mean[ch] += x[base + i];
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * t;
            for i in 0..t {
                let d = x[base + i] - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= n; // biased, as used for normalization
    }
    (mean, var)
}

/// Batch mean and biased variance per channel of a `[B,C,T]` buffer.
pub fn bn_batch_stats(x: &[f64], batch: usize, c: usize, t: usize) -> (Vec<f64>, Vec<f64>) {
    channel_stats(x, batch, c, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of(tape: &Tape, grads: &[Option<Vec<f64>>], id: NodeId) -> Vec<f64> {
        let _ = tape;
        grads[id].clone().expect("gradient present")
    }

    #[test]
    fn sum_grad_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]);
        let s = t.sum(x);
        let grads = t.backward(s).unwrap();
        assert_eq!(grad_of(&t, &grads, x), vec![1.0; 6]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(vec![2], vec![1.0, 2.0]);
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn least_squares_gradient_closed_form() {
        // loss = mean((W.x - y)^2); dL/dW = 2 (W.x - y) x^T / n
        let mut t = Tape::new();
        let w = t.leaf(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5]);
        let x = t.constant(vec![3, 1], vec![1.0, 2.0, -1.0]);
        let y = t.constant(vec![2, 1], vec![0.2, -0.3]);
        let pred = t.matmul(w, x).unwrap();
        let r = t.sub(pred, y).unwrap();
        let sq = t.mul(r, r).unwrap();
        let loss = t.mean(sq);
        let grads = t.backward(loss).unwrap();
        let dw = grad_of(&t, &grads, w);
        let pred_v = [0.5 - 2.0 - 2.0, 1.5 + 0.5];
        let resid = [pred_v[0] - 0.2, pred_v[1] + 0.3];
        let xv = [1.0, 2.0, -1.0];
        for i in 0..2 {
            for j in 0..3 {
                let expect = 2.0 * resid[i] * xv[j] / 2.0;
                assert!((dw[i * 3 + j] - expect).abs() < 1e-12, "dw[{i}][{j}]");
            }
        }
    }

    #[test]
    fn gradient_accumulates_across_uses() {
        // loss = sum(x*x) uses x twice; d/dx = 2x
        let mut t = Tape::new();
        let x = t.leaf(vec![3], vec![1.0, -2.0, 0.5]);
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq);
        let grads = t.backward(loss).unwrap();
        assert_eq!(grad_of(&t, &grads, x), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.leaf(vec![4, 5], (0..20).map(|i| (i as f64 * 0.7).sin() * 3.0).collect());
        let y = t.softmax_last(x);
        for r in 0..4 {
            let s: f64 = t.data(y)[r * 5..(r + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn permute_roundtrip() {
        let mut t = Tape::new();
        let x = t.leaf(vec![2, 3, 4], (0..24).map(|i| i as f64).collect());
        let p = t.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(t.shape(p), &[4, 2, 3]);
        let back = t.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(t.data(back), t.data(x));
    }

    #[test]
    fn concat_slice_inverse() {
        let mut t = Tape::new();
        let a = t.leaf(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = t.leaf(vec![2, 3], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.shape(c), &[2, 5]);
        assert_eq!(t.data(c), &[1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]);
        let a2 = t.slice_axis(c, 1, 0, 2).unwrap();
        assert_eq!(t.data(a2), t.data(a));
        let b2 = t.slice_axis(c, 1, 2, 3).unwrap();
        assert_eq!(t.data(b2), t.data(b));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vec![2], vec![3.0, -1.0]);
        let d = t.detach(x);
        let y = t.mul(x, d).unwrap();
        let loss = t.sum(y);
        let grads = t.backward(loss).unwrap();
        // d treated as constant: dL/dx = detach(x) values, not 2x.
        assert_eq!(grad_of(&t, &grads, x), vec![3.0, -1.0]);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1, 1, 4], vec![1.0, 5.0, 2.0, 3.0]);
        let p = t.maxpool1d(x, 2, 2).unwrap();
        assert_eq!(t.data(p), &[5.0, 3.0]);
        let s = t.sum(p);
        let grads = t.backward(s).unwrap();
        assert_eq!(grad_of(&t, &grads, x), vec![0.0, 1.0, 0.0, 1.0]);
    }
}
