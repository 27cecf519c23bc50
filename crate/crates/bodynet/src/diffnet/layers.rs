//! Neural layers over the tape: convolution block, batch norm, GRU,
//! multi-head attention, linear. Layers hold only names and hyperparameters;
//! the tensors live in a [`ParameterSet`] so the optimizer and checkpoints
//! see one flat namespace.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::ParameterSet;
use super::tape::{bn_batch_stats, NodeId, Tape};
use super::tensor::Tensor;
use super::{DiffError, Result};

pub const BN_EPS: f64 = 1e-5;

/// One forward/backward pass: a tape plus the parameter set it binds from.
/// `training` switches batch-norm statistics and dropout masks.
pub struct Graph<'a> {
    pub tape: Tape,
    params: &'a mut ParameterSet,
    pub rng: ChaCha8Rng,
    pub training: bool,
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a mut ParameterSet, rng: ChaCha8Rng, training: bool) -> Self {
        Graph { tape: Tape::new(), params, rng, training }
    }

    /// Binds a named parameter into the tape, reusing the node on repeat
    /// binds so shared weights accumulate gradients from every use.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.tape.bindings().get(name) {
            return Ok(id);
        }
        let t = self.params.get(name)?;
        self.tape.leaf_param(name, t)
    }

    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        self.tape.constant(shape, data)
    }

    pub fn params(&self) -> &ParameterSet {
        self.params
    }

    pub fn buffer_data(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.params.get(name)?.data().to_vec())
    }

    pub fn update_buffer(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let t = self.params.get_mut(name)?;
        if t.len() != data.len() {
            return Err(DiffError::ShapeMismatch {
                op: "update_buffer",
                detail: format!("{name}: {} vs {} values", t.len(), data.len()),
            });
        }
        t.data_mut().copy_from_slice(&data);
        Ok(())
    }

    /// Runs backward from `loss` and writes gradients into the parameter set.
    /// Bound parameters the loss never reached get zero gradients, so every
    /// learnable tensor touched by the forward pass has `grad` populated.
    pub fn backward_write(&mut self, loss: NodeId) -> Result<()> {
        let grads = self.tape.backward(loss)?;
        for (name, &id) in self.tape.bindings() {
            let t = self.params.get_mut(name)?;
            if !t.requires_grad {
                continue;
            }
            let g = match &grads[id] {
                Some(g) => g.clone(),
                None => vec![0.0; t.len()],
            };
            t.set_grad(g)?;
        }
        Ok(())
    }
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("init shape is valid")
}

/// Valid (no padding) 1D convolution along time.
pub struct Conv1d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub bias: bool,
}

impl Conv1d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize) -> Self {
        Conv1d { name: name.into(), cin, cout, kernel, bias: true }
    }

    /// A bias is dead weight when batch normalization follows the
    /// convolution: the mean subtraction cancels it exactly.
    pub fn new_without_bias(name: impl Into<String>, cin: usize, cout: usize, kernel: usize) -> Self {
        Conv1d { name: name.into(), cin, cout, kernel, bias: false }
    }

    pub fn init(&self, params: &mut ParameterSet, rng: &mut ChaCha8Rng) -> Result<()> {
        let bound = 1.0 / ((self.cin * self.kernel) as f64).sqrt();
        params.insert(
            &format!("{}.weight", self.name),
            uniform_tensor(rng, vec![self.cout, self.cin, self.kernel], bound),
        )?;
        if self.bias {
            params.insert(&format!("{}.bias", self.name), Tensor::zeros(vec![self.cout]))?;
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let w = g.param(&format!("{}.weight", self.name))?;
        let b = if self.bias {
            g.param(&format!("{}.bias", self.name))?
        } else {
            g.tape.constant(vec![self.cout], vec![0.0; self.cout])
        };
        g.tape.conv1d(x, w, b)
    }
}

/// Batch normalization over the channel axis of `[B,C,T]` with running
/// statistics for inference.
pub struct BatchNorm1d {
    pub name: String,
    pub channels: usize,
    pub momentum: f64,
}

impl BatchNorm1d {
    pub fn new(name: impl Into<String>, channels: usize, momentum: f64) -> Self {
        BatchNorm1d { name: name.into(), channels, momentum }
    }

    pub fn init(&self, params: &mut ParameterSet) -> Result<()> {
        let c = self.channels;
        params.insert(&format!("{}.gamma", self.name), Tensor::filled(vec![c], 1.0))?;
        params.insert(&format!("{}.beta", self.name), Tensor::zeros(vec![c]))?;
        params.insert(&format!("{}.running_mean", self.name), Tensor::zeros(vec![c]).buffer())?;
        params
            .insert(&format!("{}.running_var", self.name), Tensor::filled(vec![c], 1.0).buffer())?;
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(&format!("{}.gamma", self.name))?;
        let beta = g.param(&format!("{}.beta", self.name))?;
        let shape = g.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(DiffError::ShapeMismatch {
                op: "batchnorm",
                detail: format!("{:?} vs {} channels", shape, self.channels),
            });
        }
        let (batch, c, t) = (shape[0], shape[1], shape[2]);
        if g.training {
            let n = batch * t;
            if n < 2 {
                return Err(DiffError::NotPositive {
                    what: "batchnorm samples per channel (training needs >= 2)",
                    got: n as f64,
                });
            }
            let (mean, var_biased) = bn_batch_stats(g.tape.data(x), batch, c, t);
            // Normalization uses the biased variance; the running buffer keeps
            // the unbiased estimate, matching common deep-learning practice.
            let unbias = n as f64 / (n as f64 - 1.0);
            let mname = format!("{}.running_mean", self.name);
            let vname = format!("{}.running_var", self.name);
            let mut rm = g.buffer_data(&mname)?;
            let mut rv = g.buffer_data(&vname)?;
            for ch in 0..c {
                rm[ch] = (1.0 - self.momentum) * rm[ch] + self.momentum * mean[ch];
                rv[ch] = (1.0 - self.momentum) * rv[ch] + self.momentum * var_biased[ch] * unbias;
            }
            g.update_buffer(&mname, rm)?;
            g.update_buffer(&vname, rv)?;
            g.tape.batchnorm_train(x, gamma, beta, BN_EPS)
        } else {
            let rm = g.buffer_data(&format!("{}.running_mean", self.name))?;
            let rv = g.buffer_data(&format!("{}.running_var", self.name))?;
            g.tape.batchnorm_eval(x, gamma, beta, &rm, &rv, BN_EPS)
        }
    }
}

/// Inverted dropout: identity in eval mode, mask-and-rescale in training.
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Dropout { p }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        if !g.training || self.p == 0.0 {
            return Ok(x);
        }
        let n = g.tape.data(x).len();
        let keep = 1.0 - self.p;
        let mask: Vec<f64> = (0..n)
            .map(|_| if g.rng.random::<f64>() < self.p { 0.0 } else { 1.0 / keep })
            .collect();
        g.tape.mul_mask(x, mask)
    }
}

pub struct MaxPool1d {
    pub width: usize,
    pub stride: usize,
}

impl MaxPool1d {
    pub fn new(width: usize, stride: usize) -> Self {
        MaxPool1d { width, stride }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        g.tape.maxpool1d(x, self.width, self.stride)
    }
}

/// conv -> batchnorm -> relu -> dropout -> (optional) maxpool.
pub struct Conv1dBlock {
    pub conv: Conv1d,
    pub bn: BatchNorm1d,
    pub dropout: Dropout,
    pub pool: Option<MaxPool1d>,
}

impl Conv1dBlock {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        dropout_p: f64,
        bn_momentum: f64,
        pooled: bool,
    ) -> Self {
        Conv1dBlock {
            conv: Conv1d::new_without_bias(format!("{name}.conv"), cin, cout, kernel),
            bn: BatchNorm1d::new(format!("{name}.bn"), cout, bn_momentum),
            dropout: Dropout::new(dropout_p),
            pool: pooled.then(|| MaxPool1d::new(2, 2)),
        }
    }

    pub fn init(&self, params: &mut ParameterSet, rng: &mut ChaCha8Rng) -> Result<()> {
        self.conv.init(params, rng)?;
        self.bn.init(params)
    }

    /// Output time length for an input of length `t_in`.
    pub fn out_len(&self, t_in: usize) -> Result<usize> {
        if t_in < self.conv.kernel {
            return Err(DiffError::EmptyTime { op: "conv1d_block" });
        }
        let t = t_in - self.conv.kernel + 1;
        match &self.pool {
            Some(p) => {
                if t < p.width {
                    return Err(DiffError::EmptyTime { op: "maxpool1d" });
                }
                Ok((t - p.width) / p.stride + 1)
            }
            None => Ok(t),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let x = self.conv.forward(g, x)?;
        let x = self.bn.forward(g, x)?;
        let x = g.tape.relu(x);
        let x = self.dropout.forward(g, x)?;
        match &self.pool {
            Some(p) => p.forward(g, x),
            None => Ok(x),
        }
    }
}

/// Affine map on the trailing axis: `[.., d_in] -> [.., d_out]`.
pub struct Linear {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        Linear { name: name.into(), d_in, d_out }
    }

    pub fn init(&self, params: &mut ParameterSet, rng: &mut ChaCha8Rng) -> Result<()> {
        let bound = 1.0 / (self.d_in as f64).sqrt();
        params.insert(
            &format!("{}.weight", self.name),
            uniform_tensor(rng, vec![self.d_in, self.d_out], bound),
        )?;
        params.insert(&format!("{}.bias", self.name), Tensor::zeros(vec![self.d_out]))?;
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let shape = g.tape.shape(x).to_vec();
        if *shape.last().unwrap() != self.d_in {
            return Err(DiffError::ShapeMismatch {
                op: "linear",
                detail: format!("{} expects trailing dim {}, got {:?}", self.name, self.d_in, shape),
            });
        }
        let lead: usize = shape[..shape.len() - 1].iter().product();
        let w = g.param(&format!("{}.weight", self.name))?;
        let b = g.param(&format!("{}.bias", self.name))?;
        let flat = g.tape.reshape(x, vec![lead, self.d_in])?;
        let y = g.tape.matmul(flat, w)?;
        let y = g.tape.add_bias(y, b)?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.d_out;
        g.tape.reshape(y, out_shape)
    }
}

/// Stacked GRU over `[B,T,D]`; returns the top layer's full hidden sequence
/// and its final hidden state.
///
/// Gate order per step: reset and update from input and previous hidden,
/// candidate gated by reset on the hidden path, then a convex blend:
///   r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
///   z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
///   n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
///   h' = (1 - z) * n + z * h
pub struct Gru {
    pub name: String,
    pub input_size: usize,
    pub hidden_size: usize,
    pub layers: usize,
}

const GRU_GATES: [&str; 3] = ["r", "z", "n"];

impl Gru {
    pub fn new(name: impl Into<String>, input_size: usize, hidden_size: usize, layers: usize) -> Self {
        Gru { name: name.into(), input_size, hidden_size, layers }
    }

    fn wname(&self, layer: usize, kind: &str, gate: &str) -> String {
        format!("{}.l{layer}.w{kind}{gate}", self.name)
    }

    fn bname(&self, layer: usize, kind: &str, gate: &str) -> String {
        format!("{}.l{layer}.b{kind}{gate}", self.name)
    }

    pub fn init(&self, params: &mut ParameterSet, rng: &mut ChaCha8Rng) -> Result<()> {
        let h = self.hidden_size;
        for l in 0..self.layers {
            let d_in = if l == 0 { self.input_size } else { h };
            for gate in GRU_GATES {
                params.insert(
                    &self.wname(l, "i", gate),
                    uniform_tensor(rng, vec![d_in, h], 1.0 / (d_in as f64).sqrt()),
                )?;
                params.insert(
                    &self.wname(l, "h", gate),
                    uniform_tensor(rng, vec![h, h], 1.0 / (h as f64).sqrt()),
                )?;
                params.insert(&self.bname(l, "i", gate), Tensor::zeros(vec![h]))?;
                params.insert(&self.bname(l, "h", gate), Tensor::zeros(vec![h]))?;
            }
        }
        Ok(())
    }

    /// One gate pre-activation: x.W_i + b_i + pre_h (pre_h already includes
    /// the hidden-path affine).
    fn gate_pre(
        &self,
        g: &mut Graph,
        layer: usize,
        gate: &str,
        x_t: NodeId,
        h: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let wi = g.param(&self.wname(layer, "i", gate))?;
        let bi = g.param(&self.bname(layer, "i", gate))?;
        let wh = g.param(&self.wname(layer, "h", gate))?;
        let bh = g.param(&self.bname(layer, "h", gate))?;
        let xi = g.tape.matmul(x_t, wi)?;
        let xi = g.tape.add_bias(xi, bi)?;
        let hh = g.tape.matmul(h, wh)?;
        let hh = g.tape.add_bias(hh, bh)?;
        Ok((xi, hh))
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<(NodeId, NodeId)> {
        let shape = g.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.input_size {
            return Err(DiffError::ShapeMismatch {
                op: "gru",
                detail: format!("{} expects [B,T,{}], got {:?}", self.name, self.input_size, shape),
            });
        }
        let (batch, t_len) = (shape[0], shape[1]);
        if t_len == 0 {
            return Err(DiffError::EmptyTime { op: "gru" });
        }
        let hs = self.hidden_size;
        let mut seq = x;
        let mut final_h = 0;
        for l in 0..self.layers {
            let mut h = g.tape.constant(vec![batch, hs], vec![0.0; batch * hs]);
            let mut steps = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let x_t = g.tape.slice_axis(seq, 1, t, 1)?;
                let d_in = *g.tape.shape(seq).last().unwrap();
                let x_t = g.tape.reshape(x_t, vec![batch, d_in])?;
                let (r_xi, r_hh) = self.gate_pre(g, l, "r", x_t, h)?;
                let r_pre = g.tape.add(r_xi, r_hh)?;
                let r = g.tape.sigmoid(r_pre);
                let (z_xi, z_hh) = self.gate_pre(g, l, "z", x_t, h)?;
                let z_pre = g.tape.add(z_xi, z_hh)?;
                let z = g.tape.sigmoid(z_pre);
                let (n_xi, n_hh) = self.gate_pre(g, l, "n", x_t, h)?;
                let gated = g.tape.mul(r, n_hh)?;
                let n_pre = g.tape.add(n_xi, gated)?;
                let n = g.tape.tanh(n_pre);
                let zc = g.tape.scalar_mul(z, -1.0);
                let one_minus_z = g.tape.scalar_add(zc, 1.0);
                let a = g.tape.mul(one_minus_z, n)?;
                let b = g.tape.mul(z, h)?;
                h = g.tape.add(a, b)?;
                let step = g.tape.reshape(h, vec![batch, 1, hs])?;
                steps.push(step);
            }
            seq = g.tape.concat(&steps, 1)?;
            final_h = h;
        }
        Ok((seq, final_h))
    }
}

/// Multi-head scaled dot-product self-attention over the middle axis of
/// `[B,J,d]`. No positional encoding, so the map commutes with permutations
/// of the J axis.
pub struct MultiHeadAttention {
    pub name: String,
    pub d_model: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(name: impl Into<String>, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(DiffError::ShapeMismatch {
                op: "attention",
                detail: format!("model dim {d_model} not divisible by {heads} heads"),
            });
        }
        Ok(MultiHeadAttention { name: name.into(), d_model, heads })
    }

    pub fn init(&self, params: &mut ParameterSet, rng: &mut ChaCha8Rng) -> Result<()> {
        let d = self.d_model;
        let bound = 1.0 / (d as f64).sqrt();
        for proj in ["q", "k", "v", "o"] {
            params.insert(
                &format!("{}.w{proj}", self.name),
                uniform_tensor(rng, vec![d, d], bound),
            )?;
            params.insert(&format!("{}.b{proj}", self.name), Tensor::zeros(vec![d]))?;
        }
        Ok(())
    }

    fn project(&self, g: &mut Graph, x_flat: NodeId, proj: &str) -> Result<NodeId> {
        let w = g.param(&format!("{}.w{proj}", self.name))?;
        let b = g.param(&format!("{}.b{proj}", self.name))?;
        let y = g.tape.matmul(x_flat, w)?;
        g.tape.add_bias(y, b)
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let shape = g.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.d_model {
            return Err(DiffError::ShapeMismatch {
                op: "attention",
                detail: format!("expected [B,J,{}], got {:?}", self.d_model, shape),
            });
        }
        let (b, j, d) = (shape[0], shape[1], shape[2]);
        let (h, dh) = (self.heads, self.d_model / self.heads);
        let flat = g.tape.reshape(x, vec![b * j, d])?;
        let q = self.project(g, flat, "q")?;
        let k = self.project(g, flat, "k")?;
        let v = self.project(g, flat, "v")?;
        // Split heads: [B*J,d] -> [B,J,h,dh] -> [B,h,J,dh] -> [B*h,J,dh].
        let split = |g: &mut Graph, t: NodeId| -> Result<NodeId> {
            let t = g.tape.reshape(t, vec![b, j, h, dh])?;
            let t = g.tape.permute(t, &[0, 2, 1, 3])?;
            g.tape.reshape(t, vec![b * h, j, dh])
        };
        let qh = split(g, q)?;
        let vh = split(g, v)?;
        // Keys go straight to [B*h,dh,J] so scores = q . k^T as one bmm.
        let kt = g.tape.reshape(k, vec![b, j, h, dh])?;
        let kt = g.tape.permute(kt, &[0, 2, 3, 1])?;
        let kt = g.tape.reshape(kt, vec![b * h, dh, j])?;
        let scores = g.tape.bmm(qh, kt)?;
        let scores = g.tape.scalar_mul(scores, 1.0 / (dh as f64).sqrt());
        let probs = g.tape.softmax_last(scores);
        let ctx = g.tape.bmm(probs, vh)?;
        // Merge heads back: [B*h,J,dh] -> [B,h,J,dh] -> [B,J,h,dh] -> [B*J,d].
        let ctx = g.tape.reshape(ctx, vec![b, h, j, dh])?;
        let ctx = g.tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.tape.reshape(ctx, vec![b * j, d])?;
        let out = self.project(g, ctx, "o")?;
        g.tape.reshape(out, vec![b, j, d])
    }
}
