//! Fixed-architecture ReLU networks with exact backprop.
//!
//! A [`Network`] is an ordered list of dense or convolutional layers with a
//! ReLU after every layer but the last. Convolutions are stride 1 without
//! padding; a dense layer following a convolution reads its output flattened
//! channel-major. Conv "nodes" are output channels.

mod checkpoint;
mod layer;
pub mod loss;
mod prune;

use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, TrainMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layer::{ConvLayer, DenseLayer, Layer};
pub use prune::PruneReport;

use crate::error::{shape_err, Error, Result};
use crate::numerics::RngState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Output shape of every layer: `[n]` for dense, `[c, h, w]` for conv.
    shapes: Vec<Vec<usize>>,
}

/// Everything recorded by a forward pass that backward needs.
#[derive(Debug, Clone)]
pub struct Trace {
    pub input: Vec<f64>,
    /// Pre-activation outputs per layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-ReLU outputs per hidden layer; the last entry equals the logits.
    pub post: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Binary ReLU gates of layer `l` (pre-activation strictly positive).
    pub fn gates(&self, l: usize) -> Vec<bool> {
        self.pre[l].iter().map(|&v| v > 0.0).collect()
    }

    /// Post-activation outputs of hidden layers only.
    pub fn activations(&self) -> &[Vec<f64>] {
        &self.post[..self.post.len().saturating_sub(1)]
    }
}

/// Parameter gradients, one (weight, bias) pair per layer, same layout as the
/// network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ParamGrads {
    pub fn zeros_like(net: &Network) -> Self {
        Self { layers: net.layers.iter().map(|l| (vec![0.0; l.weights().len()], vec![0.0; l.bias().len()])).collect() }
    }

    pub fn add_scaled(&mut self, other: &ParamGrads, s: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, c)| *a += s * c);
            b.iter_mut().zip(ob).for_each(|(a, c)| *a += s * c);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|a| *a *= s);
            b.iter_mut().for_each(|a| *a *= s);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b).copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.iter().chain(b).all(|v| v.is_finite()))
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    /// Present when parameter gradients were requested.
    pub params: Option<ParamGrads>,
    pub input_grad: Vec<f64>,
    /// Gradient at the first hidden layer's pre-activation outputs.
    pub g1: Vec<f64>,
}

fn flat_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            cur = match layer {
                Layer::Dense(d) => {
                    if d.in_dim != flat_len(&cur) || d.out_dim == 0 {
                        return Err(shape_err(format!("layer {i} input {}", flat_len(&cur)), format!("{}", d.in_dim)));
                    }
                    if d.weight.len() != d.out_dim * d.in_dim || d.bias.len() != d.out_dim {
                        return Err(Error::Malformed(format!("dense layer {i} parameter lengths")));
                    }
                    vec![d.out_dim]
                }
                Layer::Conv(c) => {
                    if cur.len() != 3 || cur[0] != c.in_ch || cur[1] < c.k || cur[2] < c.k || c.out_ch == 0 {
                        return Err(shape_err(
                            format!("layer {i}: [{}, ≥{}, ≥{}]", c.in_ch, c.k, c.k),
                            format!("{cur:?}"),
                        ));
                    }
                    if c.kernels.len() != c.out_ch * c.kernel_len() || c.bias.len() != c.out_ch {
                        return Err(Error::Malformed(format!("conv layer {i} parameter lengths")));
                    }
                    vec![c.out_ch, cur[1] - c.k + 1, cur[2] - c.k + 1]
                }
            };
            shapes.push(cur.clone());
        }
        Ok(Self { input_shape, layers, shapes })
    }

    /// Dense stack with widths `dims = [d, h1, ..., C]`.
    pub fn dense(dims: &[usize], has_bias: bool, rng: &mut RngState) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("dense network needs input and output widths".into()));
        }
        let layers = dims.windows(2).map(|w| Layer::Dense(DenseLayer::init(w[1], w[0], has_bias, rng))).collect();
        Self::new(vec![dims[0]], layers)
    }

    /// Conv-ReLU stack (kernel `k`) over `input_shape = [c, h, w]`, flattened
    /// into one dense layer producing `classes` logits.
    pub fn conv(
        input_shape: [usize; 3],
        channels: &[usize],
        k: usize,
        classes: usize,
        has_bias: bool,
        rng: &mut RngState,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let (mut c, mut h, mut w) = (input_shape[0], input_shape[1], input_shape[2]);
        for &oc in channels {
            if h < k || w < k {
                return Err(Error::InvalidArgument(format!("spatial size {h}x{w} too small for kernel {k}")));
            }
            layers.push(Layer::Conv(ConvLayer::init(oc, c, k, has_bias, rng)));
            c = oc;
            h = h - k + 1;
            w = w - k + 1;
        }
        layers.push(Layer::Dense(DenseLayer::init(classes, c * h * w, has_bias, rng)));
        Self::new(input_shape.to_vec(), layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        flat_len(&self.input_shape)
    }

    pub fn output_dim(&self) -> usize {
        flat_len(self.shapes.last().expect("non-empty"))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_shape(&self, l: usize) -> &[usize] {
        &self.shapes[l]
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Node counts of the hidden layers.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Layer::nodes).collect()
    }

    fn layer_input_shape(&self, l: usize) -> &[usize] {
        if l == 0 {
            &self.input_shape
        } else {
            &self.shapes[l - 1]
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(shape_err(format!("input of {} values {:?}", self.input_len(), self.input_shape), format!("{}", x.len())));
        }
        Ok(())
    }

    fn apply_layer(&self, l: usize, input: &[f64]) -> Vec<f64> {
        match &self.layers[l] {
            Layer::Dense(d) => (0..d.out_dim)
                .map(|j| d.bias[j] + d.row(j).iter().zip(input).map(|(a, b)| a * b).sum::<f64>())
                .collect(),
            Layer::Conv(c) => {
                let s = self.layer_input_shape(l);
                let mut out = vec![0.0; flat_len(&self.shapes[l])];
                c.forward(input, s[1], s[2], &mut out);
                out
            }
        }
    }

    /// Logits only.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        for l in 0..self.layers.len() {
            cur = self.apply_layer(l, &cur);
            if l < last {
                cur.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(cur)
    }

    /// Forward pass recording pre-activations and activations of every layer.
    pub fn forward(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let z = self.apply_layer(l, if l == 0 { x } else { &post[l - 1] });
            let a = if l < last { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
            pre.push(z);
            post.push(a);
        }
        Ok(Trace { input: x.to_vec(), pre, post })
    }

    /// Backpropagates `dlogits` (gradient of a scalar loss w.r.t. the logits)
    /// through a recorded forward pass.
    pub fn backward(&self, trace: &Trace, dlogits: &[f64], want_params: bool) -> Result<Backward> {
        if trace.pre.len() != self.layers.len()
            || trace.input.len() != self.input_len()
            || trace.pre.iter().zip(&self.shapes).any(|(p, s)| p.len() != flat_len(s))
        {
            return Err(Error::InvalidArgument("trace was not recorded by this network".into()));
        }
        if dlogits.len() != self.output_dim() {
            return Err(shape_err(format!("{} logit gradients", self.output_dim()), format!("{}", dlogits.len())));
        }
        let mut grads = want_params.then(|| ParamGrads::zeros_like(self));
        let mut delta = dlogits.to_vec();
        let mut g1 = Vec::new();
        let last = self.layers.len() - 1;
        for l in (0..self.layers.len()).rev() {
            if l < last {
                // ReLU gate
                delta.iter_mut().zip(&trace.pre[l]).for_each(|(d, &z)| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            if l == 0 {
                g1 = delta.clone();
            }
            let input: &[f64] = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            let mut din = vec![0.0; input.len()];
            match &self.layers[l] {
                Layer::Dense(d) => {
                    if let Some(g) = grads.as_mut() {
                        let (gw, gb) = &mut g.layers[l];
                        for j in 0..d.out_dim {
                            let dj = delta[j];
                            if dj == 0.0 {
                                continue;
                            }
                            if d.has_bias {
                                gb[j] += dj;
                            }
                            gw[j * d.in_dim..(j + 1) * d.in_dim].iter_mut().zip(input).for_each(|(a, x)| *a += dj * x);
                        }
                    }
                    for j in 0..d.out_dim {
                        let dj = delta[j];
                        if dj == 0.0 {
                            continue;
                        }
                        din.iter_mut().zip(d.row(j)).for_each(|(a, w)| *a += dj * w);
                    }
                }
                Layer::Conv(c) => {
                    let s = self.layer_input_shape(l);
                    let pg = grads.as_mut().map(|g| {
                        let (gw, gb) = &mut g.layers[l];
                        (gw.as_mut_slice(), gb.as_mut_slice())
                    });
                    c.backward(input, s[1], s[2], &delta, pg, Some(&mut din));
                }
            }
            delta = din;
        }
        Ok(Backward { params: grads, input_grad: delta, g1 })
    }

    /// Gradient of a scalar function of the logits w.r.t. the input.
    pub fn input_gradient(&self, x: &[f64], dlogits_of: impl FnOnce(&[f64]) -> Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward(x)?;
        let dl = dlogits_of(trace.logits());
        let back = self.backward(&trace, &dl, false)?;
        Ok((trace.logits().to_vec(), back.input_grad))
    }

    /// θ ← θ − lr·g. Bias entries of bias-free layers are left untouched.
    pub fn apply_gradient(&mut self, grads: &ParamGrads, lr: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            let has_bias = layer.has_bias();
            layer.weights_mut().iter_mut().zip(gw).for_each(|(w, g)| *w -= lr * g);
            if has_bias {
                layer.bias_mut().iter_mut().zip(gb).for_each(|(b, g)| *b -= lr * g);
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// All parameters, layer by layer, weights then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights().iter().chain(l.bias()).copied()).collect()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(shape_err(format!("{} parameters", self.param_count()), format!("{}", params.len())));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let nw = layer.weights().len();
            layer.weights_mut().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = layer.bias().len();
            layer.bias_mut().copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Layer {
        &mut self.layers[l]
    }

    fn check_node(&self, l: usize, j: usize) -> Result<()> {
        if l >= self.layers.len() || j >= self.layers[l].nodes() {
            return Err(Error::IndexOutOfRange(format!("node {j} of layer {l}")));
        }
        Ok(())
    }

    /// Incoming weights of node `j` without its bias (flattened kernel stack
    /// for conv channels).
    pub fn node_kernel(&self, l: usize, j: usize) -> Result<Vec<f64>> {
        self.check_node(l, j)?;
        Ok(match &self.layers[l] {
            Layer::Dense(d) => d.row(j).to_vec(),
            Layer::Conv(c) => c.kernel(j).to_vec(),
        })
    }

    /// Augmented incoming weight [w̃; b] of node `j` in layer `l`.
    pub fn node_weight(&self, l: usize, j: usize) -> Result<Vec<f64>> {
        let mut w = self.node_kernel(l, j)?;
        w.push(self.layers[l].bias()[j]);
        Ok(w)
    }

    /// Next-layer weights reading node `j` of layer `l`, flattened.
    pub fn node_fanout(&self, l: usize, j: usize) -> Result<Vec<f64>> {
        self.check_node(l, j)?;
        if l + 1 >= self.layers.len() {
            return Err(Error::NoFanout(l));
        }
        let plane = match self.shapes[l].as_slice() {
            [_, h, w] => h * w,
            _ => 1,
        };
        Ok(match &self.layers[l + 1] {
            Layer::Dense(d) => (0..d.out_dim)
                .flat_map(|o| d.row(o)[j * plane..(j + 1) * plane].iter().copied())
                .collect(),
            Layer::Conv(c) => {
                let kk = c.k * c.k;
                (0..c.out_ch).flat_map(|o| c.kernel(o)[j * kk..(j + 1) * kk].iter().copied()).collect()
            }
        })
    }

    /// Per-node fan-out ℓ2 norms of hidden layer `l`.
    pub fn fanout_norms(&self, l: usize) -> Result<Vec<f64>> {
        (0..self.layers.get(l).map_or(0, Layer::nodes))
            .map(|j| self.node_fanout(l, j).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()))
            .collect()
    }

    /// Sets the fan-out of node `j` in layer `l` to zero.
    pub fn zero_fanout(&mut self, l: usize, j: usize) -> Result<()> {
        self.check_node(l, j)?;
        if l + 1 >= self.layers.len() {
            return Err(Error::NoFanout(l));
        }
        let plane = match self.shapes[l].as_slice() {
            [_, h, w] => h * w,
            _ => 1,
        };
        match &mut self.layers[l + 1] {
            Layer::Dense(d) => {
                for o in 0..d.out_dim {
                    d.row_mut(o)[j * plane..(j + 1) * plane].iter_mut().for_each(|v| *v = 0.0);
                }
            }
            Layer::Conv(c) => {
                let kk = c.k * c.k;
                for o in 0..c.out_ch {
                    c.kernel_mut(o)[j * kk..(j + 1) * kk].iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        Ok(())
    }
}
