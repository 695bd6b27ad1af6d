use serde::{Deserialize, Serialize};

use crate::numerics::RngState;

/// Fully connected layer; `weight` is out×in row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub has_bias: bool,
}

impl DenseLayer {
    pub fn zeros(out_dim: usize, in_dim: usize, has_bias: bool) -> Self {
        Self { out_dim, in_dim, weight: vec![0.0; out_dim * in_dim], bias: vec![0.0; out_dim], has_bias }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(out_dim: usize, in_dim: usize, has_bias: bool, rng: &mut RngState) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..out_dim * in_dim).map(|_| rng.uniform_range(-a, a)).collect();
        Self { out_dim, in_dim, weight, bias: vec![0.0; out_dim], has_bias }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weight[j * self.in_dim..(j + 1) * self.in_dim]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.weight[j * self.in_dim..(j + 1) * self.in_dim]
    }
}

/// Stride-1, unpadded 2-D convolution; kernels are out×in×k×k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_ch: usize,
    pub in_ch: usize,
    pub k: usize,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
    pub has_bias: bool,
}

impl ConvLayer {
    pub fn init(out_ch: usize, in_ch: usize, k: usize, has_bias: bool, rng: &mut RngState) -> Self {
        let a = (6.0 / ((in_ch + out_ch) * k * k) as f64).sqrt();
        let kernels = (0..out_ch * in_ch * k * k).map(|_| rng.uniform_range(-a, a)).collect();
        Self { out_ch, in_ch, k, kernels, bias: vec![0.0; out_ch], has_bias }
    }

    pub fn kernel_len(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    /// Kernel stack of output channel `o`, flattened as (in_ch, ky, kx).
    pub fn kernel(&self, o: usize) -> &[f64] {
        let n = self.kernel_len();
        &self.kernels[o * n..(o + 1) * n]
    }

    pub fn kernel_mut(&mut self, o: usize) -> &mut [f64] {
        let n = self.kernel_len();
        &mut self.kernels[o * n..(o + 1) * n]
    }

    pub fn forward(&self, input: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let (k, oh, ow) = (self.k, h - self.k + 1, w - self.k + 1);
        for o in 0..self.out_ch {
            let b = self.bias[o];
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = b);
            let ker = self.kernel(o);
            for i in 0..self.in_ch {
                let inp = &input[i * h * w..(i + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let kv = ker[(i * k + ky) * k + kx];
                        if kv == 0.0 {
                            continue;
                        }
                        for y in 0..oh {
                            let src = &inp[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                            let dst = &mut plane[y * ow..(y + 1) * ow];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += kv * s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates kernel/bias gradients (when `grads` is given) and writes
    /// the input gradient into `din`.
    pub fn backward(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        dout: &[f64],
        grads: Option<(&mut [f64], &mut [f64])>,
        din: Option<&mut [f64]>,
    ) {
        let (k, oh, ow) = (self.k, h - self.k + 1, w - self.k + 1);
        if let Some((gk, gb)) = grads {
            let n = self.kernel_len();
            for o in 0..self.out_ch {
                let dplane = &dout[o * oh * ow..(o + 1) * oh * ow];
                if self.has_bias {
                    gb[o] += dplane.iter().sum::<f64>();
                }
                let gker = &mut gk[o * n..(o + 1) * n];
                for i in 0..self.in_ch {
                    let inp = &input[i * h * w..(i + 1) * h * w];
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = 0.0;
                            for y in 0..oh {
                                let src = &inp[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                                let dr = &dplane[y * ow..(y + 1) * ow];
                                acc += src.iter().zip(dr).map(|(a, b)| a * b).sum::<f64>();
                            }
                            gker[(i * k + ky) * k + kx] += acc;
                        }
                    }
                }
            }
        }
        if let Some(din) = din {
            din.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..self.out_ch {
                let dplane = &dout[o * oh * ow..(o + 1) * oh * ow];
                let ker = self.kernel(o);
                for i in 0..self.in_ch {
                    let dinp = &mut din[i * h * w..(i + 1) * h * w];
                    for ky in 0..k {
                        for kx in 0..k {
                            let kv = ker[(i * k + ky) * k + kx];
                            if kv == 0.0 {
                                continue;
                            }
                            for y in 0..oh {
                                let dst = &mut dinp[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                                let dr = &dplane[y * ow..(y + 1) * ow];
                                for (d, g) in dst.iter_mut().zip(dr) {
                                    *d += kv * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense(DenseLayer),
    Conv(ConvLayer),
}

impl Layer {
    /// Number of nodes (dense units or conv output channels).
    pub fn nodes(&self) -> usize {
        match self {
            Layer::Dense(d) => d.out_dim,
            Layer::Conv(c) => c.out_ch,
        }
    }

    pub fn has_bias(&self) -> bool {
        match self {
            Layer::Dense(d) => d.has_bias,
            Layer::Conv(c) => c.has_bias,
        }
    }

    pub fn bias(&self) -> &[f64] {
        match self {
            Layer::Dense(d) => &d.bias,
            Layer::Conv(c) => &c.bias,
        }
    }

    pub fn weights(&self) -> &[f64] {
        match self {
            Layer::Dense(d) => &d.weight,
            Layer::Conv(c) => &c.kernels,
        }
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Vec<f64> {
        match self {
            Layer::Dense(d) => &mut d.weight,
            Layer::Conv(c) => &mut c.kernels,
        }
    }

    pub(crate) fn bias_mut(&mut self) -> &mut Vec<f64> {
        match self {
            Layer::Dense(d) => &mut d.bias,
            Layer::Conv(c) => &mut c.bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights().len() + self.bias().len()
    }
}
