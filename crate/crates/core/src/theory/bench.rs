use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{DenseLayer, Layer, Network};
use crate::numerics::Tensor;

/// Full-batch heavy-ball gradient descent on the mean L2 loss of a 2-layer
/// student. Momentum on raw gradients keeps every first-layer update in the
/// span of the inputs, which the out-of-plane freezing check relies on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchTrainer {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Stop once g1_sup falls to this value.
    pub target_g1: f64,
}

impl Default for BenchTrainer {
    fn default() -> Self {
        Self { learning_rate: 0.3, momentum: 0.9, max_epochs: 200_000, target_g1: 1e-3 }
    }
}

/// Student state when g1_sup first dropped below a power of ten.
#[derive(Debug, Clone)]
pub struct BenchSnapshot {
    pub epoch: usize,
    pub g1_sup: f64,
    pub student: Network,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub student: Network,
    pub epochs: usize,
    /// g1_sup of the returned student.
    pub g1_sup: f64,
    pub loss: f64,
    pub snapshots: Vec<BenchSnapshot>,
}

struct Dense2 {
    d: usize,
    k: usize,
    c: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    v: Vec<f64>,
    vb: Vec<f64>,
    bias1: bool,
    bias2: bool,
}

fn dense(layer: &Layer) -> Result<&DenseLayer> {
    match layer {
        Layer::Dense(d) => Ok(d),
        Layer::Conv(_) => Err(Error::InvalidArgument("theory nets are dense".into())),
    }
}

pub(crate) fn check_two_layer(net: &Network) -> Result<()> {
    if net.layers().len() != 2 {
        return Err(Error::InvalidArgument(format!("expected a 2-layer net, got {} layers", net.layers().len())));
    }
    dense(&net.layers()[0])?;
    dense(&net.layers()[1])?;
    Ok(())
}

impl Dense2 {
    fn from_net(net: &Network) -> Result<Self> {
        check_two_layer(net)?;
        let (l1, l2) = (dense(&net.layers()[0])?, dense(&net.layers()[1])?);
        Ok(Self {
            d: l1.in_dim,
            k: l1.out_dim,
            c: l2.out_dim,
            w: l1.weight.clone(),
            b: l1.bias.clone(),
            v: l2.weight.clone(),
            vb: l2.bias.clone(),
            bias1: l1.has_bias,
            bias2: l2.has_bias,
        })
    }

    fn write_into(&self, net: &mut Network) {
        if let Layer::Dense(l) = net.layer_mut(0) {
            l.weight.copy_from_slice(&self.w);
            l.bias.copy_from_slice(&self.b);
        }
        if let Layer::Dense(l) = net.layer_mut(1) {
            l.weight.copy_from_slice(&self.v);
            l.bias.copy_from_slice(&self.vb);
        }
    }

    /// Loss, g1_sup and mean gradients (w, b, v, vb) over the batch.
    fn pass(&self, x: &Tensor, targets: &[f64], grad: &mut [Vec<f64>; 4]) -> (f64, f64) {
        let (d, k, c) = (self.d, self.k, self.c);
        grad.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
        let mut h = vec![0.0; k];
        let mut r = vec![0.0; c];
        let mut g1 = vec![0.0; k];
        let (mut loss, mut sup) = (0.0, 0.0f64);
        for i in 0..x.rows() {
            let xi = x.row(i);
            for j in 0..k {
                let row = &self.w[j * d..(j + 1) * d];
                let z: f64 = row.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + self.b[j];
                h[j] = z;
            }
            for o in 0..c {
                let mut s = self.vb[o];
                for j in 0..k {
                    if h[j] > 0.0 {
                        s += self.v[o * k + j] * h[j];
                    }
                }
                r[o] = s - targets[i * c + o];
                loss += 0.5 * r[o] * r[o];
            }
            for j in 0..k {
                g1[j] = if h[j] > 0.0 { (0..c).map(|o| self.v[o * k + j] * r[o]).sum() } else { 0.0 };
                sup = sup.max(g1[j].abs());
            }
            let [gw, gb, gv, gvb] = grad;
            for o in 0..c {
                for j in 0..k {
                    if h[j] > 0.0 {
                        gv[o * k + j] += r[o] * h[j];
                    }
                }
                gvb[o] += r[o];
            }
            for j in 0..k {
                if g1[j] != 0.0 {
                    gw[j * d..(j + 1) * d].iter_mut().zip(xi).for_each(|(a, b)| *a += g1[j] * b);
                    gb[j] += g1[j];
                }
            }
        }
        let n = x.rows() as f64;
        grad.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v /= n));
        if !self.bias1 {
            grad[1].iter_mut().for_each(|v| *v = 0.0);
        }
        if !self.bias2 {
            grad[3].iter_mut().for_each(|v| *v = 0.0);
        }
        (loss / n, sup)
    }
}

impl BenchTrainer {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.target_g1 >= 0.0) {
            return Err(Error::InvalidArgument(format!("bad benchmark trainer settings {self:?}")));
        }
        Ok(())
    }

    pub fn train(&self, student: &Network, teacher: &Network, data: &Tensor) -> Result<BenchOutcome> {
        self.validate()?;
        let mut s = Dense2::from_net(student)?;
        check_two_layer(teacher)?;
        if data.cols() != s.d || teacher.input_len() != s.d || teacher.output_dim() != s.c || data.rows() == 0 {
            return Err(crate::error::shape_err(format!("N×{} data and matching teacher", s.d), format!("{:?}", data.shape())));
        }
        let mut targets = Vec::with_capacity(data.rows() * s.c);
        for i in 0..data.rows() {
            targets.extend(teacher.predict(data.row(i))?);
        }
        let mut grad = [vec![0.0; s.w.len()], vec![0.0; s.k], vec![0.0; s.v.len()], vec![0.0; s.c]];
        let mut vel = grad.clone();
        let mut net = student.clone();
        let mut snapshots = Vec::new();
        let mut next_decade = 1e-1;
        let mut epoch = 0;
        loop {
            let (loss, sup) = s.pass(data, &targets, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("benchmark loss became {loss} at epoch {epoch}")));
            }
            if sup <= next_decade {
                s.write_into(&mut net);
                snapshots.push(BenchSnapshot { epoch, g1_sup: sup, student: net.clone() });
                while next_decade > 0.0 && sup <= next_decade {
                    next_decade /= 10.0;
                }
            }
            if epoch % 10_000 == 0 {
                debug!("bench epoch {epoch} loss {loss:.3e} g1_sup {sup:.3e}");
            }
            if sup <= self.target_g1 || epoch >= self.max_epochs {
                s.write_into(&mut net);
                return Ok(BenchOutcome { student: net, epochs: epoch, g1_sup: sup, loss, snapshots });
            }
            let params = [&mut s.w, &mut s.b, &mut s.v, &mut s.vb];
            for ((p, v), g) in params.into_iter().zip(vel.iter_mut()).zip(&grad) {
                for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = self.momentum * *vi - self.learning_rate * gi;
                    *pi += *vi;
                }
            }
            epoch += 1;
        }
    }
}
