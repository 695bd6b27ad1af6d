use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layer, Network};

/// Which activations serve as the representation f_M.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTap {
    /// Post-ReLU output of the last hidden layer.
    Penultimate,
    /// The output layer.
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RftInit {
    Noise,
    RandomImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RftConfig {
    /// Weight of the teacher-logit consistency term.
    pub alpha: f64,
    pub steps: usize,
    pub step_size: f64,
    pub init: RftInit,
    pub tap: FeatureTap,
    #[serde(with = "crate::serde_clip")]
    pub clip: Option<(f64, f64)>,
}

impl Default for RftConfig {
    fn default() -> Self {
        Self { alpha: 0.5, steps: 100, step_size: 0.1, init: RftInit::Noise, tap: FeatureTap::Penultimate, clip: Some((0.0, 1.0)) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustFeatureResult {
    pub x_r: Vec<f64>,
    pub objective: f64,
    pub steps: usize,
}

const DIVERGENCE_STREAK: usize = 10;

/// The representation network and whether a ReLU follows its output.
fn feature_net(model: &Network, tap: FeatureTap) -> Result<(Network, bool)> {
    match tap {
        FeatureTap::Logits => Ok((model.clone(), false)),
        FeatureTap::Penultimate => {
            let n = model.layers().len();
            if n < 2 {
                return Err(Error::InvalidArgument("penultimate features need a hidden layer".into()));
            }
            let layers: Vec<Layer> = model.layers()[..n - 1].to_vec();
            Ok((Network::new(model.input_shape().to_vec(), layers)?, true))
        }
    }
}

/// Features at `x` with the forward trace they came from.
fn features(net: &Network, relu: bool, x: &[f64]) -> Result<(Vec<f64>, crate::network::Trace)> {
    let tr = net.forward(x)?;
    let mut f = tr.logits().to_vec();
    if relu {
        f.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok((f, tr))
}

fn objective_and_grad(
    feat: &(Network, bool),
    teacher: &Network,
    alpha: f64,
    target_f: &[f64],
    target_t: &[f64],
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let (net, relu) = feat;
    let (f, tr) = features(net, *relu, x)?;
    let df: Vec<f64> = f.iter().zip(target_f).map(|(a, b)| a - b).collect();
    let mut value: f64 = df.iter().map(|v| v * v).sum();
    let mut up: Vec<f64> = df.iter().map(|v| 2.0 * v).collect();
    if *relu {
        up.iter_mut().zip(tr.logits()).for_each(|(g, z)| {
            if *z <= 0.0 {
                *g = 0.0;
            }
        });
    }
    let mut grad = net.backward(&tr, &up, false)?.input_grad;
    if alpha != 0.0 {
        let tt = teacher.forward(x)?;
        let dt: Vec<f64> = tt.logits().iter().zip(target_t).map(|(a, b)| a - b).collect();
        value += alpha * dt.iter().map(|v| v * v).sum::<f64>();
        let up: Vec<f64> = dt.iter().map(|v| 2.0 * alpha * v).collect();
        let gt = teacher.backward(&tt, &up, false)?.input_grad;
        grad.iter_mut().zip(gt).for_each(|(a, b)| *a += b);
    }
    Ok((value, grad))
}

/// Gradient descent on α‖L_t(x_r) − L_t(x)‖² + ‖f_M(x) − f_M(x_r)‖² from `init`.
pub fn gen_robust_feature(x_target: &[f64], init: &[f64], robust_model: &Network, teacher: &Network, cfg: &RftConfig) -> Result<RobustFeatureResult> {
    if !(cfg.alpha >= 0.0) || !(cfg.step_size > 0.0) {
        return Err(Error::InvalidArgument(format!("rft needs α ≥ 0 and a positive step, got {} / {}", cfg.alpha, cfg.step_size)));
    }
    if init.len() != x_target.len() {
        return Err(crate::error::shape_err(format!("{} values", x_target.len()), format!("{}", init.len())));
    }
    let feat = feature_net(robust_model, cfg.tap)?;
    let target_f = features(&feat.0, feat.1, x_target)?.0;
    let target_t = teacher.predict(x_target)?;
    let mut x = init.to_vec();
    let (mut value, mut grad) = objective_and_grad(&feat, teacher, cfg.alpha, &target_f, &target_t, &x)?;
    let mut streak = 0;
    let mut steps = 0;
    while steps < cfg.steps && value > 0.0 {
        for (xi, g) in x.iter_mut().zip(&grad) {
            *xi -= cfg.step_size * g;
            if let Some((lo, hi)) = cfg.clip {
                *xi = xi.clamp(lo, hi);
            }
        }
        steps += 1;
        let (v, g) = objective_and_grad(&feat, teacher, cfg.alpha, &target_f, &target_t, &x)?;
        if !v.is_finite() {
            return Err(Error::Diverged(format!("robust-feature objective became {v} at step {steps}")));
        }
        streak = if v > value { streak + 1 } else { 0 };
        if streak >= DIVERGENCE_STREAK {
            return Err(Error::Diverged(format!("robust-feature objective rose {DIVERGENCE_STREAK} steps in a row (now {v})")));
        }
        value = v;
        grad = g;
    }
    Ok(RobustFeatureResult { x_r: x, objective: value, steps })
}
