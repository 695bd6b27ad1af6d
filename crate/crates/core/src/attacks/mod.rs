//! Adversarial-example generators.
//!
//! Every attack is projected gradient ascent on a scalar objective of the
//! student (and, in oracle mode, the teacher) logits. FGSM, CW and the CCAT
//! confidence attack are parameterizations of the same loop; see
//! [`make_attack`] for the named variants.

mod eval;
mod registry;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::loss::{argmax, cross_entropy, l2_logits};
use crate::network::Network;
use crate::numerics::{norm2, RngState};

pub use eval::*;
pub use registry::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => norm2(v),
            Norm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// Where the attack's reference logits come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// Teacher evaluated at the perturbed point and differentiated through.
    Oracle,
    /// Teacher output (or label) at the clean point, held fixed.
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackLoss {
    /// ½‖s(x') − t‖².
    L2Logits,
    /// CE(softmax(s(x')), y).
    CrossEntropy,
    /// −max(z_y − max_{k≠y} z_k, −κ).
    CwMargin,
    /// max_k |s_k(x') − t_k|.
    LinfLogitGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    pub norm: Norm,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub mode: AttackMode,
    pub loss: AttackLoss,
    pub random_init: bool,
    /// Box constraint applied after every projection; `None` for unbounded inputs.
    #[serde(with = "crate::serde_clip")]
    pub clip: Option<(f64, f64)>,
    pub kappa: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            norm: Norm::Linf,
            epsilon: 10.0 / 255.0,
            step_size: 0.01,
            iterations: 40,
            mode: AttackMode::Oracle,
            loss: AttackLoss::L2Logits,
            random_init: true,
            clip: Some((0.0, 1.0)),
            kappa: 0.0,
        }
    }
}

impl AttackSpec {
    /// Single sign step of size ε without random start.
    pub fn fgsm(epsilon: f64, mode: AttackMode, loss: AttackLoss) -> Self {
        Self { norm: Norm::Linf, epsilon, step_size: epsilon, iterations: 1, mode, loss, random_init: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon {} must be finite and ≥ 0", self.epsilon));
        }
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return bad(format!("step size {} must be finite and ≥ 0", self.step_size));
        }
        if self.iterations > 0 && self.epsilon > 0.0 && self.step_size == 0.0 {
            return bad("step size must be positive when iterations > 0".into());
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo < hi) {
                return bad(format!("clip range ({lo}, {hi}) is empty"));
            }
        }
        if !(self.kappa >= 0.0) {
            return bad(format!("kappa {} must be ≥ 0", self.kappa));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvResult {
    pub x_adv: Vec<f64>,
    /// Objective value before each iteration's step.
    pub loss_trace: Vec<f64>,
    /// Objective value at `x_adv`.
    pub final_loss: f64,
    /// ‖(I − UUᵀ)(x_adv − x₀)‖, filled by in/out-plane selection.
    pub subspace_distance: Option<f64>,
}

impl AdvResult {
    pub fn write_loss_trace(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "iteration,loss")?;
        for (i, l) in self.loss_trace.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        Ok(())
    }
}

/// Networks and optional label an attack runs against.
#[derive(Debug, Clone, Copy)]
pub struct Victim<'a> {
    pub student: &'a Network,
    pub teacher: Option<&'a Network>,
    /// Hard label for data mode; defaults to the teacher's clean argmax.
    pub label: Option<usize>,
}

impl<'a> Victim<'a> {
    pub fn new(student: &'a Network, teacher: &'a Network) -> Self {
        Self { student, teacher: Some(teacher), label: None }
    }
}

/// Margin loss max(z_y − max_{k≠y} z_k, −κ); attacks maximize its negation.
pub fn cw_margin_loss(logits: &[f64], target: usize, kappa: f64) -> Result<f64> {
    Ok(cw_margin(logits, target, kappa)?.0)
}

fn cw_margin(z: &[f64], y: usize, kappa: f64) -> Result<(f64, usize)> {
    if z.len() < 2 || y >= z.len() {
        return Err(Error::InvalidArgument(format!("margin needs ≥ 2 classes and a valid target, got {} / {y}", z.len())));
    }
    let other = (0..z.len()).filter(|&k| k != y).fold(None, |b: Option<usize>, k| match b {
        Some(j) if z[j] >= z[k] => Some(j),
        _ => Some(k),
    });
    let other = other.expect("two classes");
    Ok(((z[y] - z[other]).max(-kappa), other))
}

/// Fixed reference quantities taken at the clean input.
struct Reference {
    logits: Option<Vec<f64>>,
    label: Option<usize>,
}

impl Reference {
    fn new(v: &Victim, x: &[f64], spec: &AttackSpec) -> Result<Self> {
        match spec.mode {
            AttackMode::Oracle => {
                if v.teacher.is_none() {
                    return Err(Error::InvalidArgument("oracle mode requires a teacher".into()));
                }
                Ok(Self { logits: None, label: None })
            }
            AttackMode::Data => {
                let logits = v.teacher.map(|t| t.predict(x)).transpose()?;
                let label = v.label.or_else(|| logits.as_deref().map(argmax));
                if label.is_none() {
                    return Err(Error::InvalidArgument("data mode requires a teacher or a label".into()));
                }
                if logits.is_none() && matches!(spec.loss, AttackLoss::L2Logits | AttackLoss::LinfLogitGap) {
                    return Err(Error::InvalidArgument(format!("{:?} in data mode requires a teacher", spec.loss)));
                }
                Ok(Self { logits, label })
            }
        }
    }
}

/// Objective value and, when `want_grad`, its input gradient at `x`.
fn objective(v: &Victim, x: &[f64], spec: &AttackSpec, r: &Reference, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    let st = v.student.forward(x)?;
    let s = st.logits();
    let tt = match spec.mode {
        AttackMode::Oracle => Some(v.teacher.expect("checked").forward(x)?),
        AttackMode::Data => None,
    };
    let t_logits: Option<&[f64]> = tt.as_ref().map(|t| t.logits()).or(r.logits.as_deref());
    let label = || r.label.unwrap_or_else(|| argmax(t_logits.expect("teacher")));
    // dlogits for the student; the teacher side (oracle only) receives its negation
    let (value, ds, through_teacher) = match spec.loss {
        AttackLoss::L2Logits => {
            let (l, g) = l2_logits(s, t_logits.expect("checked"));
            (l, g, true)
        }
        AttackLoss::LinfLogitGap => {
            let diff: Vec<f64> = s.iter().zip(t_logits.expect("checked")).map(|(a, b)| a - b).collect();
            let k = argmax(&diff.iter().map(|d| d.abs()).collect::<Vec<_>>());
            let mut g = vec![0.0; diff.len()];
            g[k] = if diff[k] > 0.0 { 1.0 } else if diff[k] < 0.0 { -1.0 } else { 0.0 };
            (diff[k].abs(), g, true)
        }
        AttackLoss::CrossEntropy => {
            let (l, g) = cross_entropy(s, label());
            (l, g, false)
        }
        AttackLoss::CwMargin => {
            let y = label();
            let (m, other) = cw_margin(s, y, spec.kappa)?;
            let mut g = vec![0.0; s.len()];
            if s[y] - s[other] > -spec.kappa {
                g[y] = -1.0;
                g[other] = 1.0;
            }
            (-m, g, false)
        }
    };
    if !want_grad {
        return Ok((value, Vec::new()));
    }
    let mut grad = v.student.backward(&st, &ds, false)?.input_grad;
    if let (Some(tt), true) = (tt.as_ref(), through_teacher) {
        let gt = v.teacher.expect("checked").backward(tt, &ds, false)?.input_grad;
        grad.iter_mut().zip(gt).for_each(|(a, b)| *a -= b);
    }
    Ok((value, grad))
}

/// Euclidean projection of `v` onto the ℓ1 ball of radius `eps`
/// (sort-and-threshold).
pub fn project_l1(v: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    if total <= eps {
        return v.to_vec();
    }
    if eps <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - eps) / (i + 1) as f64;
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|x| x.signum() * (x.abs() - theta).max(0.0)).collect()
}

/// Projects a perturbation onto the ε-ball of the given norm.
pub fn project_ball(delta: &[f64], norm: Norm, eps: f64) -> Vec<f64> {
    match norm {
        Norm::Linf => delta.iter().map(|d| d.clamp(-eps, eps)).collect(),
        Norm::L2 => {
            let n = norm2(delta);
            if n <= eps {
                delta.to_vec()
            } else {
                delta.iter().map(|d| d * (eps / n)).collect()
            }
        }
        Norm::L1 => project_l1(delta, eps),
    }
}

fn step_direction(g: &[f64], norm: Norm) -> Vec<f64> {
    match norm {
        Norm::Linf => g.iter().map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }).collect(),
        Norm::L2 => {
            let n = norm2(g);
            if n == 0.0 {
                vec![0.0; g.len()]
            } else {
                g.iter().map(|v| v / n).collect()
            }
        }
        Norm::L1 => {
            let mut d = vec![0.0; g.len()];
            let i = argmax(&g.iter().map(|v| v.abs()).collect::<Vec<_>>());
            if !g.is_empty() && g[i] != 0.0 {
                d[i] = g[i].signum();
            }
            d
        }
    }
}

fn random_start(n: usize, norm: Norm, eps: f64, rng: &mut RngState) -> Vec<f64> {
    match norm {
        Norm::Linf => (0..n).map(|_| rng.uniform_range(-eps, eps)).collect(),
        Norm::L2 => {
            let r = eps * rng.uniform();
            rng.unit_vector(n).into_iter().map(|v| v * r).collect()
        }
        Norm::L1 => {
            // Laplace draws normalized to the ℓ1 sphere
            let lap: Vec<f64> = (0..n).map(|_| -rng.uniform().max(f64::MIN_POSITIVE).ln() * if rng.uniform() < 0.5 { -1.0 } else { 1.0 }).collect();
            let s: f64 = lap.iter().map(|v| v.abs()).sum();
            let r = eps * rng.uniform();
            lap.into_iter().map(|v| v * r / s).collect()
        }
    }
}

fn clip(x: &mut [f64], range: Option<(f64, f64)>) {
    if let Some((lo, hi)) = range {
        x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }
}

/// Projected gradient ascent of the spec's objective inside B(x, ε) ∩ clip box.
pub fn pgd(victim: &Victim, x: &[f64], spec: &AttackSpec, rng: &mut RngState) -> Result<AdvResult> {
    spec.validate()?;
    if x.len() != victim.student.input_len() {
        return Err(crate::error::shape_err(format!("{} inputs", victim.student.input_len()), format!("{}", x.len())));
    }
    if let Some((lo, hi)) = spec.clip {
        if x.iter().any(|v| *v < lo || *v > hi) {
            return Err(Error::InvalidArgument(format!("clean input lies outside the clip range ({lo}, {hi})")));
        }
    }
    let reference = Reference::new(victim, x, spec)?;
    let mut cur = x.to_vec();
    let eps = spec.epsilon;
    if spec.random_init && eps > 0.0 {
        let d = random_start(x.len(), spec.norm, eps, rng);
        cur.iter_mut().zip(d).for_each(|(c, v)| *c += v);
        clip(&mut cur, spec.clip);
    }
    let mut trace = Vec::with_capacity(spec.iterations);
    for _ in 0..spec.iterations {
        let (value, g) = objective(victim, &cur, spec, &reference, true)?;
        trace.push(value);
        let dir = step_direction(&g, spec.norm);
        let delta: Vec<f64> = cur.iter().zip(&dir).zip(x).map(|((c, d), x0)| c + spec.step_size * d - x0).collect();
        let delta = project_ball(&delta, spec.norm, eps);
        cur = x.iter().zip(delta).map(|(a, b)| a + b).collect();
        clip(&mut cur, spec.clip);
    }
    let (final_loss, _) = objective(victim, &cur, spec, &reference, false)?;
    Ok(AdvResult { x_adv: cur, loss_trace: trace, final_loss, subspace_distance: None })
}

/// Objective of `spec` at `x_eval`, with clean-point references taken at `x`.
pub fn evaluate_objective(victim: &Victim, x: &[f64], x_eval: &[f64], spec: &AttackSpec) -> Result<f64> {
    let reference = Reference::new(victim, x, spec)?;
    Ok(objective(victim, x_eval, spec, &reference, false)?.0)
}

/// One ℓ∞ sign step of size ε from the clean point.
pub fn fgsm(victim: &Victim, x: &[f64], epsilon: f64, mode: AttackMode, loss: AttackLoss) -> Result<AdvResult> {
    pgd(victim, x, &AttackSpec::fgsm(epsilon, mode, loss), &mut RngState::new(0))
}

/// ℓ∞ attack maximizing max_k |s_k(x+δ) − t_k(x+δ)|.
pub fn ccat_confidence_attack(student: &Network, teacher: &Network, x: &[f64], spec: &AttackSpec, rng: &mut RngState) -> Result<AdvResult> {
    let spec = AttackSpec { norm: Norm::Linf, loss: AttackLoss::LinfLogitGap, mode: AttackMode::Oracle, ..spec.clone() };
    pgd(&Victim::new(student, teacher), x, &spec, rng)
}
