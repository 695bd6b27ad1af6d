use super::rft::{gen_robust_feature, RftConfig, RftInit};
use crate::attacks::{ccat_confidence_attack, pgd, AttackMode, AttackSpec, Norm, Victim};
use crate::error::{Error, Result};
use crate::network::loss::{argmax, cross_entropy, l2_logits, soft_cross_entropy};
use crate::network::{Network, ParamGrads};
use crate::numerics::{RngState, Tensor};

/// A training objective: how one example turns into a loss and a parameter
/// gradient for the student.
pub trait TrainingRegime: Send + Sync {
    fn name(&self) -> &str;

    fn example(&self, student: &Network, teacher: &Network, x: &[f64], rng: &mut RngState) -> Result<(f64, ParamGrads)>;

    /// Replaces the training inputs before the first epoch (robust-feature
    /// training); `None` keeps the original data.
    fn prepare_dataset(&self, _teacher: &Network, _data: &Tensor, _rng: &mut RngState) -> Result<Option<Tensor>> {
        Ok(None)
    }
}

fn grads_at(student: &Network, x: &[f64], dl: impl FnOnce(&[f64]) -> (f64, Vec<f64>)) -> Result<(f64, ParamGrads)> {
    let tr = student.forward(x)?;
    let (loss, g) = dl(tr.logits());
    let back = student.backward(&tr, &g, true)?;
    Ok((loss, back.params.expect("requested")))
}

/// ½‖s(x) − t‖² against fixed target logits.
pub(crate) fn logit_example(student: &Network, x: &[f64], target: &[f64]) -> Result<(f64, ParamGrads)> {
    grads_at(student, x, |s| l2_logits(s, target))
}

pub struct StLogit;

impl TrainingRegime for StLogit {
    fn name(&self) -> &str {
        "st_logit"
    }

    fn example(&self, student: &Network, teacher: &Network, x: &[f64], _rng: &mut RngState) -> Result<(f64, ParamGrads)> {
        logit_example(student, x, &teacher.predict(x)?)
    }
}

pub struct StLabel;

impl TrainingRegime for StLabel {
    fn name(&self) -> &str {
        "st_label"
    }

    fn example(&self, student: &Network, teacher: &Network, x: &[f64], _rng: &mut RngState) -> Result<(f64, ParamGrads)> {
        let y = argmax(&teacher.predict(x)?);
        grads_at(student, x, |s| cross_entropy(s, y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvTarget {
    /// Teacher output at the clean input.
    Label,
    /// Teacher output at the adversarial input.
    Teacher,
}

/// Adversarial training on oracle-adversarial examples.
pub struct Adversarial {
    pub target: AdvTarget,
    pub attack: AttackSpec,
}

impl TrainingRegime for Adversarial {
    fn name(&self) -> &str {
        match self.target {
            AdvTarget::Label => "at_label_target",
            AdvTarget::Teacher => "at_teacher_target",
        }
    }

    fn example(&self, student: &Network, teacher: &Network, x: &[f64], rng: &mut RngState) -> Result<(f64, ParamGrads)> {
        let adv = pgd(&Victim::new(student, teacher), x, &self.attack, rng)?;
        let target = match self.target {
            AdvTarget::Label => teacher.predict(x)?,
            AdvTarget::Teacher => teacher.predict(&adv.x_adv)?,
        };
        logit_example(student, &adv.x_adv, &target)
    }
}

/// λ(δ) = (1 − min(1, ‖δ‖∞/ε))^ρ, with λ = 1 for a zero budget.
pub fn ccat_lambda(delta_inf: f64, epsilon: f64, rho: f64) -> f64 {
    if epsilon == 0.0 {
        return 1.0;
    }
    (1.0 - (delta_inf / epsilon).min(1.0)).max(0.0).powf(rho)
}

/// A probability vector over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    pub probabilities: Vec<f64>,
}

impl SoftLabel {
    /// λ·onehot(y) + (1 − λ)/K.
    pub fn ccat(label: usize, lambda: f64, classes: usize) -> Result<Self> {
        if label >= classes || !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!("soft label for class {label}/{classes} with λ = {lambda}")));
        }
        let base = (1.0 - lambda) / classes as f64;
        let mut p = vec![base; classes];
        p[label] += lambda;
        let s = Self { probabilities: p };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        let sum: f64 = self.probabilities.iter().sum();
        if self.probabilities.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("not a probability vector (sum {sum})")));
        }
        Ok(())
    }
}

/// Confidence-calibrated adversarial training toward soft labels.
pub struct Ccat {
    pub rho: f64,
    pub attack: AttackSpec,
}

impl TrainingRegime for Ccat {
    fn name(&self) -> &str {
        "ccat"
    }

    fn example(&self, student: &Network, teacher: &Network, x: &[f64], rng: &mut RngState) -> Result<(f64, ParamGrads)> {
        let adv = ccat_confidence_attack(student, teacher, x, &self.attack, rng)?;
        let delta: Vec<f64> = adv.x_adv.iter().zip(x).map(|(a, b)| a - b).collect();
        let lambda = ccat_lambda(Norm::Linf.of(&delta), self.attack.epsilon, self.rho);
        let t = teacher.predict(x)?;
        let soft = SoftLabel::ccat(argmax(&t), lambda, t.len())?;
        grads_at(student, &adv.x_adv, |s| soft_cross_entropy(s, &soft.probabilities))
    }
}

/// Logit training on a robust-feature dataset generated from a reference model.
pub struct RobustFeature {
    pub reference: Network,
    pub config: RftConfig,
}

impl TrainingRegime for RobustFeature {
    fn name(&self) -> &str {
        "rft"
    }

    fn example(&self, student: &Network, teacher: &Network, x: &[f64], _rng: &mut RngState) -> Result<(f64, ParamGrads)> {
        logit_example(student, x, &teacher.predict(x)?)
    }

    fn prepare_dataset(&self, teacher: &Network, data: &Tensor, rng: &mut RngState) -> Result<Option<Tensor>> {
        let (n, d) = (data.rows(), data.cols());
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let init: Vec<f64> = match self.config.init {
                RftInit::Noise => match self.config.clip {
                    Some((lo, hi)) => (0..d).map(|_| rng.uniform_range(lo, hi)).collect(),
                    None => rng.normal_vec(d),
                },
                RftInit::RandomImage => data.row(rng.below(n)).to_vec(),
            };
            let r = gen_robust_feature(data.row(i), &init, &self.reference, teacher, &self.config)?;
            out.extend(r.x_r);
        }
        Ok(Some(Tensor::new(vec![n, d], out)?))
    }
}

/// Registered regime names.
pub const REGIMES: &[&str] = &["st_logit", "st_label", "at_label_target", "at_teacher_target", "ccat", "rft"];

/// Builds a regime by name. `reference` is the robust model robust-feature
/// training draws its representation from.
pub fn make_regime(name: &str, attack: &AttackSpec, rho: f64, rft: &RftConfig, reference: Option<&Network>) -> Result<Box<dyn TrainingRegime>> {
    let oracle = AttackSpec { mode: AttackMode::Oracle, ..attack.clone() };
    Ok(match name {
        "st_logit" => Box::new(StLogit),
        "st_label" => Box::new(StLabel),
        "at_label_target" => Box::new(Adversarial { target: AdvTarget::Label, attack: oracle }),
        "at_teacher_target" => Box::new(Adversarial { target: AdvTarget::Teacher, attack: oracle }),
        "ccat" => {
            if !(rho > 0.0) {
                return Err(Error::InvalidArgument(format!("ccat needs ρ > 0, got {rho}")));
            }
            Box::new(Ccat { rho, attack: oracle })
        }
        "rft" => {
            let reference = reference.ok_or_else(|| Error::InvalidArgument("rft requires a robust reference model".into()))?;
            Box::new(RobustFeature { reference: reference.clone(), config: rft.clone() })
        }
        other => return Err(Error::UnknownStrategy { kind: "training regime", name: other.to_string() }),
    })
}
