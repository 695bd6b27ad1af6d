use super::{evaluate_objective, pgd, AdvResult, AttackLoss, AttackMode, AttackSpec, Norm, Victim};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::numerics::RngState;

/// A named adversarial-example generator.
pub trait Attack: Send + Sync {
    fn name(&self) -> &str;
    /// The effective spec after the variant's overrides.
    fn spec(&self) -> &AttackSpec;
    fn run(&self, victim: &Victim, x: &[f64], rng: &mut RngState) -> Result<AdvResult>;
}

/// PGD with a fixed effective spec; every registered variant is one of these.
#[derive(Debug, Clone)]
pub struct SpecAttack {
    name: &'static str,
    spec: AttackSpec,
}

impl Attack for SpecAttack {
    fn name(&self) -> &str {
        self.name
    }

    fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    fn run(&self, victim: &Victim, x: &[f64], rng: &mut RngState) -> Result<AdvResult> {
        pgd(victim, x, &self.spec, rng)
    }
}

type Factory = fn(&AttackSpec) -> AttackSpec;

const REGISTRY: &[(&str, Factory)] = &[
    ("pgd-linf", |s| AttackSpec { norm: Norm::Linf, ..s.clone() }),
    ("pgd-l2", |s| AttackSpec { norm: Norm::L2, ..s.clone() }),
    ("pgd-l1", |s| AttackSpec { norm: Norm::L1, ..s.clone() }),
    ("fgsm", |s| AttackSpec { clip: s.clip, kappa: s.kappa, ..AttackSpec::fgsm(s.epsilon, s.mode, s.loss) }),
    ("cw", |s| AttackSpec { norm: Norm::L2, loss: AttackLoss::CwMargin, ..s.clone() }),
    ("ccat", |s| AttackSpec { norm: Norm::Linf, loss: AttackLoss::LinfLogitGap, mode: AttackMode::Oracle, ..s.clone() }),
];

pub fn attack_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|(n, _)| *n).collect()
}

/// Builds a registered attack; `base` supplies budget, step, iterations and
/// any fields the variant does not pin.
pub fn make_attack(name: &str, base: &AttackSpec) -> Result<Box<dyn Attack>> {
    let (name, f) = REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::UnknownStrategy { kind: "attack", name: name.to_string() })?;
    let spec = f(base);
    spec.validate()?;
    Ok(Box::new(SpecAttack { name, spec }))
}

/// Black-box transfer: the inner attack runs against an independently
/// trained surrogate; the reported loss is re-evaluated on the victim.
pub struct TransferAttack {
    pub surrogate: Network,
    pub inner: Box<dyn Attack>,
}

impl Attack for TransferAttack {
    fn name(&self) -> &str {
        "transfer"
    }

    fn spec(&self) -> &AttackSpec {
        self.inner.spec()
    }

    fn run(&self, victim: &Victim, x: &[f64], rng: &mut RngState) -> Result<AdvResult> {
        let on_surrogate = Victim { student: &self.surrogate, ..*victim };
        let mut res = self.inner.run(&on_surrogate, x, rng)?;
        res.final_loss = evaluate_objective(victim, x, &res.x_adv, self.inner.spec())?;
        Ok(res)
    }
}

/// Generates adversarial examples against `surrogate` and applies them to the victim.
pub fn transfer_attack(surrogate: &Network, victim: &Victim, x: &[f64], spec: &AttackSpec, rng: &mut RngState) -> Result<AdvResult> {
    let t = TransferAttack { surrogate: surrogate.clone(), inner: Box::new(SpecAttack { name: "pgd", spec: spec.clone() }) };
    t.run(victim, x, rng)
}
