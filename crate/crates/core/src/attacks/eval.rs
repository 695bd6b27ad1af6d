use super::{pgd, AdvResult, Attack, AttackSpec, Victim};
use crate::error::{Error, Result};
use crate::network::loss::argmax;
use crate::network::Network;
use crate::numerics::{RngState, SubspaceBasis, Tensor};

/// Orders two attack results by distance to the subspace; ties go to `first`.
pub fn split_by_distance(mut first: AdvResult, mut second: AdvResult, basis: &SubspaceBasis) -> Result<(AdvResult, AdvResult)> {
    let d1 = basis.distance(&first.x_adv)?;
    let d2 = basis.distance(&second.x_adv)?;
    first.subspace_distance = Some(d1);
    second.subspace_distance = Some(d2);
    Ok(if d2 < d1 { (second, first) } else { (first, second) })
}

/// Two PGD runs with independent random starts; the one closer to the
/// subspace is returned first as the in-plane example.
pub fn in_out_plane_split(
    victim: &Victim,
    x: &[f64],
    spec: &AttackSpec,
    basis: &SubspaceBasis,
    rng: &mut RngState,
) -> Result<(AdvResult, AdvResult)> {
    let spec = AttackSpec { random_init: true, ..spec.clone() };
    let a = pgd(victim, x, &spec, &mut RngState::new(rng.next_u64()))?;
    let b = pgd(victim, x, &spec, &mut RngState::new(rng.next_u64()))?;
    split_by_distance(a, b, basis)
}

/// Fraction of rows whose adversarial example keeps student and teacher
/// argmax in agreement. Sample `i` uses random stream `i` of `seed`.
pub fn robust_accuracy(student: &Network, teacher: &Network, inputs: &Tensor, attack: &dyn Attack, seed: u64) -> Result<f64> {
    if inputs.rows() == 0 {
        return Err(Error::InvalidArgument("robust accuracy of an empty dataset".into()));
    }
    let victim = Victim::new(student, teacher);
    let mut agree = 0usize;
    for i in 0..inputs.rows() {
        let mut rng = RngState::stream(seed, i as u64);
        let adv = attack.run(&victim, inputs.row(i), &mut rng)?;
        if argmax(&student.predict(&adv.x_adv)?) == argmax(&teacher.predict(&adv.x_adv)?) {
            agree += 1;
        }
    }
    Ok(agree as f64 / inputs.rows() as f64)
}

/// Clean argmax agreement between student and teacher.
pub fn clean_agreement(student: &Network, teacher: &Network, inputs: &Tensor) -> Result<f64> {
    if inputs.rows() == 0 {
        return Err(Error::InvalidArgument("agreement of an empty dataset".into()));
    }
    let mut agree = 0usize;
    for i in 0..inputs.rows() {
        let x = inputs.row(i);
        if argmax(&student.predict(x)?) == argmax(&teacher.predict(x)?) {
            agree += 1;
        }
    }
    Ok(agree as f64 / inputs.rows() as f64)
}
