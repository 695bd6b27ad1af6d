//! Scalar losses over logits, each returning (value, ∂value/∂logits).

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// ½‖s − t‖² and its gradient w.r.t. `s` (the gradient w.r.t. `t` is the negation).
pub fn l2_logits(s: &[f64], t: &[f64]) -> (f64, Vec<f64>) {
    let g: Vec<f64> = s.iter().zip(t).map(|(a, b)| a - b).collect();
    (0.5 * g.iter().map(|v| v * v).sum::<f64>(), g)
}

/// Cross-entropy of softmax(z) against a hard label.
pub fn cross_entropy(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut p = softmax(z);
    let loss = -p[label].max(f64::MIN_POSITIVE).ln();
    p[label] -= 1.0;
    (loss, p)
}

/// Cross-entropy of softmax(z) against a probability vector.
pub fn soft_cross_entropy(z: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let p = softmax(z);
    let loss = -target.iter().zip(&p).map(|(t, q)| if *t > 0.0 { t * q.max(f64::MIN_POSITIVE).ln() } else { 0.0 }).sum::<f64>();
    let tsum: f64 = target.iter().sum();
    let g = p.iter().zip(target).map(|(q, t)| tsum * q - t).collect();
    (loss, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    #[test]
    fn gradients_match_finite_differences() {
        let z = [0.3, -1.2, 2.0, 0.1];
        let fd = finite_diff_grad(|z| cross_entropy(z, 2).0, &z, 1e-6);
        for (a, b) in cross_entropy(&z, 2).1.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
        let tgt = [0.1, 0.2, 0.6, 0.1];
        let fd = finite_diff_grad(|z| soft_cross_entropy(z, &tgt).0, &z, 1e-6);
        for (a, b) in soft_cross_entropy(&z, &tgt).1.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn argmax_takes_first_of_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
