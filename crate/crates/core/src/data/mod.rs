//! Data sources: synthetic low-rank inputs, CIFAR-10 binaries, patches and
//! augmentation.

mod images;
mod synthetic;

pub use images::*;
pub use synthetic::*;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matmul, pca_fit, OffsetMode, Tensor};

    /// Principal angles between the PCA estimate and the generating basis.
    #[test]
    fn pca_recovers_generating_subspace() {
        let mut spec = SyntheticSpec::ball(10, 4, 1.0, 5000, 31);
        spec.offset = vec![0.3; 10];
        let (x, truth) = gen_synthetic(&spec).unwrap();
        let est = pca_fit(&x, OffsetMode::Mean).unwrap().truncate(4).unwrap();
        let m: Tensor = matmul(&truth.u.transpose(), &est.u).unwrap();
        // singular values of UᵀÛ are the cosines of the principal angles
        let (s2, _) = crate::numerics::jacobi_eigh(&matmul(&m.transpose(), &m).unwrap()).unwrap();
        for v in s2 {
            let angle = v.clamp(0.0, 1.0).sqrt().acos();
            assert!(angle < 0.05, "principal angle {angle}");
        }
        assert_eq!(est.rank(), 4);
    }
}
