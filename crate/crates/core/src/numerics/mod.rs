//! Dense numerics shared by every other module: a row-major tensor, a seeded
//! counter-based RNG, symmetric eigendecomposition / PCA, subspace
//! projections and central finite differences.

mod gradcheck;
mod linalg;
mod rng;
mod tensor;

pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use linalg::{
    dot, gram_schmidt_complete, jacobi_eigh, mat_vec, matmul, norm2, norm_inf, orthonormalize,
    pca_fit, solve, OffsetMode, SubspaceBasis,
};
pub use rng::RngState;
pub use tensor::Tensor;
