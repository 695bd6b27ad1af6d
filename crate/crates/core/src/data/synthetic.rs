use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{orthonormalize, RngState, SubspaceBasis, Tensor};

/// Region inside the subspace, expressed in subspace coordinates and
/// centered at the origin of those coordinates (i.e. at x₀).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Ball { radius: f64 },
    Box { half_widths: Vec<f64> },
}

impl Region {
    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            Region::Ball { radius } => y.iter().map(|v| v * v).sum::<f64>() <= radius * radius,
            Region::Box { half_widths } => y.iter().zip(half_widths).all(|(v, h)| v.abs() <= *h),
        }
    }

    /// Largest distance from the region center to any region point.
    pub fn extent(&self) -> f64 {
        match self {
            Region::Ball { radius } => *radius,
            Region::Box { half_widths } => half_widths.iter().map(|h| h * h).sum::<f64>().sqrt(),
        }
    }

    fn sample(&self, dim: usize, rng: &mut RngState) -> Vec<f64> {
        match self {
            Region::Ball { radius } => rng.in_ball(dim, *radius),
            Region::Box { half_widths } => half_widths.iter().map(|h| rng.uniform_range(-h, *h)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub ambient_dim: usize,
    pub subspace_dim: usize,
    pub region: Region,
    /// Defaults to the origin when empty.
    #[serde(default)]
    pub offset: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn ball(ambient_dim: usize, subspace_dim: usize, radius: f64, samples: usize, seed: u64) -> Self {
        Self { ambient_dim, subspace_dim, region: Region::Ball { radius }, offset: Vec::new(), samples, seed }
    }

    fn validate(&self) -> Result<()> {
        let (d, k) = (self.ambient_dim, self.subspace_dim);
        if k == 0 || k > d {
            return Err(Error::InvalidArgument(format!("subspace dim {k} must be in 1..={d}")));
        }
        let ok = match &self.region {
            Region::Ball { radius } => *radius > 0.0,
            Region::Box { half_widths } => half_widths.len() == k && half_widths.iter().all(|h| *h > 0.0),
        };
        if !ok {
            return Err(Error::InvalidArgument(format!("bad region {:?}", self.region)));
        }
        if !self.offset.is_empty() && self.offset.len() != d {
            return Err(Error::InvalidArgument(format!("offset length {} != {d}", self.offset.len())));
        }
        Ok(())
    }
}

/// Samples x = U y + x₀ with y uniform in the region, and the exact basis.
///
/// When `subspace_dim == ambient_dim` the basis is the identity, so full-rank
/// data live in raw coordinates.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Tensor, SubspaceBasis)> {
    spec.validate()?;
    let (d, k) = (spec.ambient_dim, spec.subspace_dim);
    let mut rng = RngState::stream(spec.seed, 0);
    let cols: Vec<Vec<f64>> = if k == d {
        (0..d).map(|i| (0..d).map(|r| if r == i { 1.0 } else { 0.0 }).collect()).collect()
    } else {
        loop {
            let raw: Vec<Vec<f64>> = (0..k).map(|_| rng.normal_vec(d)).collect();
            let q = orthonormalize(&raw);
            if q.len() == k {
                break q;
            }
        }
    };
    let mut u = vec![0.0; d * k];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d {
            u[i * k + j] = c[i];
        }
    }
    let offset = if spec.offset.is_empty() { vec![0.0; d] } else { spec.offset.clone() };
    let mut eig = vec![0.0; d];
    eig[..k].iter_mut().for_each(|v| *v = 1.0);
    let basis = SubspaceBasis::new(Tensor::new(vec![d, k], u)?, offset, eig)?;
    let mut data = Vec::with_capacity(spec.samples * d);
    let mut srng = RngState::stream(spec.seed, 1);
    for _ in 0..spec.samples {
        let y = spec.region.sample(k, &mut srng);
        let x = basis.lift(&y);
        data.extend(x.iter().zip(&basis.offset).map(|(a, b)| a + b));
    }
    Ok((Tensor::new(vec![spec.samples, d], data)?, basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{pca_fit, OffsetMode};

    #[test]
    fn samples_lie_in_subspace() {
        let mut spec = SyntheticSpec::ball(10, 4, 1.0, 200, 3);
        spec.offset = (0..10).map(|i| 0.1 * i as f64).collect();
        let (x, basis) = gen_synthetic(&spec).unwrap();
        for i in 0..x.rows() {
            assert!(basis.distance(x.row(i)).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn full_rank_ball_gives_full_spectrum() {
        let (x, _) = gen_synthetic(&SyntheticSpec::ball(3, 3, 1.0, 500, 1)).unwrap();
        let b = pca_fit(&x, OffsetMode::Mean).unwrap();
        assert!(b.eigenvalues.iter().all(|&v| v > 1e-2));
    }

    #[test]
    fn deterministic_under_seed() {
        let s = SyntheticSpec::ball(6, 2, 2.0, 50, 99);
        assert_eq!(gen_synthetic(&s).unwrap(), gen_synthetic(&s).unwrap());
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(gen_synthetic(&SyntheticSpec::ball(3, 4, 1.0, 5, 0)).is_err());
        assert!(gen_synthetic(&SyntheticSpec::ball(3, 2, 0.0, 5, 0)).is_err());
    }
}
