use serde::{Deserialize, Serialize};

use crate::data::Region;
use crate::error::{Error, Result};
use crate::numerics::{dot, norm2, RngState, SubspaceBasis};

/// A node's boundary w̃ᵀx + b = 0 restricted to the subspace, in subspace
/// coordinates y (x = U y + x₀): the plane nᵀy = δ with unit n.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSection {
    pub normal: Vec<f64>,
    pub delta: f64,
}

/// Reduced weight (Uᵀw̃, w̃ᵀx₀ + b) of an augmented weight [w̃; b].
pub fn reduce(weight: &[f64], basis: &SubspaceBasis) -> Result<(Vec<f64>, f64)> {
    let d = basis.ambient_dim();
    if weight.len() != d + 1 {
        return Err(crate::error::shape_err(format!("augmented weight of length {}", d + 1), format!("{}", weight.len())));
    }
    let kernel = &weight[..d];
    Ok((basis.coords(kernel)?, dot(kernel, &basis.offset) + weight[d]))
}

impl PlaneSection {
    /// `None` when the kernel is orthogonal to the subspace, so the node is
    /// constant there and has no boundary inside it.
    pub fn of(weight: &[f64], basis: &SubspaceBasis) -> Result<Option<Self>> {
        let (a, b) = reduce(weight, basis)?;
        let n = norm2(&a);
        if n == 0.0 {
            return Ok(None);
        }
        Ok(Some(Self { normal: a.iter().map(|v| v / n).collect(), delta: -b / n }))
    }

    pub fn foot(&self) -> Vec<f64> {
        self.normal.iter().map(|v| v * self.delta).collect()
    }

    /// Uniform point of the plane within `radius` of the foot point.
    fn sample_disk(&self, radius: f64, rng: &mut RngState) -> Vec<f64> {
        let dim = self.normal.len();
        let mut y = self.foot();
        if dim == 1 {
            return y;
        }
        let dir = loop {
            let mut g = rng.normal_vec(dim);
            let p = dot(&g, &self.normal);
            g.iter_mut().zip(&self.normal).for_each(|(a, n)| *a -= p * n);
            let n = norm2(&g);
            if n > 1e-12 {
                break g.into_iter().map(|v| v / n).collect::<Vec<_>>();
            }
        };
        let r = radius * rng.uniform().powf(1.0 / (dim - 1) as f64);
        y.iter_mut().zip(&dir).for_each(|(a, u)| *a += r * u);
        y
    }
}

/// Outcome of the observation test ∂E_j ∩ E_k ≠ ∅ within the data region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub observed: bool,
    /// The boundary misses the region, so nothing could be probed.
    pub empty: bool,
    /// Probes that landed inside the region.
    pub probes: usize,
}

/// Samples `n_probe` points of the boundary of `boundary` inside the region
/// (rejection sampling in subspace coordinates) and reports whether any lies
/// in the active region w_kᵀx ≥ 0 of `observer`. Both weights are augmented.
pub fn check_observation(
    boundary: &[f64],
    observer: &[f64],
    basis: &SubspaceBasis,
    region: &Region,
    n_probe: usize,
    rng: &mut RngState,
) -> Result<Observation> {
    let d = basis.ambient_dim();
    if observer.len() != d + 1 {
        return Err(crate::error::shape_err(format!("augmented weight of length {}", d + 1), format!("{}", observer.len())));
    }
    let none = Observation { observed: false, empty: true, probes: 0 };
    let Some(plane) = PlaneSection::of(boundary, basis)? else { return Ok(none) };
    let extent = region.extent();
    if plane.delta.abs() > extent {
        return Ok(none);
    }
    let radius = (extent * extent - plane.delta * plane.delta).sqrt();
    let (kernel, bias) = (&observer[..d], observer[d]);
    let mut probes = 0;
    for _ in 0..n_probe {
        let y = plane.sample_disk(radius, rng);
        if !region.contains(&y) {
            continue;
        }
        probes += 1;
        let x: Vec<f64> = basis.lift(&y).iter().zip(&basis.offset).map(|(a, b)| a + b).collect();
        let z = dot(kernel, &x) + bias;
        let tol = 1e-12 * (norm2(kernel) * norm2(&x) + bias.abs());
        if z >= -tol {
            return Ok(Observation { observed: true, empty: false, probes });
        }
    }
    Ok(Observation { observed: false, empty: probes == 0, probes })
}

/// Radius of the largest ball of the boundary plane inside a ball region:
/// √(r₀² − δ²), or 0 when the plane misses the ball.
pub fn inscribed_radius(weight: &[f64], basis: &SubspaceBasis, region: &Region) -> Result<f64> {
    let Region::Ball { radius } = region else {
        return Err(Error::InvalidArgument("analytic inscribed radius needs a ball region".into()));
    };
    Ok(match PlaneSection::of(weight, basis)? {
        Some(p) if p.delta.abs() < *radius => (radius * radius - p.delta * p.delta).sqrt(),
        _ => 0.0,
    })
}

/// Membership-only estimate for any region: probes cover a plane disk 25%
/// wider than the region, the ball is centered at the centroid of the probes
/// that land inside, and its radius is the nearest boundary crossing found
/// by bisecting towards every probe that landed outside.
pub fn inscribed_radius_sampled(
    weight: &[f64],
    basis: &SubspaceBasis,
    region: &Region,
    n_probe: usize,
    rng: &mut RngState,
) -> Result<f64> {
    let Some(plane) = PlaneSection::of(weight, basis)? else { return Ok(0.0) };
    let reach = 1.25 * region.extent();
    if plane.delta.abs() >= reach {
        return Ok(0.0);
    }
    let disk = (reach * reach - plane.delta * plane.delta).sqrt();
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for _ in 0..n_probe {
        let y = plane.sample_disk(disk, rng);
        if region.contains(&y) {
            inside.push(y);
        } else {
            outside.push(y);
        }
    }
    if inside.is_empty() {
        return Ok(0.0);
    }
    let dim = plane.normal.len();
    let mut center = vec![0.0; dim];
    for y in &inside {
        center.iter_mut().zip(y).for_each(|(c, v)| *c += v / inside.len() as f64);
    }
    if !region.contains(&center) {
        let dist = |y: &Vec<f64>| norm2(&y.iter().zip(&center).map(|(a, b)| a - b).collect::<Vec<_>>());
        center = inside.iter().min_by(|a, b| dist(a).total_cmp(&dist(b))).cloned().expect("non-empty");
    }
    let foot = plane.foot();
    let off: Vec<f64> = center.iter().zip(&foot).map(|(a, b)| a - b).collect();
    let mut r = disk - norm2(&off);
    let mut rays: Vec<(f64, Vec<f64>)> = outside
        .iter()
        .map(|o| {
            let dir: Vec<f64> = o.iter().zip(&center).map(|(a, b)| a - b).collect();
            (norm2(&dir), dir)
        })
        .collect();
    rays.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (len, dir) in rays {
        // the crossing lies within the probe's own distance
        if len >= r {
            break;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            let p: Vec<f64> = center.iter().zip(&dir).map(|(c, u)| c + mid * u).collect();
            if region.contains(&p) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        r = r.min(lo * len);
    }
    Ok(r.max(0.0))
}

/// Largest ‖y‖ over the boundary section inside the region (M₀). Exact for
/// balls; for boxes the region's extent, which bounds it from above.
pub fn section_max_norm(weight: &[f64], basis: &SubspaceBasis, region: &Region) -> Result<f64> {
    let Some(p) = PlaneSection::of(weight, basis)? else { return Ok(0.0) };
    Ok(if p.delta.abs() <= region.extent() { region.extent() } else { 0.0 })
}

/// Inscribed radius of the boundary section: analytic for balls, sampled with
/// 10⁵ probes otherwise.
pub fn section_radius(weight: &[f64], basis: &SubspaceBasis, region: &Region, seed: u64) -> Result<f64> {
    match region {
        Region::Ball { .. } => inscribed_radius(weight, basis, region),
        Region::Box { .. } => inscribed_radius_sampled(weight, basis, region, 100_000, &mut RngState::new(seed)),
    }
}

/// M = (10/r)·√(dim/2π); infinite for r = 0.
pub fn bound_constant(r: f64, dim: usize) -> f64 {
    if r <= 0.0 {
        return f64::INFINITY;
    }
    10.0 / r * (dim as f64 / (2.0 * std::f64::consts::PI)).sqrt()
}
