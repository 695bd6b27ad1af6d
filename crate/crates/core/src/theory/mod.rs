//! Numerical checks of projected specialization on synthetic two-layer
//! teacher-student instances with known input geometry.

mod bench;
mod geometry;
mod verify;

use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, Region, SyntheticSpec};
use crate::error::{Error, Result};
use crate::network::{DenseLayer, Layer, Network};
use crate::numerics::{norm2, RngState, SubspaceBasis, Tensor};

pub use bench::*;
pub use geometry::*;
pub use verify::*;

/// Parameters of a synthetic benchmark instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceConfig {
    pub ambient_dim: usize,
    pub subspace_dim: usize,
    pub teacher_nodes: usize,
    pub student_nodes: usize,
    pub outputs: usize,
    pub samples: usize,
    pub radius: f64,
    pub bias: bool,
    /// Teacher biases are drawn from ±bias_spread·radius.
    pub bias_spread: f64,
    /// Largest |cos| allowed between two teacher weights.
    pub max_teacher_cos: f64,
    pub seed: u64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self::full_rank()
    }
}

impl InstanceConfig {
    pub fn full_rank() -> Self {
        Self {
            ambient_dim: 6,
            subspace_dim: 6,
            teacher_nodes: 3,
            student_nodes: 6,
            outputs: 2,
            samples: 4096,
            radius: 1.0,
            bias: true,
            bias_spread: 0.5,
            max_teacher_cos: 0.9,
            seed: 0,
        }
    }

    /// K = 2K* without biases: every boundary passes through the ball's
    /// center, so each student node is observed with the full radius.
    pub fn over_realized() -> Self {
        Self { bias: false, ..Self::full_rank() }
    }

    pub fn low_rank() -> Self {
        Self { ambient_dim: 10, subspace_dim: 4, bias: false, ..Self::full_rank() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.teacher_nodes == 0 || self.student_nodes == 0 || self.outputs == 0 || self.samples == 0 {
            return Err(Error::InvalidArgument("instance sizes must be ≥ 1".into()));
        }
        if !(self.radius > 0.0) || !(0.0..1.0).contains(&self.bias_spread) || !(self.max_teacher_cos > 0.0 && self.max_teacher_cos < 1.0) {
            return Err(Error::InvalidArgument(format!("bad instance geometry {self:?}")));
        }
        Ok(())
    }
}

/// A teacher, an untrained student and data on a known subspace.
#[derive(Debug, Clone)]
pub struct TheoryInstance {
    pub teacher: Network,
    pub student: Network,
    /// The student before training.
    pub initial: Network,
    pub data: Tensor,
    pub basis: SubspaceBasis,
    pub region: Region,
}

fn two_layer(d: usize, w: Vec<f64>, b: Vec<f64>, v: Vec<f64>, vb: Vec<f64>, bias: bool) -> Result<Network> {
    let k = b.len();
    let c = vb.len();
    let l1 = DenseLayer { out_dim: k, in_dim: d, weight: w, bias: b, has_bias: bias };
    let l2 = DenseLayer { out_dim: c, in_dim: k, weight: v, bias: vb, has_bias: bias };
    Network::new(vec![d], vec![Layer::Dense(l1), Layer::Dense(l2)])
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

impl TheoryInstance {
    pub fn generate(cfg: &InstanceConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = SyntheticSpec::ball(cfg.ambient_dim, cfg.subspace_dim, cfg.radius, cfg.samples, cfg.seed);
        let (data, basis) = gen_synthetic(&spec)?;
        let (d, dp, ks, c) = (cfg.ambient_dim, cfg.subspace_dim, cfg.teacher_nodes, cfg.outputs);
        let mut rng = RngState::stream(cfg.seed, 10);
        // kernels live in the subspace with unit length there
        let teacher = loop {
            let mut w = Vec::with_capacity(ks * d);
            let mut b = Vec::with_capacity(ks);
            for _ in 0..ks {
                w.extend(basis.lift(&rng.unit_vector(dp)));
                b.push(if cfg.bias { rng.uniform_range(-cfg.bias_spread, cfg.bias_spread) * cfg.radius } else { 0.0 });
            }
            let aug: Vec<Vec<f64>> = (0..ks).map(|j| {
                let mut a = w[j * d..(j + 1) * d].to_vec();
                a.push(b[j]);
                a
            }).collect();
            let separated = (0..ks).all(|i| (i + 1..ks).all(|j| cosine(&aug[i], &aug[j]).abs() <= cfg.max_teacher_cos));
            if separated {
                let v = rng.normal_vec(c * ks);
                let vb = if cfg.bias { rng.normal_vec(c).iter().map(|x| 0.1 * x).collect() } else { vec![0.0; c] };
                break two_layer(d, w, b, v, vb, cfg.bias)?;
            }
        };
        let student = Network::dense(&[d, cfg.student_nodes, c], cfg.bias, &mut RngState::stream(cfg.seed, 11))?;
        Ok(Self { teacher, initial: student.clone(), student, data, basis, region: spec.region })
    }

    /// Generates the instance and trains its student with `trainer`.
    pub fn trained(cfg: &InstanceConfig, trainer: &BenchTrainer) -> Result<(Self, BenchOutcome)> {
        let mut inst = Self::generate(cfg)?;
        let outcome = trainer.train(&inst.student, &inst.teacher, &inst.data)?;
        inst.student = outcome.student.clone();
        Ok((inst, outcome))
    }

    /// The same instance with another student.
    pub fn with_student(&self, student: Network) -> Self {
        Self { student, ..self.clone() }
    }
}
