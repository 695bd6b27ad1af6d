//! Neuron specialization metrics between student and teacher hidden nodes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::network::Network;
use crate::numerics::{norm2, SubspaceBasis, Tensor};

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn correlation(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() {
        return Err(shape_err(format!("{} values", xs.len()), format!("{}", ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two samples".into()));
    }
    // a rounded mean can leave a constant vector with a tiny spread
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(xs) || constant(ys) {
        return Ok(None);
    }
    let (mx, sx) = mean_std(xs);
    let (my, sy) = mean_std(ys);
    if sx == 0.0 || sy == 0.0 {
        return Ok(None);
    }
    let n = xs.len() as f64;
    let r = xs.iter().zip(ys).map(|(x, y)| ((x - mx) / sx) * ((y - my) / sy)).sum::<f64>() / n;
    Ok(Some(r.clamp(-1.0, 1.0)))
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    correlation(xs, ys)?.ok_or(Error::ZeroVariance)
}

/// Normalized correlation of two activation vectors; a constant (dead)
/// node scores 0.
pub fn nc(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(correlation(a, b)?.unwrap_or(0.0))
}

/// Activation vectors of every node in one hidden layer over an evaluation
/// set. Conv nodes concatenate their spatial maps across samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTable {
    pub nodes: Vec<Vec<f64>>,
}

impl ActivationTable {
    pub fn samples(&self) -> usize {
        self.nodes.first().map_or(0, Vec::len)
    }
}

/// Post-ReLU activations of every hidden layer over the rows of `eval`.
pub fn record_activations(net: &Network, eval: &Tensor) -> Result<Vec<ActivationTable>> {
    if eval.rows() == 0 {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let hidden = net.hidden_layers();
    let widths = net.hidden_widths();
    let mut tables: Vec<ActivationTable> = widths.iter().map(|&w| ActivationTable { nodes: vec![Vec::new(); w] }).collect();
    for i in 0..eval.rows() {
        let tr = net.forward(eval.row(i))?;
        for l in 0..hidden {
            let a = &tr.post[l];
            let plane = a.len() / widths[l];
            for (j, node) in tables[l].nodes.iter_mut().enumerate() {
                node.extend_from_slice(&a[j * plane..(j + 1) * plane]);
            }
        }
    }
    Ok(tables)
}

/// Specialization summary for one pair of hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpecialization {
    pub layer: usize,
    /// Student nodes × teacher nodes.
    pub nc: Tensor,
    /// Best NC per teacher node.
    pub bnc: Vec<f64>,
    /// Student node achieving each BNC (first on ties).
    pub best_student: Vec<usize>,
    pub mbnc: f64,
    /// BNC sorted in descending order.
    pub sorted_bnc: Vec<f64>,
}

pub fn nc_matrix(student: &ActivationTable, teacher: &ActivationTable) -> Result<Tensor> {
    if student.samples() != teacher.samples() {
        return Err(shape_err(format!("{} activations per node", teacher.samples()), format!("{}", student.samples())));
    }
    let (ks, kt) = (student.nodes.len(), teacher.nodes.len());
    let mut m = Tensor::zeros(vec![ks, kt]);
    for k in 0..ks {
        for j in 0..kt {
            m.set2(k, j, nc(&student.nodes[k], &teacher.nodes[j])?);
        }
    }
    Ok(m)
}

pub fn summarize(layer: usize, nc: Tensor) -> LayerSpecialization {
    let (ks, kt) = (nc.rows(), nc.cols());
    let mut bnc = Vec::with_capacity(kt);
    let mut best_student = Vec::with_capacity(kt);
    for j in 0..kt {
        let mut best = 0;
        for k in 1..ks {
            if nc.get2(k, j) > nc.get2(best, j) {
                best = k;
            }
        }
        best_student.push(best);
        bnc.push(if ks == 0 { 0.0 } else { nc.get2(best, j) });
    }
    let mbnc = bnc.iter().sum::<f64>() / kt.max(1) as f64;
    let mut sorted_bnc = bnc.clone();
    sorted_bnc.sort_by(|a, b| b.total_cmp(a));
    LayerSpecialization { layer, nc, bnc, best_student, mbnc, sorted_bnc }
}

/// NC matrices, BNC, MBNC and sorted BNC curves, pairing student layer `l`
/// with teacher layer `l` for every hidden layer both networks have.
pub fn nc_report(student: &Network, teacher: &Network, eval: &Tensor) -> Result<Vec<LayerSpecialization>> {
    let s = record_activations(student, eval)?;
    let t = record_activations(teacher, eval)?;
    s.iter().zip(&t).enumerate().map(|(l, (a, b))| Ok(summarize(l, nc_matrix(a, b)?))).collect()
}

/// Weight-space distances of first-layer nodes, split along the input subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsInOut {
    /// Student nodes × teacher nodes: ‖UUᵀΔw‖.
    pub eps_in: Tensor,
    /// Student nodes × teacher nodes: ‖(I − UUᵀ)Δw‖.
    pub eps_out: Tensor,
    /// ε_in of each teacher node's best-NC student, ascending.
    pub sorted_in: Vec<f64>,
    /// ε_out of each teacher node's best-NC student, ascending.
    pub sorted_out: Vec<f64>,
    /// Pearson correlation over all (NC, ε_in) pairs.
    pub pearson_nc_eps_in: Option<f64>,
}

fn unit_kernel(net: &Network, j: usize, who: &str) -> Result<Vec<f64>> {
    let w = net.node_kernel(0, j)?;
    let n = norm2(&w);
    if n == 0.0 {
        return Err(Error::DegenerateNode(format!("{who} node {j} has a zero weight vector")));
    }
    Ok(w.into_iter().map(|v| v / n).collect())
}

/// ε_in / ε_out between every first-layer student node k and teacher node j,
/// using Δw = w_k/‖w_k‖ − w*_j/‖w*_j‖ on kernels (bias excluded).
/// `first_layer` supplies the NC matrix used to pair nodes for the curves.
pub fn eps_in_out(student: &Network, teacher: &Network, basis: &SubspaceBasis, first_layer: &LayerSpecialization) -> Result<EpsInOut> {
    let ks = student.hidden_widths().first().copied().unwrap_or(0);
    let kt = teacher.hidden_widths().first().copied().unwrap_or(0);
    if first_layer.nc.shape() != [ks, kt] {
        return Err(shape_err(format!("{ks}×{kt} NC matrix"), format!("{:?}", first_layer.nc.shape())));
    }
    let sw = (0..ks).map(|k| unit_kernel(student, k, "student")).collect::<Result<Vec<_>>>()?;
    let tw = (0..kt).map(|j| unit_kernel(teacher, j, "teacher")).collect::<Result<Vec<_>>>()?;
    let mut eps_in = Tensor::zeros(vec![ks, kt]);
    let mut eps_out = Tensor::zeros(vec![ks, kt]);
    for (k, a) in sw.iter().enumerate() {
        for (j, b) in tw.iter().enumerate() {
            let dw: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let (inside, outside) = basis.project(&dw)?;
            eps_in.set2(k, j, norm2(&inside));
            eps_out.set2(k, j, norm2(&outside));
        }
    }
    let mut sorted_in: Vec<f64> = (0..kt).map(|j| eps_in.get2(first_layer.best_student[j], j)).collect();
    let mut sorted_out: Vec<f64> = (0..kt).map(|j| eps_out.get2(first_layer.best_student[j], j)).collect();
    sorted_in.sort_by(f64::total_cmp);
    sorted_out.sort_by(f64::total_cmp);
    let pearson_nc_eps_in = if eps_in.len() >= 2 { correlation(first_layer.nc.data(), eps_in.data())? } else { None };
    Ok(EpsInOut { eps_in, eps_out, sorted_in, sorted_out, pearson_nc_eps_in })
}

/// Counts of unspecialized vs specialized student nodes, and per-teacher
/// specialization frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecializationCounts {
    pub unspecialized: usize,
    pub specialized: usize,
    /// unspecialized / specialized; `None` when no student node is specialized.
    pub ratio: Option<f64>,
    /// Students with NC above the upper threshold, per teacher node.
    pub histogram: Vec<usize>,
}

impl SpecializationCounts {
    /// The ratio with +∞ standing in for an empty denominator.
    pub fn ratio_or_inf(&self) -> f64 {
        self.ratio.unwrap_or(f64::INFINITY)
    }
}

/// A student node is unspecialized when its best NC over teacher nodes is
/// below `low` and specialized when above `high`.
pub fn ratios_and_histogram(layer: &LayerSpecialization, low: f64, high: f64) -> SpecializationCounts {
    let (ks, kt) = (layer.nc.rows(), layer.nc.cols());
    let mut unspecialized = 0;
    let mut specialized = 0;
    for k in 0..ks {
        let best = (0..kt).map(|j| layer.nc.get2(k, j)).fold(f64::NEG_INFINITY, f64::max);
        if best < low {
            unspecialized += 1;
        } else if best > high {
            specialized += 1;
        }
    }
    let histogram = (0..kt).map(|j| (0..ks).filter(|&k| layer.nc.get2(k, j) > high).count()).collect();
    let ratio = (specialized > 0).then(|| unspecialized as f64 / specialized as f64);
    SpecializationCounts { unspecialized, specialized, ratio, histogram }
}

/// Writes `index,value` rows.
pub fn write_curve(mut w: impl Write, values: &[f64]) -> Result<()> {
    writeln!(w, "index,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    Ok(())
}

/// Per-layer summary suitable for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecializationSummary {
    pub layers: Vec<LayerSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<EpsSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub student_nodes: usize,
    pub teacher_nodes: usize,
    pub mbnc: f64,
    pub sorted_bnc: Vec<f64>,
    pub counts: SpecializationCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsSummary {
    pub sorted_in: Vec<f64>,
    pub sorted_out: Vec<f64>,
    pub pearson_nc_eps_in: Option<f64>,
}

pub const UNSPECIALIZED_BELOW: f64 = 0.8;
pub const SPECIALIZED_ABOVE: f64 = 0.9;

pub fn summary(layers: &[LayerSpecialization], eps: Option<&EpsInOut>) -> SpecializationSummary {
    SpecializationSummary {
        layers: layers
            .iter()
            .map(|l| LayerSummary {
                layer: l.layer,
                student_nodes: l.nc.rows(),
                teacher_nodes: l.nc.cols(),
                mbnc: l.mbnc,
                sorted_bnc: l.sorted_bnc.clone(),
                counts: ratios_and_histogram(l, UNSPECIALIZED_BELOW, SPECIALIZED_ABOVE),
            })
            .collect(),
        eps: eps.map(|e| EpsSummary { sorted_in: e.sorted_in.clone(), sorted_out: e.sorted_out.clone(), pearson_nc_eps_in: e.pearson_nc_eps_in }),
    }
}

impl SpecializationSummary {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Malformed(e.to_string()))
    }
}

#[cfg(test)]
mod tests;
