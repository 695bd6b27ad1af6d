use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use super::bench::check_two_layer;
use super::geometry::{bound_constant, check_observation, section_max_norm, section_radius};
use super::TheoryInstance;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::numerics::{dot, norm2, solve, RngState, SubspaceBasis, Tensor};

/// g1_sup at or below this counts as converged.
pub const CONVERGED_G1: f64 = 1e-3;
/// Smallest c₀ for which a node counts as unspecialized.
pub const C0_FLOOR: f64 = 0.3;
/// A student whose projected sine to some teacher node is at most this is
/// specialized.
pub const SPECIALIZED_SIN: f64 = 0.1;
/// Allowed growth of sin θ / bound per decade of ε for the trend check.
pub const TREND_SLACK: f64 = 2.0;
pub const COSINE_PASS: f64 = 0.999;
pub const DRIFT_PASS: f64 = 1e-10;
/// Unspecialized fan-out must stay below this fraction of the specialized
/// median.
pub const FANOUT_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyOptions {
    /// Boundary probes per observation test.
    pub n_probe: usize,
    pub seed: u64,
    pub converged_g1: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { n_probe: 4096, seed: 0, converged_g1: CONVERGED_G1 }
    }
}

/// Largest |g₁| over samples and first-layer nodes under the L2 loss, from
/// the network's own backward pass.
pub fn measure_g1_sup(student: &Network, teacher: &Network, data: &Tensor) -> Result<f64> {
    check_two_layer(student)?;
    check_two_layer(teacher)?;
    let mut sup = 0.0f64;
    for i in 0..data.rows() {
        let x = data.row(i);
        let tr = student.forward(x)?;
        let t = teacher.predict(x)?;
        let dl: Vec<f64> = tr.logits().iter().zip(&t).map(|(s, t)| s - t).collect();
        let back = student.backward(&tr, &dl, false)?;
        sup = back.g1.iter().fold(sup, |m, g| m.max(g.abs()));
    }
    Ok(sup)
}

/// Sine of the angle between two vectors, taken as 1 when the angle is obtuse
/// or either vector vanishes.
pub fn angle_sin(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 || dot(a, b) < 0.0 {
        return 1.0;
    }
    // rejection of a from b, exact zero for exact multiples
    let t = dot(a, b) / dot(b, b);
    let rej: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - t * y).collect();
    (norm2(&rej) / na).min(1.0)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

struct Nodes {
    /// Augmented first-layer weights.
    weights: Vec<Vec<f64>>,
    /// Kernels in subspace coordinates.
    reduced: Vec<Vec<f64>>,
    fanouts: Vec<Vec<f64>>,
}

impl Nodes {
    fn of(net: &Network, basis: &SubspaceBasis) -> Result<Self> {
        let k = net.layers()[0].nodes();
        let weights: Vec<Vec<f64>> = (0..k).map(|j| net.node_weight(0, j)).collect::<Result<_>>()?;
        let reduced = weights.iter().map(|w| basis.coords(&w[..w.len() - 1])).collect::<Result<_>>()?;
        let fanouts = (0..k).map(|j| net.node_fanout(0, j)).collect::<Result<_>>()?;
        Ok(Self { weights, reduced, fanouts })
    }

    fn len(&self) -> usize {
        self.weights.len()
    }
}

fn check_instance(inst: &TheoryInstance, basis: &SubspaceBasis) -> Result<()> {
    check_two_layer(&inst.teacher)?;
    check_two_layer(&inst.student)?;
    if basis.ambient_dim() != inst.teacher.input_len() || inst.student.input_len() != inst.teacher.input_len() {
        return Err(crate::error::shape_err(format!("basis in R^{}", inst.teacher.input_len()), format!("R^{}", basis.ambient_dim())));
    }
    Ok(())
}

/// Students whose active region meets the boundary of `boundary`.
fn observers(
    boundary: &[f64],
    candidates: &Nodes,
    skip: Option<usize>,
    inst: &TheoryInstance,
    basis: &SubspaceBasis,
    opts: &VerifyOptions,
    stream: u64,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (k, w) in candidates.weights.iter().enumerate() {
        if Some(k) == skip {
            continue;
        }
        let mut rng = RngState::stream(opts.seed, stream * 1024 + k as u64);
        if check_observation(boundary, w, basis, &inst.region, opts.n_probe, &mut rng)?.observed {
            out.push(k);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherNodeReport {
    pub node: usize,
    pub observed_by: Vec<usize>,
    /// α_jk = v*_jᵀv_k for each observer, in `observed_by` order.
    pub alphas: Vec<f64>,
    /// Largest |α_jk|, which gives the tightest bound.
    pub alpha: f64,
    pub best_student: usize,
    pub best_in_plane_sin: f64,
    /// `None` when the teacher kernel has no out-of-plane part.
    pub best_out_plane_sin: Option<f64>,
    pub inscribed_radius: f64,
    pub m_j: f64,
    pub m0: f64,
    pub m2: f64,
    pub bound: f64,
    pub bound_satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    /// ε of the bound.
    pub g1_sup: f64,
    pub converged: bool,
    /// Teacher plus student nodes: the ReLUs that make up g₁.
    pub k: usize,
    pub subspace_dim: usize,
    pub teachers: Vec<TeacherNodeReport>,
    pub warnings: Vec<String>,
}

/// Projected-angle bound for every observed teacher node. The region is read
/// in the coordinates of `basis`.
pub fn verify_theorem2(inst: &TheoryInstance, basis: &SubspaceBasis, opts: &VerifyOptions) -> Result<TheoryReport> {
    check_instance(inst, basis)?;
    let eps = measure_g1_sup(&inst.student, &inst.teacher, &inst.data)?;
    let teachers = Nodes::of(&inst.teacher, basis)?;
    let students = Nodes::of(&inst.student, basis)?;
    let k = teachers.len() + students.len();
    let dp = basis.rank();
    let mut report = TheoryReport {
        g1_sup: eps,
        converged: eps <= opts.converged_g1,
        k,
        subspace_dim: dp,
        teachers: Vec::new(),
        warnings: Vec::new(),
    };
    for j in 0..teachers.len() {
        let wj = &teachers.weights[j];
        let observed_by = observers(wj, &students, None, inst, basis, opts, j as u64)?;
        if observed_by.is_empty() {
            report.warnings.push(format!("teacher node {j} is not observed by any student"));
            continue;
        }
        let alphas: Vec<f64> = observed_by.iter().map(|&s| dot(&teachers.fanouts[j], &students.fanouts[s])).collect();
        let alpha = alphas.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        if alpha == 0.0 {
            report.warnings.push(format!("teacher node {j}: every observer has α = 0"));
            continue;
        }
        let sins: Vec<f64> = students.reduced.iter().map(|p| angle_sin(p, &teachers.reduced[j])).collect();
        let best = (0..sins.len()).min_by(|&a, &b| sins[a].total_cmp(&sins[b])).expect("student nodes");
        let d = wj.len() - 1;
        let out_t = basis.project(&wj[..d])?.1;
        let best_out_plane_sin = if norm2(&out_t) > 1e-12 * norm2(&wj[..d]) {
            let out_s = basis.project(&students.weights[best][..d])?.1;
            Some(angle_sin(&out_s, &out_t))
        } else {
            None
        };
        let r = section_radius(wj, basis, &inst.region, opts.seed)?;
        let m_j = bound_constant(r, dp);
        let m0 = section_max_norm(wj, basis, &inst.region)?;
        let bound = if m_j.is_infinite() {
            f64::INFINITY
        } else {
            m_j * k as f64 * eps / alpha
        };
        report.teachers.push(TeacherNodeReport {
            node: j,
            observed_by,
            alphas,
            alpha,
            best_student: best,
            best_in_plane_sin: sins[best],
            best_out_plane_sin,
            inscribed_radius: r,
            m_j,
            m0,
            m2: 2.0 * m0 * m_j * k as f64 + 5.0,
            bound,
            bound_satisfied: sins[best] <= bound,
        });
    }
    if report.teachers.is_empty() {
        warn!("no observed teacher nodes; theorem-2 report is empty");
    }
    Ok(report)
}

/// Per-node trend verdicts over reports taken at decreasing ε (oldest first).
/// A node passes when the explicit bound holds on the last report, or when
/// sin θ / bound never grows by more than `TREND_SLACK` between consecutive
/// reports, i.e. sin θ shrinks in proportion to ε.
pub fn theorem2_trend(history: &[TheoryReport]) -> Vec<(usize, Option<bool>)> {
    let Some(last) = history.last() else { return Vec::new() };
    last.teachers
        .iter()
        .map(|node| {
            if node.bound_satisfied {
                return (node.node, Some(true));
            }
            let ratios: Vec<f64> = history
                .iter()
                .filter_map(|r| r.teachers.iter().find(|t| t.node == node.node))
                .filter(|t| t.bound.is_finite() && t.bound > 0.0)
                .map(|t| t.best_in_plane_sin / t.bound)
                .collect();
            if ratios.len() < 2 {
                return (node.node, None);
            }
            (node.node, Some(ratios.windows(2).all(|w| w[1] <= TREND_SLACK * w[0])))
        })
        .collect()
}

/// Constant-level and trend-level verdicts of a report history.
pub fn theorem2_verdicts(history: &[TheoryReport]) -> (Verdict, Verdict) {
    let Some(last) = history.last() else { return (Verdict::Inconclusive, Verdict::Inconclusive) };
    if !last.converged || last.teachers.is_empty() {
        return (Verdict::Inconclusive, Verdict::Inconclusive);
    }
    let constant = if last.teachers.iter().all(|t| t.bound_satisfied) { Verdict::Pass } else { Verdict::Fail };
    let trend = theorem2_trend(history);
    let trend = if trend.iter().any(|(_, t)| *t == Some(false)) {
        Verdict::Fail
    } else if trend.iter().all(|(_, t)| *t == Some(true)) {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    (constant, trend)
}

/// CSV with columns node, sin_theta, bound, alpha, r, satisfied.
pub fn write_theory_csv(mut w: impl Write, report: &TheoryReport) -> Result<()> {
    writeln!(w, "node,sin_theta,bound,alpha,r,satisfied")?;
    for t in &report.teachers {
        writeln!(w, "{},{},{},{},{},{}", t.node, t.best_in_plane_sin, t.bound, t.alpha, t.inscribed_radius, t.bound_satisfied)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Node {
    pub node: usize,
    pub observed: bool,
    pub best_student: usize,
    /// Cosine of the projected kernels.
    pub cosine: f64,
    /// Least-squares λ in Proj[w̃_k] = λ Proj[w̃*_j].
    pub lambda: f64,
    /// Cosine of the reduced augmented weights [Uᵀw̃; w̃ᵀx₀ + b].
    pub reduced_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub g1_sup: f64,
    pub converged: bool,
    pub nodes: Vec<Theorem1Node>,
    /// Relative out-of-plane drift per student since initialization; empty
    /// when not checked.
    pub drift: Vec<f64>,
    pub verdict: Verdict,
}

/// Colinearity of projected weights. With `initial`, the out-of-plane part of
/// every student kernel is also compared against its starting value.
pub fn verify_theorem1(inst: &TheoryInstance, initial: Option<&Network>, opts: &VerifyOptions) -> Result<Theorem1Report> {
    let basis = &inst.basis;
    check_instance(inst, basis)?;
    let eps = measure_g1_sup(&inst.student, &inst.teacher, &inst.data)?;
    let teachers = Nodes::of(&inst.teacher, basis)?;
    let students = Nodes::of(&inst.student, basis)?;
    let mut nodes = Vec::new();
    for j in 0..teachers.len() {
        let observed = !observers(&teachers.weights[j], &students, None, inst, basis, opts, j as u64)?.is_empty();
        let pj = &teachers.reduced[j];
        let cos: Vec<f64> = students.reduced.iter().map(|p| cosine(p, pj)).collect();
        let best = (0..cos.len()).max_by(|&a, &b| cos[a].total_cmp(&cos[b])).expect("student nodes");
        let pk = &students.reduced[best];
        let lambda = dot(pk, pj) / dot(pj, pj);
        let aug = |w: &[f64], p: &[f64]| {
            let mut a = p.to_vec();
            a.push(super::geometry::reduce(w, basis).map(|r| r.1).unwrap_or(0.0));
            a
        };
        let reduced_cosine = cosine(&aug(&students.weights[best], pk), &aug(&teachers.weights[j], pj));
        nodes.push(Theorem1Node { node: j, observed, best_student: best, cosine: cos[best], lambda, reduced_cosine });
    }
    let mut drift = Vec::new();
    if let Some(init) = initial {
        let start = Nodes::of(init, basis)?;
        if start.len() != students.len() {
            return Err(Error::InvalidArgument("initial student has a different width".into()));
        }
        for (w0, w) in start.weights.iter().zip(&students.weights) {
            let d = w.len() - 1;
            let o0 = basis.project(&w0[..d])?.1;
            let o = basis.project(&w[..d])?.1;
            let diff: Vec<f64> = o.iter().zip(&o0).map(|(a, b)| a - b).collect();
            let scale = norm2(&o0);
            drift.push(if scale > 0.0 { norm2(&diff) / scale } else { norm2(&diff) });
        }
    }
    let converged = eps <= opts.converged_g1;
    let observed: Vec<&Theorem1Node> = nodes.iter().filter(|n| n.observed).collect();
    let verdict = if !converged || observed.is_empty() {
        Verdict::Inconclusive
    } else if observed.iter().all(|n| n.cosine > COSINE_PASS && n.lambda > 0.0) && drift.iter().all(|d| *d <= DRIFT_PASS) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(Theorem1Report { g1_sup: eps, converged, nodes, drift, verdict })
}

/// Low-rank form: needs d' < d, x₀ = 0 and bias-free nets, so the
/// out-of-plane part of every student kernel is frozen at `inst.initial`.
pub fn verify_theorem1_lowrank(inst: &TheoryInstance, opts: &VerifyOptions) -> Result<Theorem1Report> {
    if inst.basis.rank() >= inst.basis.ambient_dim() {
        return Err(Error::InvalidArgument("low-rank check needs d' < d".into()));
    }
    if inst.basis.offset.iter().any(|v| *v != 0.0) || inst.student.layers()[0].has_bias() || inst.teacher.layers()[0].has_bias() {
        return Err(Error::InvalidArgument("low-rank check needs x₀ = 0 and bias-free first layers".into()));
    }
    verify_theorem1(inst, Some(&inst.initial), opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentNodeReport {
    pub node: usize,
    pub fanout_norm: f64,
    /// Smallest projected sine to any other teacher or student node.
    pub c0: f64,
    /// Projected sine to the closest teacher node.
    pub teacher_sin: f64,
    pub specialized: bool,
    pub observers: Vec<usize>,
    /// ‖Q⁻¹‖₁ (largest absolute column sum) of the chosen observers.
    pub q_inv_norm: Option<f64>,
    pub corollary_bound: Option<f64>,
    pub satisfied: Option<bool>,
    /// Why no bound was computed.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryReport {
    pub g1_sup: f64,
    pub converged: bool,
    pub students: Vec<StudentNodeReport>,
    pub median_specialized_fanout: Option<f64>,
    /// Unspecialized nodes (c₀ above the floor) against the median.
    pub qualitative: Verdict,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// ‖Q⁻¹‖₁ for Q with the given columns, `None` when singular.
pub(super) fn inverse_norm1(columns: &[&Vec<f64>]) -> Option<f64> {
    let c = columns.len();
    let mut q = vec![0.0; c * c];
    for (j, col) in columns.iter().enumerate() {
        for i in 0..c {
            q[i * c + j] = col[i];
        }
    }
    let q = Tensor::new(vec![c, c], q).ok()?;
    let mut best = 0.0f64;
    for i in 0..c {
        let mut e = vec![0.0; c];
        e[i] = 1.0;
        let col = solve(&q, &e).ok()?;
        best = best.max(col.iter().map(|v| v.abs()).sum());
    }
    Some(best)
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Fan-out bound for unspecialized student nodes.
pub fn verify_corollary1(inst: &TheoryInstance, basis: &SubspaceBasis, opts: &VerifyOptions) -> Result<CorollaryReport> {
    check_instance(inst, basis)?;
    let eps = measure_g1_sup(&inst.student, &inst.teacher, &inst.data)?;
    let teachers = Nodes::of(&inst.teacher, basis)?;
    let students = Nodes::of(&inst.student, basis)?;
    let k = teachers.len() + students.len();
    let c = inst.student.output_dim();
    let mut out = Vec::new();
    for s in 0..students.len() {
        let p = &students.reduced[s];
        let teacher_sin = teachers.reduced.iter().map(|t| angle_sin(p, t)).fold(1.0f64, f64::min);
        let c0 = students
            .reduced
            .iter()
            .enumerate()
            .filter(|(o, _)| *o != s)
            .map(|(_, q)| angle_sin(p, q))
            .fold(teacher_sin, f64::min);
        let fanout_norm = norm2(&students.fanouts[s]);
        let mut node = StudentNodeReport {
            node: s,
            fanout_norm,
            c0,
            teacher_sin,
            specialized: teacher_sin <= SPECIALIZED_SIN,
            observers: Vec::new(),
            q_inv_norm: None,
            corollary_bound: None,
            satisfied: None,
            flag: None,
        };
        if c0 <= C0_FLOOR {
            node.flag = Some("c0 below floor".into());
            out.push(node);
            continue;
        }
        node.observers = observers(&students.weights[s], &students, Some(s), inst, basis, opts, 1000 + s as u64)?;
        if node.observers.len() < c {
            node.flag = Some(format!("{} observers, {c} needed", node.observers.len()));
            out.push(node);
            continue;
        }
        let q_inv = combinations(node.observers.len(), c)
            .iter()
            .filter_map(|set| {
                let cols: Vec<&Vec<f64>> = set.iter().map(|&i| &students.fanouts[node.observers[i]]).collect();
                inverse_norm1(&cols)
            })
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
        let Some(q_inv) = q_inv else {
            node.flag = Some("singular Q".into());
            out.push(node);
            continue;
        };
        let m = bound_constant(section_radius(&students.weights[s], basis, &inst.region, opts.seed)?, basis.rank());
        let bound = if m.is_infinite() { f64::INFINITY } else { q_inv * m * k as f64 * eps / c0 };
        node.q_inv_norm = Some(q_inv);
        node.corollary_bound = Some(bound);
        node.satisfied = Some(fanout_norm <= bound);
        out.push(node);
    }
    let converged = eps <= opts.converged_g1;
    let mut spec: Vec<f64> = out.iter().filter(|n| n.specialized).map(|n| n.fanout_norm).collect();
    let med = median(&mut spec);
    let qualitative = match (converged, med) {
        (true, Some(m)) => {
            if out.iter().filter(|n| n.c0 > C0_FLOOR).all(|n| n.fanout_norm < FANOUT_RATIO * m) {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
        _ => Verdict::Inconclusive,
    };
    Ok(CorollaryReport { g1_sup: eps, converged, students: out, median_specialized_fanout: med, qualitative })
}

/// CSV with columns node, fanout_norm, c0, bound, satisfied, flag.
pub fn write_corollary_csv(mut w: impl Write, report: &CorollaryReport) -> Result<()> {
    writeln!(w, "node,fanout_norm,c0,bound,satisfied,flag")?;
    for n in &report.students {
        let bound = n.corollary_bound.map(|b| b.to_string()).unwrap_or_default();
        let sat = n.satisfied.map(|b| b.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{}", n.node, n.fanout_norm, n.c0, bound, sat, n.flag.clone().unwrap_or_default())?;
    }
    Ok(())
}
