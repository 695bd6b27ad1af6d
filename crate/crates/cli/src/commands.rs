use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use log::info;

use splab::attacks::{clean_agreement, make_attack, robust_accuracy, Attack, AttackSpec, TransferAttack};
use splab::network::Network;
use splab::numerics::RngState;
use splab::specialization::{eps_in_out, nc_report, ratios_and_histogram, summary, SPECIALIZED_ABOVE, UNSPECIALIZED_BELOW};
use splab::theory::{
    theorem2_trend, theorem2_verdicts, verify_corollary1, verify_theorem1, verify_theorem1_lowrank, verify_theorem2, write_corollary_csv,
    write_theory_csv, TheoryInstance, Verdict, VerifyOptions, CONVERGED_G1,
};
use splab::training::{train, write_history_csv, Monitor, TrainConfig};

use crate::config::{ExperimentConfig, TheoryInit, TRANSFER};
use crate::output::OutDir;
use crate::pipeline::*;
use crate::CliError;

/// What a command concluded, beyond success.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    /// Summary lines for standard output.
    pub lines: Vec<String>,
    pub inconclusive: bool,
}

impl Outcome {
    fn done() -> Self {
        Self { lines: Vec::new(), inconclusive: false }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cmd_train(cfg: &ExperimentConfig, root: &Path) -> Result<Outcome, CliError> {
    let data = load_data(cfg)?;
    let mut out = OutDir::create(root, &cfg.name, "train", &cfg.hash())?;
    out.write("config.toml", cfg.to_toml().as_bytes())?;
    let teacher = prepare_teacher(cfg, &data, &mut out)?;
    let init = student_like(&teacher, cfg.student.width_scale, &mut RngState::stream(cfg.seed, 2000))?;
    let grid_eval = head_rows(&data.eval, cfg.metrics.grid_samples);
    let grid_attack = make_attack(&cfg.metrics.grid_attack, &cfg.attack)?;
    let mut finals: BTreeMap<String, Network> = BTreeMap::new();
    let mut rows = Vec::new();
    let mut layers = 0;
    for run in cfg.runs() {
        let tc = cfg.train_config(&run);
        info!("run {} ({}, {} epochs)", run.name, tc.regime, tc.epochs);
        let reference = run.reference.as_ref().map(|r| &finals[r]);
        let res = train(&tc, &teacher, init.clone(), &data.train, reference, &Monitor::default())?;
        out.csv(&format!("history_{}.csv", run.name), |w| write_history_csv(w, &res.history))?;
        for (epoch, net) in &res.snapshots {
            save_student(&mut out, &run.name, *epoch, &tc.regime, cfg.seed, net)?;
            let clean = clean_agreement(net, &teacher, &grid_eval)?;
            let robust = robust_accuracy(net, &teacher, &grid_eval, grid_attack.as_ref(), cfg.seed)?;
            let mbnc: Vec<f64> = if cfg.metrics.specialization {
                nc_report(net, &teacher, &grid_eval)?.iter().map(|l| l.mbnc).collect()
            } else {
                Vec::new()
            };
            layers = layers.max(mbnc.len());
            rows.push((run.name.clone(), *epoch, clean, robust, mbnc));
        }
        finals.insert(run.name.clone(), res.network);
    }
    out.csv("epoch_grid.csv", |w| {
        let mut header = String::from("run,epoch,clean_agreement,robust_acc");
        for l in 0..layers {
            header.push_str(&format!(",mbnc_layer{l}"));
        }
        writeln!(w, "{header}")?;
        for (run, epoch, clean, robust, mbnc) in &rows {
            let cells: Vec<String> = (0..layers).map(|l| opt(mbnc.get(l).copied())).collect();
            let tail = if layers > 0 { format!(",{}", cells.join(",")) } else { String::new() };
            writeln!(w, "{run},{epoch},{clean},{robust}{tail}")?;
        }
        Ok(())
    })?;
    if cfg.evaluate.attacks.iter().any(|a| a == TRANSFER) {
        // independent seed for both initialization and shuffling
        let seed = cfg.seed.wrapping_add(1);
        let base = cfg.train_config(&cfg.runs()[0]);
        let tc = TrainConfig { regime: "st_logit".into(), seed, snapshot_epochs: Vec::new(), ..base };
        let init = student_like(&teacher, cfg.student.width_scale, &mut RngState::stream(seed, 2000))?;
        let res = train(&tc, &teacher, init, &data.train, None, &Monitor::default())?;
        save_surrogate(&mut out, tc.epochs, seed, &res.network)?;
    }
    let lines = rows.iter().map(|(run, epoch, clean, robust, _)| format!("{run}({epoch}): clean {clean:.4} robust {robust:.4}")).collect();
    out.finish()?;
    Ok(Outcome { lines, ..Outcome::done() })
}

/// Mean and population variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
}

fn eval_attack(cfg: &ExperimentConfig, name: &str, root: &Path) -> Result<Box<dyn Attack>, CliError> {
    let mut spec: AttackSpec = cfg.attack.clone();
    if let Some(&eps) = cfg.evaluate.epsilons.get(name) {
        // keep the step-to-budget ratio
        spec.step_size = if spec.epsilon > 0.0 { spec.step_size * eps / spec.epsilon } else { eps / 4.0 };
        spec.epsilon = eps;
    }
    if name == TRANSFER {
        let surrogate = load_net(&root.join(SURROGATE_CKPT))?;
        return Ok(Box::new(TransferAttack { surrogate, inner: make_attack("pgd-linf", &spec)? }));
    }
    Ok(make_attack(name, &spec)?)
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, root: &Path) -> Result<Outcome, CliError> {
    let teacher = load_net(&root.join(TEACHER_CKPT))?;
    let models = models(cfg, root);
    let nets = models.iter().map(|m| load_net(&m.path)).collect::<Result<Vec<_>, _>>()?;
    let data = load_data(cfg)?;
    let eval = head_rows(&data.eval, cfg.evaluate.samples);
    let mut out = OutDir::create(root, &cfg.name, "evaluate", &cfg.hash())?;
    let mut table: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for name in &cfg.evaluate.attacks {
        let attack = eval_attack(cfg, name, root)?;
        let mut cells = Vec::new();
        for (m, net) in models.iter().zip(&nets) {
            let accs = (0..cfg.evaluate.n_repeats as u64)
                .map(|r| robust_accuracy(net, &teacher, &eval, attack.as_ref(), cfg.seed.wrapping_add(r)))
                .collect::<splab::Result<Vec<f64>>>()?;
            let (mean, var) = mean_var(&accs);
            info!("{name} on {}: {mean:.4} ± {var:.2e}", m.label);
            cells.push((mean, var));
        }
        table.push((name.clone(), cells));
    }
    out.csv("robust_accuracy.csv", |w| {
        let mut header = String::from("attack");
        for m in &models {
            header.push_str(&format!(",{0}_mean,{0}_var", m.label));
        }
        writeln!(w, "{header}")?;
        for (name, cells) in &table {
            let cells: Vec<String> = cells.iter().map(|(m, v)| format!("{m},{v}")).collect();
            writeln!(w, "{name},{}", cells.join(","))?;
        }
        Ok(())
    })?;
    let lines = table
        .iter()
        .map(|(name, cells)| {
            let parts: Vec<String> = models.iter().zip(cells).map(|(m, (mean, _))| format!("{} {mean:.4}", m.label)).collect();
            format!("{name}: {}", parts.join(", "))
        })
        .collect();
    out.finish()?;
    Ok(Outcome { lines, ..Outcome::done() })
}

fn write_values(w: &mut Vec<u8>, index: &str, column: &str, values: &[f64]) -> splab::Result<()> {
    writeln!(w, "{index},{column}")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    Ok(())
}

pub fn cmd_specialize(cfg: &ExperimentConfig, root: &Path) -> Result<Outcome, CliError> {
    let teacher = load_net(&root.join(TEACHER_CKPT))?;
    let models = models(cfg, root);
    let data = load_data(cfg)?;
    let mut out = OutDir::create(root, &cfg.name, "specialize", &cfg.hash())?;
    let mut mbnc_rows = Vec::new();
    let mut ratio_rows = Vec::new();
    let mut pearson_rows = Vec::new();
    for m in &models {
        let net = load_net(&m.path)?;
        if net.hidden_layers() != teacher.hidden_layers() {
            return Err(CliError::Runtime(format!(
                "{} has {} hidden layers but the teacher has {}",
                m.path.display(),
                net.hidden_layers(),
                teacher.hidden_layers()
            )));
        }
        let report = nc_report(&net, &teacher, &data.eval)?;
        let dir = format!("specialize/{}", m.slug);
        for l in &report {
            let li = l.layer;
            out.csv(&format!("{dir}/bnc_sorted_layer{li}.csv"), |w| write_values(w, "rank", &format!("bnc_sorted_layer{li}"), &l.sorted_bnc))?;
            let counts = ratios_and_histogram(l, UNSPECIALIZED_BELOW, SPECIALIZED_ABOVE);
            out.csv(&format!("{dir}/histogram_layer{li}.csv"), |w| {
                writeln!(w, "teacher_node,specialized_students_layer{li}")?;
                for (j, c) in counts.histogram.iter().enumerate() {
                    writeln!(w, "{j},{c}")?;
                }
                Ok(())
            })?;
            mbnc_rows.push(format!("{},{li},{}", m.label, l.mbnc));
            ratio_rows.push(format!("{},{li},{},{},{}", m.label, counts.unspecialized, counts.specialized, opt(counts.ratio)));
        }
        let kernel_len = net.node_kernel(0, 0)?.len();
        let eps = match (&data.basis, cfg.metrics.eps_in_out) {
            (Some(basis), true) if basis.ambient_dim() == kernel_len => Some(eps_in_out(&net, &teacher, basis, &report[0])?),
            _ => None,
        };
        if let Some(e) = &eps {
            out.csv(&format!("{dir}/eps_in_layer0.csv"), |w| write_values(w, "rank", "eps_in_layer0", &e.sorted_in))?;
            out.csv(&format!("{dir}/eps_out_layer0.csv"), |w| write_values(w, "rank", "eps_out_layer0", &e.sorted_out))?;
            pearson_rows.push(format!("{},{}", m.label, opt(e.pearson_nc_eps_in)));
        }
        let mut json = summary(&report, eps.as_ref()).to_json()?;
        json.push('\n');
        out.write(&format!("{dir}/summary.json"), json.as_bytes())?;
    }
    let table = |header: &str, rows: &[String]| {
        let mut s = format!("{header}\n");
        rows.iter().for_each(|r| {
            s.push_str(r);
            s.push('\n');
        });
        s
    };
    out.write("mbnc_all.csv", table("model,layer,mbnc", &mbnc_rows).as_bytes())?;
    out.write("ratio_all.csv", table("model,layer,unspecialized,specialized,ratio", &ratio_rows).as_bytes())?;
    if !pearson_rows.is_empty() {
        out.write("pearson_layer0.csv", table("model,pearson_nc_eps_in_layer0", &pearson_rows).as_bytes())?;
    }
    let lines = mbnc_rows.iter().map(|r| format!("mbnc {r}")).collect();
    out.finish()?;
    Ok(Outcome { lines, ..Outcome::done() })
}

pub fn cmd_verify_theory(cfg: &ExperimentConfig, root: &Path) -> Result<Outcome, CliError> {
    let th = cfg.theory.as_ref().ok_or_else(|| CliError::Validation("verify-theory needs a [theory] section".into()))?;
    let inst_cfg = cfg.theory_instance().expect("theory present");
    let mut inst = TheoryInstance::generate(&inst_cfg)?;
    if th.init == TheoryInit::TeacherCopy {
        inst.student = inst.teacher.clone();
        inst.initial = inst.teacher.clone();
    }
    let bench = th.trainer.train(&inst.student, &inst.teacher, &inst.data)?;
    inst.student = bench.student.clone();
    let opts = VerifyOptions { n_probe: th.n_probe, seed: cfg.seed, converged_g1: CONVERGED_G1 };
    let low_rank = inst_cfg.subspace_dim < inst_cfg.ambient_dim;
    let t1 = if low_rank && !inst_cfg.bias { verify_theorem1_lowrank(&inst, &opts)? } else { verify_theorem1(&inst, None, &opts)? };
    let mut history = Vec::new();
    let mut g1s = Vec::new();
    for s in &bench.snapshots {
        history.push(verify_theorem2(&inst.with_student(s.student.clone()), &inst.basis, &opts)?);
        g1s.push((s.epoch, s.g1_sup));
    }
    if bench.snapshots.last().map(|s| s.epoch) != Some(bench.epochs) {
        history.push(verify_theorem2(&inst, &inst.basis, &opts)?);
        g1s.push((bench.epochs, bench.g1_sup));
    }
    let (constant, trend) = theorem2_verdicts(&history);
    let cor = verify_corollary1(&inst, &inst.basis, &opts)?;

    let mut out = OutDir::create(root, &cfg.name, "verify-theory", &cfg.hash())?;
    out.csv("bench.csv", |w| {
        writeln!(w, "epochs,g1_sup,loss")?;
        writeln!(w, "{},{},{}", bench.epochs, bench.g1_sup, bench.loss)?;
        Ok(())
    })?;
    out.csv("theorem1.csv", |w| {
        writeln!(w, "node,observed,best_student,cosine,lambda,reduced_cosine")?;
        for n in &t1.nodes {
            writeln!(w, "{},{},{},{},{},{}", n.node, n.observed, n.best_student, n.cosine, n.lambda, n.reduced_cosine)?;
        }
        Ok(())
    })?;
    if !t1.drift.is_empty() {
        out.csv("drift.csv", |w| write_values(w, "student_node", "out_of_plane_drift", &t1.drift))?;
    }
    let last = history.last().expect("at least the final report");
    out.csv("theorem2.csv", |w| write_theory_csv(w, last))?;
    out.csv("theorem2_trend.csv", |w| {
        writeln!(w, "epoch,g1_sup,node,sin_theta,bound,satisfied")?;
        for ((epoch, g1), rep) in g1s.iter().zip(&history) {
            for t in &rep.teachers {
                writeln!(w, "{epoch},{g1},{},{},{},{}", t.node, t.best_in_plane_sin, t.bound, t.bound_satisfied)?;
            }
        }
        Ok(())
    })?;
    out.csv("corollary1.csv", |w| write_corollary_csv(w, &cor))?;
    out.finish()?;

    let trend_nodes = theorem2_trend(&history);
    let mut lines = vec![
        format!("g1_sup {:.3e} after {} epochs", bench.g1_sup, bench.epochs),
        format!("theorem1: {}", t1.verdict),
        format!("theorem2-constant: {constant}"),
        format!("theorem2-trend: {trend}"),
        format!("corollary1: {}", cor.qualitative),
    ];
    for w in &last.warnings {
        lines.push(format!("warning: {w}"));
    }
    if trend_nodes.is_empty() && trend != Verdict::Inconclusive {
        lines.push("warning: no teacher node could be checked".into());
    }
    let verdicts = [t1.verdict, constant, trend, cor.qualitative];
    Ok(Outcome { lines, inconclusive: verdicts.contains(&Verdict::Inconclusive) })
}
