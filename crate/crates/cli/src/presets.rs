//! Named experiment suites. Image suites run on a synthetic low-rank
//! stand-in; [`on_cifar10`] retargets any of them to the real dataset.

use std::path::{Path, PathBuf};

use splab::attacks::{AttackLoss, AttackMode, AttackSpec, Norm};
use splab::theory::{BenchTrainer, InstanceConfig};
use splab::training::RftConfig;

use crate::config::*;

pub const PRESETS: &[&str] = &["st_vs_at", "epoch_sweep", "ccat_sweep", "rft", "theory_fullrank", "theory_lowrank"];

fn run(name: &str, regime: &str) -> RunConfig {
    RunConfig { name: name.into(), regime: Some(regime.into()), rho: None, epochs: None, reference: None }
}

fn base(name: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        seed: 0,
        out_dir: PathBuf::from("runs").join(name),
        dataset: Some(DatasetConfig::Synthetic {
            ambient_dim: 20,
            subspace_dim: 8,
            radius: 1.0,
            classes: 10,
            train_samples: 512,
            eval_samples: 128,
        }),
        teacher: TeacherConfig { hidden: vec![24, 24], ..TeacherConfig::default() },
        student: StudentConfig::default(),
        regime: RegimeConfig {
            regime: "st_logit".into(),
            epochs: 60,
            batch_size: 32,
            learning_rate: 0.2,
            rft: RftConfig { clip: None, ..RftConfig::default() },
            ..RegimeConfig::default()
        },
        runs: Vec::new(),
        attack: AttackSpec {
            norm: Norm::Linf,
            epsilon: 0.05,
            step_size: 0.0125,
            iterations: 10,
            mode: AttackMode::Oracle,
            loss: AttackLoss::L2Logits,
            random_init: true,
            clip: None,
            kappa: 0.0,
        },
        evaluate: EvaluateConfig { n_repeats: 3, ..EvaluateConfig::default() },
        metrics: MetricsConfig { epoch_grid: vec![20, 40, 60], ..MetricsConfig::default() },
        theory: None,
    }
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let mut c = base(name);
    match name {
        "st_vs_at" => {
            c.runs = vec![run("st_logit", "st_logit"), run("st_label", "st_label"), run("at", "at_teacher_target")];
            c.evaluate.attacks.push(TRANSFER.into());
            c.evaluate.epsilons = [("pgd-l2".to_string(), 0.25), ("pgd-l1".to_string(), 1.0), ("cw".to_string(), 0.25)].into();
        }
        "epoch_sweep" => {
            c.regime.epochs = 100;
            c.metrics.epoch_grid = vec![20, 40, 60, 80, 100];
            c.runs = vec![run("st_logit", "st_logit"), run("st_label", "st_label")];
        }
        "ccat_sweep" => {
            c.runs = vec![run("at", "at_teacher_target")];
            for rho in [5.0, 10.0, 20.0] {
                c.runs.push(RunConfig { rho: Some(rho), ..run(&format!("ccat_rho{rho}"), "ccat") });
            }
        }
        "rft" => {
            c.runs = vec![
                run("st_logit", "st_logit"),
                run("at", "at_teacher_target"),
                RunConfig { reference: Some("at".into()), ..run("rft", "rft") },
            ];
        }
        "theory_fullrank" | "theory_lowrank" => {
            let instance = if name == "theory_fullrank" { InstanceConfig::full_rank() } else { InstanceConfig::low_rank() };
            c.dataset = None;
            c.runs = Vec::new();
            c.metrics.epoch_grid = Vec::new();
            c.theory = Some(TheoryConfig { instance, trainer: BenchTrainer::default(), ..TheoryConfig::default() });
        }
        _ => return None,
    }
    Some(c)
}

/// The desk-scale image setting: 10k training images, a pruned 32-32-32-32
/// conv teacher fitted to the labels, images in [0, 1], ℓ∞ budget 10/255 and
/// 10-step PGD.
pub fn on_cifar10(mut c: ExperimentConfig, dir: &Path) -> ExperimentConfig {
    c.dataset = Some(DatasetConfig::Cifar10 { dir: dir.to_path_buf(), train_images: 10_000, eval_images: 1_000, patch_basis_dim: 17 });
    c.teacher = TeacherConfig {
        arch: Arch::Conv,
        hidden: vec![32, 32, 32, 32],
        kernel: 3,
        bias: true,
        checkpoint: None,
        fit: Some(FitConfig { epochs: 10, batch_size: 64, learning_rate: 0.01 }),
        prune_ratio: Some(0.1),
    };
    c.regime.epochs = c.regime.epochs.min(30);
    c.regime.learning_rate = 0.01;
    c.regime.rft.clip = Some((0.0, 1.0));
    let eps = 10.0 / 255.0;
    c.attack = AttackSpec { epsilon: eps, step_size: eps / 4.0, iterations: 10, clip: Some((0.0, 1.0)), ..c.attack };
    c.evaluate.epsilons = [("pgd-l2".to_string(), 0.5), ("pgd-l1".to_string(), 10.0), ("cw".to_string(), 0.5)]
        .into_iter()
        .filter(|(k, _)| c.evaluate.attacks.contains(k))
        .collect();
    c.metrics.epoch_grid = vec![10, 20, 30];
    c.metrics.grid_samples = 200;
    c.evaluate.samples = 200;
    c
}
