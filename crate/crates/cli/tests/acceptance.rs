//! Acceptance checks, one PASS/FAIL line each. Criteria 8 and 9b train on
//! CIFAR-10 and run only when `CIFAR10_DIR` points at the binary batches.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use proptest::collection::vec;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use splab::attacks::{fgsm, pgd, AttackLoss, AttackMode, AttackSpec, Norm, Victim};
use splab::data::{gen_synthetic, load_cifar10, read_cifar_batch, SyntheticSpec, CIFAR_CLASSES};
use splab::network::loss::{cross_entropy, l2_logits, soft_cross_entropy};
use splab::network::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Network, TrainMeta};
use splab::numerics::{RngState, Tensor};
use splab::specialization::{eps_in_out, nc, nc_report};
use splab::theory::{
    theorem2_verdicts, verify_corollary1, verify_theorem1, verify_theorem1_lowrank, verify_theorem2, BenchOutcome, BenchTrainer,
    InstanceConfig, TheoryInstance, TheoryReport, Verdict, VerifyOptions,
};
use splab::training::{ccat_lambda, gen_robust_feature, train, FeatureTap, Monitor, RftConfig, TrainConfig};
use splab::Error;
use splab_cli::config::{DatasetConfig, RunConfig};
use splab_cli::output::Manifest;
use splab_cli::presets::{on_cifar10, preset};
use splab_cli::{execute, Command, ExperimentConfig};

const MINUTE: Duration = Duration::from_secs(60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Runs one criterion and prints its line; a criterion over budget fails.
fn criterion(id: &str, title: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let pass = out.pass && took <= budget;
    let budget_note = if took > budget { format!(", over the {}s budget", budget.as_secs()) } else { String::new() };
    println!("criterion {id:>3} {title}: {} ({}; {:.1}s{budget_note})", if pass { "PASS" } else { "FAIL" }, out.detail, took.as_secs_f64());
    pass
}

fn not_run(id: &str, title: &str, why: &str) {
    println!("criterion {id:>3} {title}: NOT RUN ({why})");
}

// ---------------------------------------------------------------- 1

fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6)).fold(0.0, f64::max)
}

enum Loss {
    L2(Vec<f64>),
    Ce(usize),
    SoftCe(Vec<f64>),
}

impl Loss {
    fn eval(&self, z: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Loss::L2(t) => l2_logits(z, t),
            Loss::Ce(y) => cross_entropy(z, *y),
            Loss::SoftCe(p) => soft_cross_entropy(z, p),
        }
    }
}

/// Hidden pre-activations stay this far from the ReLU kink.
const KINK_MARGIN: f64 = 1e-4;

fn away_from_kinks(net: &Network, x: &[f64]) -> bool {
    let tr = net.forward(x).unwrap();
    let hidden = net.hidden_layers();
    (0..hidden).all(|l| tr.pre[l].iter().all(|z| z.abs() > KINK_MARGIN))
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut names = Vec::new();
    for case in 0..20u64 {
        let mut rng = RngState::new(100 + case);
        let net = match case % 3 {
            0 => Network::dense(&[5, 7, 3], true, &mut rng).unwrap(),
            1 => Network::dense(&[5, 6, 4, 3], true, &mut rng).unwrap(),
            _ => Network::conv([2, 5, 5], &[3, 2], 2, 3, true, &mut rng).unwrap(),
        };
        let x = loop {
            let x = rng.normal_vec(net.input_len());
            if away_from_kinks(&net, &x) {
                break x;
            }
        };
        let loss = match (case / 3) % 3 {
            0 => Loss::L2(rng.normal_vec(3)),
            1 => Loss::Ce(rng.below(3)),
            _ => {
                let w: Vec<f64> = (0..3).map(|_| rng.uniform() + 0.1).collect();
                let s: f64 = w.iter().sum();
                Loss::SoftCe(w.iter().map(|v| v / s).collect())
            }
        };
        names.push(format!("{}/{}", ["dense2", "dense3", "conv"][(case % 3) as usize], ["l2", "ce", "soft-ce"][((case / 3) % 3) as usize]));
        let tr = net.forward(&x).unwrap();
        let (_, dz) = loss.eval(tr.logits());
        let back = net.backward(&tr, &dz, true).unwrap();
        let theta = net.params_flat();
        let mut probe = net.clone();
        let fd_params = central_difference(
            &mut |p| {
                probe.set_params_flat(p).unwrap();
                loss.eval(&probe.predict(&x).unwrap()).0
            },
            &theta,
            1e-5,
        );
        let fd_input = central_difference(&mut |xi| loss.eval(&net.predict(xi).unwrap()).0, &x, 1e-5);
        worst = worst.max(relative_error(&back.params.unwrap().flat(), &fd_params));
        worst = worst.max(relative_error(&back.input_grad, &fd_input));
    }
    names.sort();
    names.dedup();
    check(worst < 1e-6, format!("20 triples over {} architecture/loss pairs, max relative error {worst:.2e}", names.len()))
}

// ---------------------------------------------------------------- 2-4

struct Trained {
    inst: TheoryInstance,
    bench: BenchOutcome,
}

fn trained(cfg: &InstanceConfig) -> Trained {
    let (inst, bench) = TheoryInstance::trained(cfg, &BenchTrainer::default()).unwrap();
    Trained { inst, bench }
}

fn theorem1_line(report: &splab::theory::Theorem1Report) -> String {
    let observed: Vec<_> = report.nodes.iter().filter(|n| n.observed).collect();
    let min_cos = observed.iter().map(|n| n.cosine).fold(f64::INFINITY, f64::min);
    let min_lambda = observed.iter().map(|n| n.lambda).fold(f64::INFINITY, f64::min);
    format!("g1_sup {:.2e}, {} observed teacher nodes, min cosine {min_cos:.6}, min λ {min_lambda:.3}", report.g1_sup, observed.len())
}

fn history(t: &Trained, opts: &VerifyOptions) -> Vec<TheoryReport> {
    let mut out: Vec<TheoryReport> =
        t.bench.snapshots.iter().map(|s| verify_theorem2(&t.inst.with_student(s.student.clone()), &t.inst.basis, opts).unwrap()).collect();
    if t.bench.snapshots.last().map(|s| s.epoch) != Some(t.bench.epochs) {
        out.push(verify_theorem2(&t.inst, &t.inst.basis, opts).unwrap());
    }
    out
}

// ---------------------------------------------------------------- 6

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn metric_identities() -> Outcome {
    let mut failures = Vec::new();
    let mut note = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };

    let range = runner(2000).run(&(vec(-1e3f64..1e3, 2..40), vec(-1e3f64..1e3, 40)), |(a, b)| {
        let v = nc(&a, &b[..a.len()]).unwrap();
        proptest::prop_assert!((-1.0..=1.0).contains(&v), "nc = {}", v);
        let flat = vec![a[0]; a.len()];
        proptest::prop_assert_eq!(nc(&flat, &b[..a.len()]).unwrap(), 0.0);
        Ok(())
    });
    note("nc range", range.map_err(|e| e.to_string()));

    let affine = runner(2000).run(&(vec(-1.0f64..1.0, 3..40), vec(-1.0f64..1.0, 40), 0.01f64..100.0, -100.0f64..100.0, proptest::bool::ANY), |(x, y, a, b, flip)| {
        let y = &y[..x.len()];
        let a = if flip { -a } else { a };
        let base = nc(&x, y).unwrap();
        let moved: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let got = nc(&moved, y).unwrap();
        proptest::prop_assert!((got - a.signum() * base).abs() < 1e-9, "{} vs {}", got, base);
        Ok(())
    });
    note("nc affine invariance", affine.map_err(|e| e.to_string()));

    let mut worst_split: f64 = 0.0;
    let mut curves_ok = true;
    for seed in 0..200u64 {
        let (d, k) = (6 + (seed % 5) as usize, 1 + (seed % 4) as usize);
        let (data, basis) = gen_synthetic(&SyntheticSpec::ball(d, k, 1.0, 64, seed)).unwrap();
        let mut rng = RngState::new(seed);
        let teacher = Network::dense(&[d, 5, 3], true, &mut rng).unwrap();
        let student = Network::dense(&[d, 7, 3], true, &mut rng).unwrap();
        let report = nc_report(&student, &teacher, &data).unwrap();
        let e = eps_in_out(&student, &teacher, &basis, &report[0]).unwrap();
        for s in 0..7 {
            for j in 0..5 {
                let unit = |w: Vec<f64>| {
                    let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                    w.into_iter().map(|v| v / n).collect::<Vec<_>>()
                };
                let (ws, wt) = (unit(student.node_kernel(0, s).unwrap()), unit(teacher.node_kernel(0, j).unwrap()));
                let dw2: f64 = ws.iter().zip(&wt).map(|(p, q)| (p - q) * (p - q)).sum();
                let split = e.eps_in.get2(s, j).powi(2) + e.eps_out.get2(s, j).powi(2);
                worst_split = worst_split.max((split - dw2).abs());
            }
        }
        for l in &report {
            curves_ok &= l.sorted_bnc.windows(2).all(|w| w[0] >= w[1]);
            let mut a = l.sorted_bnc.clone();
            let mut b = l.bnc.clone();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            curves_ok &= a == b;
        }
        curves_ok &= e.sorted_in.windows(2).all(|w| w[0] <= w[1]) && e.sorted_out.windows(2).all(|w| w[0] <= w[1]);
    }
    if worst_split > 1e-12 {
        failures.push(format!("ε_in² + ε_out² off by {worst_split:.2e}"));
    }
    if !curves_ok {
        failures.push("a sorted curve is out of order".into());
    }

    let mut lambda_ok = true;
    for eps in [0.01, 10.0 / 255.0, 0.3, 1.0] {
        for rho in [1.0, 5.0, 10.0, 20.0] {
            lambda_ok &= ccat_lambda(0.0, eps, rho) == 1.0 && ccat_lambda(eps, eps, rho) == 0.0;
        }
        lambda_ok &= (ccat_lambda(eps / 2.0, eps, 10.0) - 1.0 / 1024.0).abs() < 1e-15;
    }
    if !lambda_ok {
        failures.push("λ(δ) values".into());
    }
    let detail = if failures.is_empty() {
        format!("4000 NC cases, 200 ε split/curve cases (worst split error {worst_split:.1e}), λ values exact")
    } else {
        failures.join("; ")
    };
    check(failures.is_empty(), detail)
}

// ---------------------------------------------------------------- 7

fn linear(w: &[f64]) -> Network {
    let mut net = Network::dense(&[w.len(), 1], false, &mut RngState::new(0)).unwrap();
    let mut p = w.to_vec();
    p.push(0.0);
    net.set_params_flat(&p).unwrap();
    net
}

/// Maximizer of (wᵀx')² over the ℓ∞ ball intersected with [0, 1]^d.
fn linf_linear_maximizer(w: &[f64], x: &[f64], eps: f64) -> Vec<f64> {
    let sign = |v: f64| if v == 0.0 { 0.0 } else { v.signum() };
    let s = sign(w.iter().zip(x).map(|(a, b)| a * b).sum());
    x.iter().zip(w).map(|(xi, wi)| (xi + eps * s * sign(*wi)).clamp(0.0, 1.0)).collect()
}

fn attack_contracts() -> Outcome {
    let mut failures = Vec::new();
    let norms = [Norm::L1, Norm::L2, Norm::Linf];
    let losses = [AttackLoss::L2Logits, AttackLoss::CrossEntropy, AttackLoss::CwMargin];
    let mut worst: f64 = 0.0;
    for case in 0..1000u64 {
        let mut rng = RngState::new(case);
        let (s, t) = (Network::dense(&[6, 8, 3], true, &mut rng).unwrap(), Network::dense(&[6, 8, 3], true, &mut rng).unwrap());
        let x: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        let norm = norms[(case % 3) as usize];
        let scale = match norm {
            Norm::L1 => 3.0,
            Norm::L2 => 1.0,
            Norm::Linf => 0.3,
        };
        let eps = scale * rng.uniform();
        let spec = AttackSpec {
            norm,
            epsilon: eps,
            step_size: eps / 3.0 + 1e-3,
            iterations: 1 + rng.below(10),
            mode: if case % 2 == 0 { AttackMode::Oracle } else { AttackMode::Data },
            loss: losses[((case / 3) % 3) as usize],
            random_init: case % 5 != 0,
            clip: Some((0.0, 1.0)),
            kappa: 0.0,
        };
        let adv = pgd(&Victim::new(&s, &t), &x, &spec, &mut RngState::new(case + 7)).unwrap().x_adv;
        let delta: Vec<f64> = adv.iter().zip(&x).map(|(a, b)| a - b).collect();
        worst = worst.max(norm.of(&delta) - eps);
        worst = worst.max(adv.iter().map(|v| (-v).max(v - 1.0)).fold(f64::NEG_INFINITY, f64::max));
    }
    if worst > 1e-9 {
        failures.push(format!("ball/box violation {worst:.2e}"));
    }

    let mut closed = 0.0f64;
    let zero = linear(&[0.0; 6]);
    for case in 0..100u64 {
        let mut rng = RngState::new(5000 + case);
        let w = rng.normal_vec(6);
        let x: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        let eps = 0.01 + 0.2 * rng.uniform();
        let student = linear(&w);
        let v = Victim::new(&student, &zero);
        let expect = linf_linear_maximizer(&w, &x, eps);
        let spec = AttackSpec { epsilon: eps, step_size: eps / 4.0, iterations: 8, random_init: false, ..AttackSpec::default() };
        let p = pgd(&v, &x, &spec, &mut RngState::new(0)).unwrap().x_adv;
        let f = fgsm(&v, &x, eps, AttackMode::Oracle, AttackLoss::L2Logits).unwrap().x_adv;
        for (a, b) in p.iter().chain(&f).zip(expect.iter().chain(&expect)) {
            closed = closed.max((a - b).abs());
        }
    }
    if closed > 1e-12 {
        failures.push(format!("linear closed form off by {closed:.2e}"));
    }

    let mut identity = true;
    for case in 0..30u64 {
        let mut rng = RngState::new(9000 + case);
        let (s, t) = (Network::dense(&[6, 8, 3], true, &mut rng).unwrap(), Network::dense(&[6, 8, 3], true, &mut rng).unwrap());
        let x: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        for norm in norms {
            let spec = AttackSpec { norm, epsilon: 0.0, step_size: 0.1, iterations: 5, ..AttackSpec::default() };
            identity &= pgd(&Victim::new(&s, &t), &x, &spec, &mut rng).unwrap().x_adv == x;
        }
        identity &= fgsm(&Victim::new(&s, &t), &x, 0.0, AttackMode::Oracle, AttackLoss::L2Logits).unwrap().x_adv == x;
    }
    if !identity {
        failures.push("ε = 0 moved a point".into());
    }

    let mut rng = RngState::new(77);
    let teacher = Network::dense(&[6, 8, 3], true, &mut rng).unwrap();
    let init = Network::dense(&[6, 9, 3], true, &mut rng).unwrap();
    let data = Tensor::new(vec![48, 6], (0..48 * 6).map(|_| rng.uniform()).collect()).unwrap();
    let base = TrainConfig { epochs: 3, batch_size: 16, learning_rate: 0.1, seed: 4, ..TrainConfig::default() };
    let bits = |n: &Network| n.params_flat().iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let st = bits(&train(&base, &teacher, init.clone(), &data, None, &Monitor::default()).unwrap().network);
    for regime in ["at_teacher_target", "at_label_target"] {
        let cfg = TrainConfig { regime: regime.into(), attack: AttackSpec { epsilon: 0.0, ..AttackSpec::default() }, ..base.clone() };
        if bits(&train(&cfg, &teacher, init.clone(), &data, None, &Monitor::default()).unwrap().network) != st {
            failures.push(format!("{regime} with ε = 0 differs from standard training"));
        }
    }
    let detail = if failures.is_empty() {
        format!("1000 ball/box cases (worst excess {worst:.1e}), 100 linear closed-form cases, ε = 0 identity, AT(ε=0) ≡ ST bitwise")
    } else {
        failures.join("; ")
    };
    check(failures.is_empty(), detail)
}

// ---------------------------------------------------------------- 9a

fn least_squares_feature() -> Outcome {
    let mut worst: f64 = 0.0;
    for case in 0..5u64 {
        let mut rng = RngState::new(300 + case);
        let (m, d) = (3, 6);
        let a = rng.normal_vec(m * d);
        let mut model = Network::dense(&[d, m], false, &mut RngState::new(0)).unwrap();
        let mut p = a.clone();
        p.extend(vec![0.0; m]);
        model.set_params_flat(&p).unwrap();
        let teacher = Network::dense(&[d, 2], true, &mut rng).unwrap();
        let target = rng.normal_vec(d);
        let x0 = rng.normal_vec(d);

        // gradient descent from x0 on ‖A x − A t‖² ends at the solution closest to x0
        let am = DMatrix::from_row_slice(m, d, &a);
        let lam_max = (&am * am.transpose()).symmetric_eigen().eigenvalues.max();
        let pinv = am.clone().pseudo_inverse(1e-12).unwrap();
        let (t, x0v) = (DVector::from_vec(target.clone()), DVector::from_vec(x0.clone()));
        let expect = &x0v + &pinv * (&am * (&t - &x0v));

        let cfg = RftConfig { alpha: 0.0, steps: 20_000, step_size: 0.4 / lam_max, tap: FeatureTap::Logits, clip: None, ..RftConfig::default() };
        let got = gen_robust_feature(&target, &x0, &model, &teacher, &cfg).unwrap().x_r;
        worst = worst.max(got.iter().zip(expect.iter()).map(|(g, e)| (g - e).abs()).fold(0.0, f64::max));
    }
    check(worst <= 1e-6, format!("5 random 3×6 linear representations, max deviation {worst:.2e}"))
}

// ---------------------------------------------------------------- 10

fn small_suite(out: &Path) -> ExperimentConfig {
    let mut c = preset("rft").unwrap();
    c.out_dir = out.to_path_buf();
    c.dataset = Some(DatasetConfig::Synthetic { ambient_dim: 8, subspace_dim: 4, radius: 1.0, classes: 4, train_samples: 96, eval_samples: 32 });
    c.teacher.hidden = vec![6, 6];
    c.regime.epochs = 4;
    c.regime.batch_size = 16;
    c.regime.rft.steps = 10;
    c.runs.push(RunConfig { name: "ccat".into(), regime: Some("ccat".into()), rho: Some(10.0), epochs: None, reference: None });
    c.metrics.epoch_grid = vec![2];
    c.metrics.grid_samples = 32;
    c.evaluate.attacks = vec!["pgd-linf".into(), "pgd-l2".into(), "fgsm".into(), "cw".into(), "transfer".into()];
    c.evaluate.n_repeats = 2;
    c.evaluate.samples = 32;
    c
}

fn run_commands(cfg: &ExperimentConfig, commands: &[Command]) -> BTreeMap<String, Vec<u8>> {
    for &c in commands {
        execute(c, cfg.clone(), None, None).unwrap();
    }
    let m = Manifest::read(&cfg.out_dir).unwrap().unwrap();
    m.commands
        .values()
        .flat_map(|c| c.artifacts.keys().cloned())
        .filter(|k| k != "config.toml")
        .map(|k| {
            let bytes = fs::read(cfg.out_dir.join(&k)).unwrap();
            (k, bytes)
        })
        .collect()
}

fn determinism_and_io() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();

    let pipeline = [Command::Train, Command::Evaluate, Command::Specialize];
    let a = run_commands(&small_suite(&tmp.path().join("a")), &pipeline);
    let b = run_commands(&small_suite(&tmp.path().join("b")), &pipeline);
    let mut theory = preset("theory_lowrank").unwrap();
    theory.out_dir = tmp.path().join("ta");
    let ta = run_commands(&theory, &[Command::VerifyTheory]);
    theory.out_dir = tmp.path().join("tb");
    let tb = run_commands(&theory, &[Command::VerifyTheory]);
    let csvs = a.keys().chain(ta.keys()).filter(|k| k.ends_with(".csv")).count();
    if a != b || ta != tb {
        let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).chain(ta.keys().filter(|k| ta.get(*k) != tb.get(*k))).collect();
        failures.push(format!("outputs differ: {differing:?}"));
    }

    let mut rng = RngState::new(8);
    let nets = [Network::dense(&[7, 5, 4, 3], true, &mut rng).unwrap(), Network::conv([3, 6, 6], &[4, 2], 3, 5, true, &mut rng).unwrap()];
    for (i, net) in nets.iter().enumerate() {
        let meta = TrainMeta { epochs: 12, regime: "at_teacher_target".into(), seed: 99 };
        let bytes = encode_checkpoint(net, &meta);
        let back = decode_checkpoint(&bytes).unwrap();
        let path = tmp.path().join(format!("net{i}.ckpt"));
        save_checkpoint(net, &meta, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let same_bits = |n: &Network| n.params_flat().iter().map(|v| v.to_bits()).eq(net.params_flat().iter().map(|v| v.to_bits()));
        if !(same_bits(&back.network) && same_bits(&loaded.network) && back.meta == meta && encode_checkpoint(&back.network, &back.meta) == bytes) {
            failures.push(format!("checkpoint {i} does not round-trip"));
        }
    }

    let cifar = tmp.path().join("cifar");
    fs::create_dir_all(&cifar).unwrap();
    let record = |label: u8| {
        let mut r = vec![label];
        r.extend((0..3072).map(|i| (i % 256) as u8));
        r
    };
    let missing = load_cifar10(&cifar);
    fs::write(cifar.join("data_batch_1.bin"), [record(1), record(2)].concat()).unwrap();
    let short = load_cifar10(&cifar);
    let two = read_cifar_batch(&cifar.join("data_batch_1.bin"));
    let ragged = cifar.join("ragged.bin");
    fs::write(&ragged, [record(1), vec![0; 10]].concat()).unwrap();
    let bad_label = cifar.join("label.bin");
    fs::write(&bad_label, record(CIFAR_CLASSES as u8)).unwrap();
    let loader_ok = matches!(missing, Err(Error::MissingFile(ref p)) if p.ends_with("data_batch_1.bin"))
        && matches!(short, Err(Error::WrongFileSize { len, .. }) if len == 2 * 3073)
        && matches!(read_cifar_batch(&ragged), Err(Error::WrongFileSize { .. }))
        && matches!(read_cifar_batch(&bad_label), Err(Error::InvalidArgument(_)))
        && matches!(two, Ok(ref ds) if ds.labels == [1, 2] && ds.pixels[1] == 1.0 / 255.0);
    if !loader_ok {
        failures.push("CIFAR-10 loader errors".into());
    }
    let detail = if failures.is_empty() {
        format!("{csvs} CSVs byte-identical across reruns, dense and conv checkpoints bitwise, loader errors distinct")
    } else {
        failures.join("; ")
    };
    check(failures.is_empty(), detail)
}

// ---------------------------------------------------------------- 8, 9b

struct CifarRun {
    /// pgd-linf robust accuracy by model label, e.g. `at(30)`.
    robust: BTreeMap<String, f64>,
    mbnc: BTreeMap<(String, usize), f64>,
    pearson: BTreeMap<String, f64>,
    /// (run, epoch) → robust accuracy and MBNC per layer.
    grid: Vec<(String, usize, f64, Vec<f64>)>,
    epochs: usize,
    took: Duration,
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

fn cifar_run(dir: &Path) -> CifarRun {
    let start = Instant::now();
    let mut cfg = on_cifar10(preset("st_vs_at").unwrap(), dir);
    cfg.name = "desk_scale".into();
    cfg.out_dir = std::env::temp_dir().join("splab-acceptance-cifar10");
    for rho in [5.0, 10.0, 20.0] {
        cfg.runs.push(RunConfig { name: format!("ccat_rho{rho}"), regime: Some("ccat".into()), rho: Some(rho), epochs: None, reference: None });
    }
    cfg.runs.push(RunConfig { name: "rft".into(), regime: Some("rft".into()), rho: None, epochs: None, reference: Some("at".into()) });
    cfg.evaluate.attacks = vec!["pgd-linf".into()];
    cfg.evaluate.epsilons.clear();
    for c in [Command::Train, Command::Evaluate, Command::Specialize] {
        execute(c, cfg.clone(), None, None).unwrap();
    }
    let root = &cfg.out_dir;
    let table = rows(&root.join("robust_accuracy.csv"));
    let pgd_row = table.iter().find(|r| r[0] == "pgd-linf").unwrap();
    let robust = table[0]
        .iter()
        .zip(pgd_row)
        .filter_map(|(h, v)| h.strip_suffix("_mean").map(|m| (m.to_string(), v.parse().unwrap())))
        .collect();
    let mbnc = rows(&root.join("mbnc_all.csv"))[1..].iter().map(|r| ((r[0].clone(), r[1].parse().unwrap()), r[2].parse().unwrap())).collect();
    let pearson = rows(&root.join("pearson_layer0.csv"))[1..].iter().filter(|r| !r[1].is_empty()).map(|r| (r[0].clone(), r[1].parse().unwrap())).collect();
    let grid = rows(&root.join("epoch_grid.csv"))[1..]
        .iter()
        .map(|r| (r[0].clone(), r[1].parse().unwrap(), r[3].parse().unwrap(), r[4..].iter().map(|v| v.parse().unwrap()).collect()))
        .collect();
    CifarRun { robust, mbnc, pearson, grid, epochs: cfg.regime.epochs, took: start.elapsed() }
}

const GRID_TOLERANCE: f64 = 0.02;

fn directional(run: &CifarRun) -> Outcome {
    let e = run.epochs;
    let r = |name: &str| run.robust[&format!("{name}({e})")];
    let mut failures = Vec::new();
    let (at, st, label) = (r("at"), r("st_logit"), r("st_label"));
    if !(at > st && st > label) {
        failures.push(format!("(a) robust AT {at:.4}, ST-logit {st:.4}, ST-label {label:.4}"));
    }
    let layers: Vec<usize> = run.mbnc.keys().filter(|(m, _)| *m == format!("at({e})")).map(|(_, l)| *l).collect();
    for l in &layers {
        let (a, s) = (run.mbnc[&(format!("at({e})"), *l)], run.mbnc[&(format!("st_logit({e})"), *l)]);
        if !(a > s) {
            failures.push(format!("(b) layer {l} MBNC AT {a:.4} vs ST {s:.4}"));
        }
    }
    match run.pearson.get(&format!("st_logit({e})")) {
        Some(p) if *p < -0.5 => {}
        p => failures.push(format!("(c) Pearson(NC, ε_in) = {p:?}")),
    }
    let st_grid: Vec<_> = run.grid.iter().filter(|g| g.0 == "st_logit").collect();
    for w in st_grid.windows(2) {
        if w[1].2 < w[0].2 - GRID_TOLERANCE {
            failures.push(format!("(d) robust accuracy falls {:.4} → {:.4} between epochs {} and {}", w[0].2, w[1].2, w[0].1, w[1].1));
        }
        for (l, (p, q)) in w[0].3.iter().zip(&w[1].3).enumerate() {
            if *q < p - GRID_TOLERANCE {
                failures.push(format!("(d) layer {l} MBNC falls {p:.4} → {q:.4} between epochs {} and {}", w[0].1, w[1].1));
            }
        }
    }
    for rho in ["5", "10", "20"] {
        let c = r(&format!("ccat_rho{rho}"));
        if !(c < at) {
            failures.push(format!("(e) CCAT ρ={rho} {c:.4} vs AT {at:.4}"));
        }
    }
    let detail = if failures.is_empty() { format!("robust AT {at:.4} > ST-logit {st:.4} > ST-label {label:.4}; (b)-(e) hold") } else { failures.join("; ") };
    check(failures.is_empty() && run.took <= 240 * MINUTE, format!("{detail}; pipeline {:.0} min", run.took.as_secs_f64() / 60.0))
}

fn rft_beats_standard(run: &CifarRun) -> Outcome {
    let e = run.epochs;
    let (rft, st) = (run.robust[&format!("rft({e})")], run.robust[&format!("st_logit({e})")]);
    check(rft > st, format!("robust accuracy RFT {rft:.4} vs ST-logit {st:.4} at {e} epochs"))
}

fn main() {
    let mut ok = true;
    let quick = 10 * MINUTE;

    ok &= criterion("1", "gradient correctness", MINUTE, gradient_check);

    let opts = VerifyOptions::default();
    let mut full = None;
    ok &= criterion("2", "theorem 1, full rank", quick, || {
        let t = trained(&InstanceConfig::full_rank());
        let report = verify_theorem1(&t.inst, None, &opts).unwrap();
        let out = check(report.verdict == Verdict::Pass, format!("{}: {}", report.verdict, theorem1_line(&report)));
        full = Some(t);
        out
    });
    let mut low = None;
    ok &= criterion("3", "theorem 1, low rank", quick, || {
        let t = trained(&InstanceConfig::low_rank());
        let report = verify_theorem1_lowrank(&t.inst, &opts).unwrap();
        let drift = report.drift.iter().copied().fold(0.0, f64::max);
        let out = check(report.verdict == Verdict::Pass, format!("{}: {}, max out-of-plane drift {drift:.1e}", report.verdict, theorem1_line(&report)));
        low = Some(t);
        out
    });
    ok &= criterion("4", "theorem 2 bound", quick, || {
        let mut parts = Vec::new();
        let mut pass = true;
        for (name, t) in [("full rank", &full), ("low rank", &low)] {
            let Some(t) = t else {
                pass = false;
                parts.push(format!("{name}: no instance"));
                continue;
            };
            let h = history(t, &opts);
            let (constant, trend) = theorem2_verdicts(&h);
            let last = h.last().unwrap();
            let worst = last.teachers.iter().map(|n| n.best_in_plane_sin / n.bound).fold(0.0, f64::max);
            pass &= trend == Verdict::Pass;
            parts.push(format!("{name}: constant-level {constant}, trend-level {trend}, max sin/bound {worst:.3}"));
        }
        check(pass, parts.join("; "))
    });
    ok &= criterion("5", "corollary 1, over-realized", quick, || {
        let t = trained(&InstanceConfig::over_realized());
        let r = verify_corollary1(&t.inst, &t.inst.basis, &opts).unwrap();
        let free: Vec<f64> = r.students.iter().filter(|n| n.c0 > splab::theory::C0_FLOOR).map(|n| n.fanout_norm).collect();
        check(
            r.qualitative == Verdict::Pass,
            format!(
                "{}: g1_sup {:.2e}, {} nodes with c0 above the floor, largest fan-out {:.2e} vs median specialized {:.3}",
                r.qualitative,
                r.g1_sup,
                free.len(),
                free.iter().copied().fold(0.0, f64::max),
                r.median_specialized_fanout.unwrap_or(f64::NAN)
            ),
        )
    });
    ok &= criterion("6", "metric identities", MINUTE, metric_identities);
    ok &= criterion("7", "attack contracts", 2 * MINUTE, attack_contracts);

    match std::env::var_os("CIFAR10_DIR").map(PathBuf::from) {
        Some(dir) => {
            let run = cifar_run(&dir);
            ok &= criterion("8", "directional reproduction (CIFAR-10)", Duration::MAX, || directional(&run));
            ok &= criterion("9a", "robust feature least squares", MINUTE, least_squares_feature);
            ok &= criterion("9b", "RFT above ST (CIFAR-10)", Duration::MAX, || rft_beats_standard(&run));
        }
        None => {
            not_run("8", "directional reproduction (CIFAR-10)", "set CIFAR10_DIR to the binary batches");
            ok &= criterion("9a", "robust feature least squares", MINUTE, least_squares_feature);
            not_run("9b", "RFT above ST (CIFAR-10)", "set CIFAR10_DIR to the binary batches");
        }
    }
    ok &= criterion("10", "determinism and I/O", 2 * MINUTE, determinism_and_io);

    if !ok {
        std::process::exit(1);
    }
}
