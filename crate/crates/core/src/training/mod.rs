//! Training regimes and the SGD loop that drives them.

mod regimes;
mod rft;

use std::io::Write;

use log::info;
use serde::{Deserialize, Serialize};

use crate::attacks::{clean_agreement, robust_accuracy, Attack, AttackSpec};
use crate::data::{augment, Augment};
use crate::error::{Error, Result};
use crate::network::{Network, ParamGrads};
use crate::numerics::{RngState, Tensor};
use crate::specialization::nc_report;

pub use regimes::*;
pub use rft::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// ×0.1 at 50% and again at 75% of the epochs.
    StepDecay,
}

impl LrSchedule {
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::StepDecay => {
                let mut lr = base;
                if 2 * epoch >= epochs {
                    lr *= 0.1;
                }
                if 4 * epoch >= 3 * epochs {
                    lr *= 0.1;
                }
                lr
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub regime: String,
    /// CCAT exponent ρ.
    pub rho: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub augment: Vec<Augment>,
    pub attack: AttackSpec,
    pub rft: RftConfig,
    /// Epochs (1-based) after which a copy of the student is kept.
    pub snapshot_epochs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: "st_logit".into(),
            rho: 10.0,
            epochs: 1,
            batch_size: 128,
            learning_rate: 0.01,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            augment: Vec::new(),
            attack: AttackSpec::default(),
            rft: RftConfig::default(),
            snapshot_epochs: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be ≥ 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {} must be finite and ≥ 0", self.learning_rate)));
        }
        self.attack.validate()
    }

    pub fn regime(&self, reference: Option<&Network>) -> Result<Box<dyn TrainingRegime>> {
        make_regime(&self.regime, &self.attack, self.rho, &self.rft, reference)
    }
}

/// One SGD step on the mean loss of `batch`. Returns the mean loss.
pub fn train_step(
    student: &mut Network,
    teacher: &Network,
    batch: &[Vec<f64>],
    regime: &dyn TrainingRegime,
    lr: f64,
    rng: &mut RngState,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut total = ParamGrads::zeros_like(student);
    let mut loss = 0.0;
    for x in batch {
        let (l, g) = regime.example(student, teacher, x, rng)?;
        loss += l;
        total.add_scaled(&g, 1.0);
    }
    let scale = 1.0 / batch.len() as f64;
    loss *= scale;
    total.scale(scale);
    if !loss.is_finite() || !total.is_finite() {
        return Err(Error::NonFiniteLoss(format!("regime {} produced loss {loss} on a batch of {}", regime.name(), batch.len())));
    }
    student.apply_gradient(&total, lr);
    Ok(loss)
}

/// Standard training step (`st_logit` or `st_label`).
pub fn st_step(student: &mut Network, teacher: &Network, batch: &[Vec<f64>], cfg: &TrainConfig) -> Result<f64> {
    let regime = cfg.regime(None)?;
    train_step(student, teacher, batch, regime.as_ref(), cfg.learning_rate, &mut RngState::stream(cfg.seed, 1))
}

/// Adversarial training step; `cfg.regime` selects label- or teacher-target.
pub fn at_step(student: &mut Network, teacher: &Network, batch: &[Vec<f64>], cfg: &TrainConfig, rng: &mut RngState) -> Result<f64> {
    let regime = cfg.regime(None)?;
    train_step(student, teacher, batch, regime.as_ref(), cfg.learning_rate, rng)
}

/// Confidence-calibrated adversarial training step.
pub fn ccat_step(student: &mut Network, teacher: &Network, batch: &[Vec<f64>], cfg: &TrainConfig, rng: &mut RngState) -> Result<f64> {
    if !(cfg.rho > 0.0) {
        return Err(Error::InvalidArgument(format!("ccat needs ρ > 0, got {}", cfg.rho)));
    }
    let regime = Ccat { rho: cfg.rho, attack: cfg.attack.clone() };
    train_step(student, teacher, batch, &regime, cfg.learning_rate, rng)
}

/// Optional per-epoch measurements.
#[derive(Default)]
pub struct Monitor<'a> {
    pub eval: Option<&'a Tensor>,
    pub attack: Option<&'a dyn Attack>,
    pub specialization: bool,
    /// Measure every `every` epochs (and always after the last); 0 disables.
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub regime: String,
    pub loss: f64,
    pub clean_agreement: Option<f64>,
    pub robust_acc: Option<f64>,
    /// MBNC per hidden layer, empty when not measured.
    pub mbnc: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<EpochRecord>,
    /// (epoch, student) pairs at the configured snapshot epochs.
    pub snapshots: Vec<(usize, Network)>,
    /// Training inputs actually used (differs from the input for rft).
    pub dataset: Option<Tensor>,
}

/// Full training loop with seeded shuffling. Random streams of `cfg.seed`:
/// 0 shuffling, 1 attacks, 2 augmentation, 3 dataset preparation.
pub fn train(
    cfg: &TrainConfig,
    teacher: &Network,
    init: Network,
    data: &Tensor,
    reference: Option<&Network>,
    monitor: &Monitor,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.rows() == 0 || data.cols() != init.input_len() || teacher.input_len() != init.input_len() {
        return Err(crate::error::shape_err(format!("non-empty N×{} data", init.input_len()), format!("{:?}", data.shape())));
    }
    let regime = cfg.regime(reference)?;
    let mut shuffle_rng = RngState::stream(cfg.seed, 0);
    let mut attack_rng = RngState::stream(cfg.seed, 1);
    let mut aug_rng = RngState::stream(cfg.seed, 2);
    let prepared = regime.prepare_dataset(teacher, data, &mut RngState::stream(cfg.seed, 3))?;
    let data = prepared.as_ref().unwrap_or(data);
    let shape = init.input_shape().to_vec();
    let mut student = init;
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();
    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let lr = cfg.lr_schedule.rate(cfg.learning_rate, epoch - 1, cfg.epochs);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let mut x = data.row(i).to_vec();
                for a in &cfg.augment {
                    x = augment(&x, &shape, a, &mut aug_rng)?;
                }
                // augmented inputs stay inside the attack's box
                if let (Some((lo, hi)), false) = (cfg.attack.clip, cfg.augment.is_empty()) {
                    x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
                }
                batch.push(x);
            }
            let l = train_step(&mut student, teacher, &batch, regime.as_ref(), lr, &mut attack_rng)
                .map_err(|e| match e {
                    Error::NonFiniteLoss(m) => Error::NonFiniteLoss(format!("epoch {epoch}: {m}")),
                    e => e,
                })?;
            loss_sum += l * chunk.len() as f64;
        }
        let mut rec = EpochRecord {
            epoch,
            regime: regime.name().to_string(),
            loss: loss_sum / data.rows() as f64,
            clean_agreement: None,
            robust_acc: None,
            mbnc: Vec::new(),
        };
        if monitor.every > 0 && (epoch % monitor.every == 0 || epoch == cfg.epochs) {
            if let Some(eval) = monitor.eval {
                rec.clean_agreement = Some(clean_agreement(&student, teacher, eval)?);
                if let Some(a) = monitor.attack {
                    rec.robust_acc = Some(robust_accuracy(&student, teacher, eval, a, cfg.seed)?);
                }
                if monitor.specialization {
                    rec.mbnc = nc_report(&student, teacher, eval)?.iter().map(|l| l.mbnc).collect();
                }
            }
        }
        info!("epoch {epoch}/{} {} loss {:.6e}", cfg.epochs, rec.regime, rec.loss);
        history.push(rec);
        if cfg.snapshot_epochs.contains(&epoch) {
            snapshots.push((epoch, student.clone()));
        }
    }
    Ok(TrainOutcome { network: student, history, snapshots, dataset: prepared })
}

/// Cross-entropy SGD on dataset labels, for fitting a teacher. Uses the
/// epochs, batch size, learning rate, schedule and seed of `cfg`; returns the
/// network and the mean loss per epoch.
pub fn fit_labels(cfg: &TrainConfig, init: Network, data: &Tensor, labels: &[u8]) -> Result<(Network, Vec<f64>)> {
    cfg.validate()?;
    if data.rows() == 0 || data.rows() != labels.len() || data.cols() != init.input_len() {
        return Err(crate::error::shape_err(format!("N×{} data with N labels", init.input_len()), format!("{:?} with {}", data.shape(), labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y as usize >= init.output_dim()) {
        return Err(Error::InvalidArgument(format!("label {y} with {} outputs", init.output_dim())));
    }
    let mut net = init;
    let mut rng = RngState::stream(cfg.seed, 0);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let lr = cfg.lr_schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut total = ParamGrads::zeros_like(&net);
            let mut loss = 0.0;
            for &i in chunk {
                let tr = net.forward(data.row(i))?;
                let (l, g) = crate::network::loss::cross_entropy(tr.logits(), labels[i] as usize);
                loss += l;
                total.add_scaled(&net.backward(&tr, &g, true)?.params.expect("requested"), 1.0);
            }
            total.scale(1.0 / chunk.len() as f64);
            if !loss.is_finite() || !total.is_finite() {
                return Err(Error::NonFiniteLoss(format!("label fit epoch {}", epoch + 1)));
            }
            net.apply_gradient(&total, lr);
            sum += loss;
        }
        losses.push(sum / data.rows() as f64);
        info!("label fit epoch {}/{} loss {:.6e}", epoch + 1, cfg.epochs, losses[epoch]);
    }
    Ok((net, losses))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with columns epoch, regime, loss, clean_agreement, robust_acc,
/// mbnc_0 … mbnc_{L−1}; unmeasured cells are empty.
pub fn write_history_csv(mut w: impl Write, history: &[EpochRecord]) -> Result<()> {
    let layers = history.iter().map(|r| r.mbnc.len()).max().unwrap_or(0);
    let mut header = String::from("epoch,regime,loss,clean_agreement,robust_acc");
    for l in 0..layers {
        header.push_str(&format!(",mbnc_{l}"));
    }
    writeln!(w, "{header}")?;
    for r in history {
        let mut line = format!("{},{},{},{},{}", r.epoch, r.regime, r.loss, opt(r.clean_agreement), opt(r.robust_acc));
        for l in 0..layers {
            line.push(',');
            line.push_str(&opt(r.mbnc.get(l).copied()));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
