//! Experiment configuration: a TOML document whose sections mirror the
//! pipeline stages.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use splab::attacks::{attack_names, AttackSpec};
use splab::data::Augment;
use splab::theory::{BenchTrainer, InstanceConfig};
use splab::training::{LrSchedule, RftConfig, TrainConfig, REGIMES};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub student: StudentConfig,
    #[serde(default)]
    pub regime: RegimeConfig,
    /// Variants of `regime`; empty means a single run named after it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<RunConfig>,
    /// Training attack for adversarial regimes and base spec for evaluation.
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Uniform samples of a ball in a random subspace.
    Synthetic {
        ambient_dim: usize,
        subspace_dim: usize,
        #[serde(default = "one")]
        radius: f64,
        #[serde(default = "ten")]
        classes: usize,
        train_samples: usize,
        eval_samples: usize,
    },
    /// The CIFAR-10 binary batches; the first images of each split are used.
    Cifar10 {
        dir: PathBuf,
        train_images: usize,
        eval_images: usize,
        /// Leading patch PCA directions kept as the input subspace.
        #[serde(default = "patch_basis_dim")]
        patch_basis_dim: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn ten() -> usize {
    10
}

fn patch_basis_dim() -> usize {
    17
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Dense,
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub arch: Arch,
    /// Hidden widths (dense) or channel counts (conv).
    pub hidden: Vec<usize>,
    pub kernel: usize,
    pub bias: bool,
    /// Load instead of building; the architecture fields are then ignored.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Fit to the dataset labels before pruning.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_ratio: Option<f64>,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self { arch: Arch::Dense, hidden: vec![16, 16], kernel: 3, bias: true, checkpoint: None, fit: None, prune_ratio: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    /// Student widths are ⌈scale × pruned teacher widths⌉.
    pub width_scale: f64,
    /// Evaluate this checkpoint instead of the trained runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self { width_scale: 1.1, checkpoint: None }
    }
}

/// The training fields of [`TrainConfig`] other than the attack and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeConfig {
    pub regime: String,
    pub rho: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub augment: Vec<Augment>,
    pub rft: RftConfig,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            regime: t.regime,
            rho: t.rho,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lr_schedule: t.lr_schedule,
            augment: t.augment,
            rft: t.rft,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Earlier run whose final student is the robust model for `rft`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Registered attack names, plus `transfer` for the surrogate attack.
    pub attacks: Vec<String>,
    /// Per-attack budget overrides; other attacks use `attack.epsilon`.
    pub epsilons: BTreeMap<String, f64>,
    pub n_repeats: usize,
    /// Evaluation rows attacked.
    pub samples: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            attacks: ["pgd-linf", "pgd-l2", "pgd-l1", "fgsm", "cw"].map(String::from).to_vec(),
            epsilons: BTreeMap::new(),
            n_repeats: 1,
            samples: 100,
        }
    }
}

pub const TRANSFER: &str = "transfer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Epochs at which students are kept and measured.
    pub epoch_grid: Vec<usize>,
    pub grid_attack: String,
    pub grid_samples: usize,
    pub specialization: bool,
    pub eps_in_out: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { epoch_grid: Vec::new(), grid_attack: "pgd-linf".into(), grid_samples: 100, specialization: true, eps_in_out: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryInit {
    #[default]
    Random,
    /// Start from an exact copy of the teacher.
    TeacherCopy,
}

/// The synthetic benchmark. The instance seed is replaced by the
/// experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub instance: InstanceConfig,
    pub trainer: BenchTrainer,
    pub n_probe: usize,
    pub init: TheoryInit,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self { instance: InstanceConfig::default(), trainer: BenchTrainer::default(), n_probe: 4096, init: TheoryInit::Random }
    }
}

/// A validation failure tied to a dotted key such as `regime.epochs` or
/// `runs[1].regime`.
#[derive(Debug)]
pub struct Invalid {
    pub key: String,
    pub msg: String,
}

fn invalid(key: impl Into<String>, msg: impl Into<String>) -> Invalid {
    Invalid { key: key.into(), msg: msg.into() }
}

impl ExperimentConfig {
    pub fn runs(&self) -> Vec<RunConfig> {
        if self.runs.is_empty() {
            vec![RunConfig { name: self.regime.regime.clone(), regime: None, rho: None, epochs: None, reference: None }]
        } else {
            self.runs.clone()
        }
    }

    pub fn train_config(&self, run: &RunConfig) -> TrainConfig {
        let r = &self.regime;
        let epochs = run.epochs.unwrap_or(r.epochs);
        TrainConfig {
            regime: run.regime.clone().unwrap_or_else(|| r.regime.clone()),
            rho: run.rho.unwrap_or(r.rho),
            epochs,
            batch_size: r.batch_size,
            learning_rate: r.learning_rate,
            lr_schedule: r.lr_schedule,
            seed: self.seed,
            augment: r.augment.clone(),
            attack: self.attack.clone(),
            rft: r.rft.clone(),
            snapshot_epochs: self.grid_for(epochs),
        }
    }

    /// Grid epochs a run of `epochs` reaches, always ending with `epochs`.
    pub fn grid_for(&self, epochs: usize) -> Vec<usize> {
        let mut g: Vec<usize> = self.metrics.epoch_grid.iter().copied().filter(|&e| e >= 1 && e <= epochs).collect();
        g.push(epochs);
        g.sort_unstable();
        g.dedup();
        g
    }

    pub fn theory_instance(&self) -> Option<InstanceConfig> {
        self.theory.as_ref().map(|t| InstanceConfig { seed: self.seed, ..t.instance.clone() })
    }

    /// Semantic checks that need no data.
    pub fn validate(&self) -> Result<(), Invalid> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("name", "name must be a non-empty file-name component"));
        }
        if let Some(ds) = &self.dataset {
            match ds {
                DatasetConfig::Synthetic { ambient_dim, subspace_dim, radius, classes, train_samples, eval_samples } => {
                    if *subspace_dim == 0 || subspace_dim > ambient_dim {
                        return Err(invalid("dataset.subspace_dim", format!("subspace_dim must be in 1..={ambient_dim}")));
                    }
                    if !(*radius > 0.0) {
                        return Err(invalid("dataset.radius", "radius must be positive"));
                    }
                    if *classes < 2 {
                        return Err(invalid("dataset.classes", "at least 2 classes are needed"));
                    }
                    if *train_samples == 0 || *eval_samples == 0 {
                        return Err(invalid("dataset.train_samples", "train_samples and eval_samples must be ≥ 1"));
                    }
                    if self.attack.clip.is_some() {
                        return Err(invalid("attack.clip", "synthetic data are not images; set clip = \"none\""));
                    }
                }
                DatasetConfig::Cifar10 { dir, train_images, eval_images, patch_basis_dim } => {
                    if !dir.is_dir() {
                        return Err(invalid("dataset.dir", format!("{} is not a directory", dir.display())));
                    }
                    if *train_images == 0 || *eval_images == 0 {
                        return Err(invalid("dataset.train_images", "train_images and eval_images must be ≥ 1"));
                    }
                    if !(1..=27).contains(patch_basis_dim) {
                        return Err(invalid("dataset.patch_basis_dim", "patch_basis_dim must be in 1..=27"));
                    }
                }
            }
        }
        let t = &self.teacher;
        if let Some(p) = &t.checkpoint {
            if !p.is_file() {
                return Err(invalid("teacher.checkpoint", format!("{} does not exist", p.display())));
            }
        } else {
            if t.hidden.is_empty() || t.hidden.contains(&0) {
                return Err(invalid("teacher.hidden", "hidden widths must be non-empty and ≥ 1"));
            }
            if t.arch == Arch::Conv && t.kernel == 0 {
                return Err(invalid("teacher.kernel", "kernel must be ≥ 1"));
            }
        }
        if let Some(f) = &t.fit {
            if f.epochs == 0 || f.batch_size == 0 || !(f.learning_rate > 0.0) {
                return Err(invalid("teacher.fit", "fit needs epochs, batch_size ≥ 1 and a positive learning_rate"));
            }
            if !matches!(self.dataset, Some(DatasetConfig::Cifar10 { .. })) {
                return Err(invalid("teacher.fit", "fitting needs a labelled dataset"));
            }
        }
        if let Some(r) = t.prune_ratio {
            if !(0.0..1.0).contains(&r) {
                return Err(invalid("teacher.prune_ratio", "prune_ratio must be in [0, 1)"));
            }
        }
        if !(self.student.width_scale > 0.0) {
            return Err(invalid("student.width_scale", "width_scale must be positive"));
        }
        if let Some(p) = &self.student.checkpoint {
            if !p.is_file() {
                return Err(invalid("student.checkpoint", format!("{} does not exist", p.display())));
            }
        }
        self.validate_runs()?;
        self.attack.validate().map_err(|e| invalid("attack", e.to_string()))?;
        let known = attack_names();
        let ev = &self.evaluate;
        for (i, a) in ev.attacks.iter().enumerate() {
            if a != TRANSFER && !known.contains(&a.as_str()) {
                return Err(invalid(format!("evaluate.attacks[{i}]"), format!("unknown attack '{a}' (known: {}, {TRANSFER})", known.join(", "))));
            }
        }
        for (name, eps) in &ev.epsilons {
            if !ev.attacks.contains(name) {
                return Err(invalid("evaluate.epsilons", format!("budget given for unused attack '{name}'")));
            }
            if !(*eps >= 0.0) || !eps.is_finite() {
                return Err(invalid("evaluate.epsilons", format!("budget {eps} for '{name}' must be finite and ≥ 0")));
            }
        }
        if ev.n_repeats == 0 || ev.samples == 0 {
            return Err(invalid("evaluate.n_repeats", "n_repeats and samples must be ≥ 1"));
        }
        let m = &self.metrics;
        if !known.contains(&m.grid_attack.as_str()) {
            return Err(invalid("metrics.grid_attack", format!("unknown attack '{}'", m.grid_attack)));
        }
        if m.grid_samples == 0 {
            return Err(invalid("metrics.grid_samples", "grid_samples must be ≥ 1"));
        }
        if m.epoch_grid.contains(&0) {
            return Err(invalid("metrics.epoch_grid", "epochs are counted from 1"));
        }
        if let Some(th) = &self.theory {
            let inst = self.theory_instance().expect("theory present");
            inst.validate().map_err(|e| invalid("theory.instance", e.to_string()))?;
            if th.init == TheoryInit::TeacherCopy && inst.student_nodes != inst.teacher_nodes {
                return Err(invalid("theory.instance.student_nodes", "a teacher copy has teacher_nodes nodes"));
            }
            let tr = &th.trainer;
            if !(tr.learning_rate > 0.0) || !(0.0..1.0).contains(&tr.momentum) || !(tr.target_g1 >= 0.0) {
                return Err(invalid("theory.trainer", "trainer needs learning_rate > 0, momentum in [0, 1) and target_g1 ≥ 0"));
            }
            if th.n_probe == 0 {
                return Err(invalid("theory.n_probe", "n_probe must be ≥ 1"));
            }
        }
        Ok(())
    }

    fn validate_runs(&self) -> Result<(), Invalid> {
        let runs = self.runs();
        for (i, run) in runs.iter().enumerate() {
            let key = |k: &str| if self.runs.is_empty() { format!("regime.{k}") } else { format!("runs[{i}].{k}") };
            if run.name.is_empty() || run.name.contains(['/', '\\']) {
                return Err(invalid(key("name"), "run names must be non-empty file-name components"));
            }
            if runs[..i].iter().any(|r| r.name == run.name) {
                return Err(invalid(key("name"), format!("duplicate run '{}'", run.name)));
            }
            let tc = self.train_config(run);
            if !REGIMES.contains(&tc.regime.as_str()) {
                return Err(invalid(key("regime"), format!("unknown regime '{}' (known: {})", tc.regime, REGIMES.join(", "))));
            }
            if tc.epochs == 0 {
                return Err(invalid(if run.epochs.is_some() { key("epochs") } else { "regime.epochs".into() }, "epochs must be ≥ 1"));
            }
            if tc.batch_size == 0 {
                return Err(invalid("regime.batch_size", "batch_size must be ≥ 1"));
            }
            if !(tc.learning_rate >= 0.0) || !tc.learning_rate.is_finite() {
                return Err(invalid("regime.learning_rate", "learning_rate must be finite and ≥ 0"));
            }
            if tc.regime == "ccat" && !(tc.rho > 0.0) {
                return Err(invalid(if run.rho.is_some() { key("rho") } else { "regime.rho".into() }, "ccat needs rho > 0"));
            }
            match (&run.reference, tc.regime == "rft") {
                (None, true) => return Err(invalid(key("reference"), "rft needs a reference run")),
                (Some(r), true) if !runs[..i].iter().any(|p| &p.name == r) => {
                    return Err(invalid(key("reference"), format!("reference '{r}' is not an earlier run")))
                }
                (Some(_), false) => return Err(invalid(key("reference"), "only rft runs take a reference")),
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 of the serialized config with the output directory blanked,
    /// so relocating an experiment keeps its hash.
    pub fn hash(&self) -> String {
        let canonical = Self { out_dir: PathBuf::new(), ..self.clone() };
        let text = toml::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parses and validates; errors carry `path:line:column`.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let (line, col) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            CliError::Config { origin: origin.to_path_buf(), line, col, msg: e.message().to_string() }
        })?;
        cfg.validate().map_err(|inv| {
            let line = locate(text, &inv.key).unwrap_or(0);
            CliError::Config { origin: origin.to_path_buf(), line, col: 0, msg: format!("{}: {}", inv.key, inv.msg) }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config { origin: path.to_path_buf(), line: 0, col: 0, msg: e.to_string() })?;
        Self::parse(&text, path)
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// 1-based line of a dotted key: the key's own line when written out, else
/// the line of its table header. Dotted keys inside inline tables are not
/// resolved.
pub fn locate(text: &str, key: &str) -> Option<usize> {
    let parts: Vec<&str> = key.split('.').collect();
    let (leaf, tables) = parts.split_last()?;
    let leaf: &str = leaf.split('[').next().unwrap_or(leaf);
    // header wanted, e.g. "runs" with index 1 for runs[1]
    let wanted: Vec<(String, Option<usize>)> = tables
        .iter()
        .map(|t| match t.split_once('[') {
            Some((n, i)) => (n.to_string(), i.trim_end_matches(']').parse().ok()),
            None => (t.to_string(), None),
        })
        .collect();
    let header_name = wanted.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(".");
    let index = wanted.iter().find_map(|(_, i)| *i);
    let mut current = String::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut header_line = None;
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(h) = line.strip_prefix("[[").and_then(|l| l.strip_suffix("]]")) {
            let h = h.trim().to_string();
            let n = seen.entry(h.clone()).or_insert(0);
            current = if Some(*n) == index || index.is_none() { h } else { format!("{h}#skip") };
            *n += 1;
        } else if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim().to_string();
        } else if let Some((k, _)) = line.split_once('=') {
            if current == header_name && k.trim() == leaf {
                return Some(no + 1);
            }
            continue;
        } else {
            continue;
        }
        if current == header_name && header_line.is_none() {
            header_line = Some(no + 1);
        }
    }
    if header_line.is_some() || !header_name.is_empty() {
        return header_line;
    }
    // a whole section, e.g. `attack`
    text.lines().position(|l| {
        let l = l.split('#').next().unwrap_or("").trim();
        l.trim_start_matches('[').trim_end_matches(']').trim() == leaf && l.starts_with('[')
    }).map(|i| i + 1)
}
