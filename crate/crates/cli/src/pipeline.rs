//! Data, teacher and student preparation shared by the commands.

use std::io::Write;
use std::path::{Path, PathBuf};

use splab::data::{extract_patches, gen_synthetic, load_cifar10, SyntheticSpec};
use splab::network::{encode_checkpoint, load_checkpoint, Layer, Network, TrainMeta};
use splab::numerics::{pca_fit, OffsetMode, RngState, SubspaceBasis, Tensor};
use splab::training::{fit_labels, TrainConfig};

use crate::config::{Arch, DatasetConfig, ExperimentConfig};
use crate::output::OutDir;
use crate::CliError;

pub const TEACHER_CKPT: &str = "teacher.ckpt";
pub const SURROGATE_CKPT: &str = "surrogate.ckpt";
/// Images used for the patch PCA.
const PCA_IMAGES: usize = 200;
const PRUNE_PROBES: usize = 256;

pub struct Data {
    pub train: Tensor,
    pub labels: Option<Vec<u8>>,
    pub eval: Tensor,
    /// Input subspace of the first layer's receptive field.
    pub basis: Option<SubspaceBasis>,
    pub input_shape: Vec<usize>,
    pub classes: usize,
}

pub fn head_rows(t: &Tensor, n: usize) -> Tensor {
    let n = n.min(t.rows());
    Tensor::new(vec![n, t.cols()], t.data()[..n * t.cols()].to_vec()).expect("prefix of a matrix")
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Data, CliError> {
    let ds = cfg.dataset.as_ref().ok_or_else(|| CliError::Validation("this command needs a [dataset] section".into()))?;
    match ds {
        DatasetConfig::Synthetic { ambient_dim, subspace_dim, radius, classes, train_samples, eval_samples } => {
            let spec = SyntheticSpec::ball(*ambient_dim, *subspace_dim, *radius, train_samples + eval_samples, cfg.seed);
            let (all, basis) = gen_synthetic(&spec)?;
            let d = *ambient_dim;
            let split = train_samples * d;
            Ok(Data {
                train: Tensor::new(vec![*train_samples, d], all.data()[..split].to_vec())?,
                labels: None,
                eval: Tensor::new(vec![*eval_samples, d], all.data()[split..].to_vec())?,
                basis: Some(basis),
                input_shape: vec![d],
                classes: *classes,
            })
        }
        DatasetConfig::Cifar10 { dir, train_images, eval_images, patch_basis_dim } => {
            let (train, test) = load_cifar10(dir)?;
            let (train, test) = (train.head(*train_images), test.head(*eval_images));
            let patches = extract_patches(&train.head(PCA_IMAGES))?;
            let full = pca_fit(&patches.patches, OffsetMode::Zero)?;
            let basis = full.truncate(*patch_basis_dim)?;
            Ok(Data {
                train: train.as_matrix(),
                labels: Some(train.labels.clone()),
                eval: test.as_matrix(),
                basis: Some(basis),
                input_shape: train.shape().to_vec(),
                classes: splab::data::CIFAR_CLASSES,
            })
        }
    }
}

fn checkpoint_bytes(net: &Network, epochs: usize, regime: &str, seed: u64) -> Vec<u8> {
    encode_checkpoint(net, &TrainMeta { epochs: epochs as u64, regime: regime.into(), seed })
}

/// Loads or builds (then fits and prunes) the teacher and stores it.
pub fn prepare_teacher(cfg: &ExperimentConfig, data: &Data, out: &mut OutDir) -> Result<Network, CliError> {
    let t = &cfg.teacher;
    let net = if let Some(p) = &t.checkpoint {
        load_checkpoint(p)?.network
    } else {
        let mut rng = RngState::stream(cfg.seed, 1000);
        let mut net = match t.arch {
            Arch::Dense => {
                let mut dims = vec![data.input_shape.iter().product()];
                dims.extend(&t.hidden);
                dims.push(data.classes);
                Network::dense(&dims, t.bias, &mut rng)?
            }
            Arch::Conv => {
                let shape: [usize; 3] = data.input_shape.clone().try_into().map_err(|_| CliError::Validation("conv teachers need image data".into()))?;
                Network::conv(shape, &t.hidden, t.kernel, data.classes, t.bias, &mut rng)?
            }
        };
        if let (Some(fit), Some(labels)) = (&t.fit, &data.labels) {
            let tc = TrainConfig { epochs: fit.epochs, batch_size: fit.batch_size, learning_rate: fit.learning_rate, seed: cfg.seed, ..TrainConfig::default() };
            let (fitted, losses) = fit_labels(&tc, net, &data.train, labels)?;
            net = fitted;
            out.csv("teacher_fit.csv", |w| {
                writeln!(w, "epoch,loss")?;
                for (e, l) in losses.iter().enumerate() {
                    writeln!(w, "{},{l}", e + 1)?;
                }
                Ok(())
            })?;
        }
        if let Some(ratio) = t.prune_ratio {
            let probe: Vec<Vec<f64>> = (0..data.train.rows().min(PRUNE_PROBES)).map(|i| data.train.row(i).to_vec()).collect();
            let (pruned, rep) = net.prune_inactive(ratio, &probe)?;
            net = pruned;
            out.csv("prune.csv", |w| {
                writeln!(w, "layer,width_before,width_after,max_logit_delta")?;
                for (l, (b, a)) in rep.widths_before.iter().zip(&rep.widths_after).enumerate() {
                    writeln!(w, "{l},{b},{a},{}", rep.max_logit_delta)?;
                }
                Ok(())
            })?;
        }
        net
    };
    if net.input_shape() != data.input_shape.as_slice() || net.output_dim() != data.classes {
        return Err(CliError::Runtime(format!(
            "teacher maps {:?} → {} but the data are {:?} with {} classes",
            net.input_shape(),
            net.output_dim(),
            data.input_shape,
            data.classes
        )));
    }
    out.write(TEACHER_CKPT, &checkpoint_bytes(&net, 0, "teacher", cfg.seed))?;
    Ok(net)
}

/// A fresh network shaped like `teacher` with ⌈scale × width⌉ hidden nodes.
pub fn student_like(teacher: &Network, scale: f64, rng: &mut RngState) -> Result<Network, CliError> {
    let widths: Vec<usize> = teacher.hidden_widths().iter().map(|&w| (w as f64 * scale).ceil().max(1.0) as usize).collect();
    let bias = teacher.layers()[0].has_bias();
    let classes = teacher.output_dim();
    Ok(match &teacher.layers()[0] {
        Layer::Conv(c) => {
            let shape: [usize; 3] = teacher.input_shape().try_into().map_err(|_| CliError::Runtime("conv teacher without image input".into()))?;
            Network::conv(shape, &widths, c.k, classes, bias, rng)?
        }
        Layer::Dense(_) => {
            let mut dims = vec![teacher.input_len()];
            dims.extend(widths);
            dims.push(classes);
            Network::dense(&dims, bias, rng)?
        }
    })
}

pub fn student_ckpt(run: &str, epoch: usize) -> String {
    format!("student_{run}_e{epoch}.ckpt")
}

pub fn save_student(out: &mut OutDir, run: &str, epoch: usize, regime: &str, seed: u64, net: &Network) -> Result<PathBuf, CliError> {
    out.write(&student_ckpt(run, epoch), &checkpoint_bytes(net, epoch, regime, seed))
}

pub fn save_surrogate(out: &mut OutDir, epochs: usize, seed: u64, net: &Network) -> Result<PathBuf, CliError> {
    out.write(SURROGATE_CKPT, &checkpoint_bytes(net, epochs, "st_logit", seed))
}

/// A trained model addressed by run and epoch, or an explicit checkpoint.
pub struct Model {
    pub label: String,
    pub slug: String,
    pub path: PathBuf,
}

/// Every student `train` stores, or the configured student checkpoint.
pub fn models(cfg: &ExperimentConfig, root: &Path) -> Vec<Model> {
    if let Some(p) = &cfg.student.checkpoint {
        return vec![Model { label: "student".into(), slug: "student".into(), path: p.clone() }];
    }
    let mut out = Vec::new();
    for run in cfg.runs() {
        let epochs = cfg.train_config(&run).epochs;
        for e in cfg.grid_for(epochs) {
            out.push(Model { label: format!("{}({e})", run.name), slug: format!("{}_e{e}", run.name), path: root.join(student_ckpt(&run.name, e)) });
        }
    }
    out
}

pub fn load_net(path: &Path) -> Result<Network, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(load_checkpoint(path)?.network)
}
