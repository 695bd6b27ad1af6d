use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{RngState, Tensor};

pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_BATCH_RECORDS: usize = 10_000;
pub const CIFAR_CLASSES: usize = 10;

/// Channel-major images with pixel values in [0, 1] and integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ImageDataset {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let per = channels * height * width;
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(shape_err(format!("{} images of {per} values", labels.len()), format!("{} values", pixels.len())));
        }
        Ok(Self { channels, height, width, pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// First `n` images.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            pixels: self.pixels[..n * self.image_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..*self
        }
    }

    /// Flattened images as an N×(C·H·W) matrix.
    pub fn as_matrix(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.image_len()], self.pixels.clone()).expect("consistent")
    }
}

/// Reads one CIFAR-10 binary batch file holding any positive number of
/// records (1 label byte + 3072 channel-major pixel bytes each).
pub fn read_cifar_batch(path: &Path) -> Result<ImageDataset> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::WrongFileSize {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
            expected: format!("a positive multiple of {CIFAR_RECORD}"),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] as usize >= CIFAR_CLASSES {
            return Err(Error::InvalidArgument(format!("label {} out of range in {}", rec[0], path.display())));
        }
        labels.push(rec[0]);
        pixels.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    ImageDataset::new(CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE, pixels, labels)
}

fn read_full_batch(path: &Path) -> Result<ImageDataset> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let len = fs::metadata(path)?.len();
    let expected = (CIFAR_BATCH_RECORDS * CIFAR_RECORD) as u64;
    if len != expected {
        return Err(Error::WrongFileSize { path: path.to_path_buf(), len, expected: expected.to_string() });
    }
    read_cifar_batch(path)
}

/// Loads the standard binary distribution: `data_batch_1.bin` …
/// `data_batch_5.bin` and `test_batch.bin`, each exactly 10000 records.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(ImageDataset, ImageDataset)> {
    let dir = dir.as_ref();
    let mut train: Option<ImageDataset> = None;
    for i in 1..=5 {
        let b = read_full_batch(&dir.join(format!("data_batch_{i}.bin")))?;
        match train.as_mut() {
            None => train = Some(b),
            Some(t) => {
                t.pixels.extend_from_slice(&b.pixels);
                t.labels.extend_from_slice(&b.labels);
            }
        }
    }
    let test = read_full_batch(&dir.join("test_batch.bin"))?;
    Ok((train.expect("five batches"), test))
}

/// Flattened 3×3 windows across all channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    /// M×(C·k·k) matrix, each row flattened as (channel, ky, kx).
    pub patches: Tensor,
    pub kernel: usize,
}

impl PatchSet {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        let cols = self.patches.cols();
        let header: Vec<String> = (0..cols).map(|i| format!("p{i}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for r in 0..self.patches.rows() {
            let row: Vec<String> = self.patches.row(r).iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// All stride-1 unpadded 3×3 windows: (H−2)(W−2) patches per image.
pub fn extract_patches(images: &ImageDataset) -> Result<PatchSet> {
    const K: usize = 3;
    let (c, h, w) = (images.channels, images.height, images.width);
    if c != CIFAR_CHANNELS || h < K || w < K {
        return Err(shape_err(format!("images of shape [3, ≥{K}, ≥{K}]"), format!("{:?}", images.shape())));
    }
    let (oh, ow, dim) = (h - K + 1, w - K + 1, c * K * K);
    let m = images.len() * oh * ow;
    let mut data = Vec::with_capacity(m * dim);
    for i in 0..images.len() {
        let img = images.image(i);
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    for ky in 0..K {
                        let row = &img[ch * h * w + (y + ky) * w + x..][..K];
                        data.extend_from_slice(row);
                    }
                }
            }
        }
    }
    Ok(PatchSet { patches: Tensor::new(vec![m, dim], data)?, kernel: K })
}

/// Data augmentations applied to a single channel-major image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augment {
    /// Zero-pad by `pad` then crop back to the original size at a random offset.
    RandomCrop { pad: usize },
    /// Mirror the width axis with probability `p`.
    HorizontalFlip { p: f64 },
    /// Rotate by a uniform angle in ±`max_degrees` (nearest neighbor, zero fill).
    Rotation { max_degrees: f64 },
    /// Add i.i.d. N(0, σ²) noise.
    Gaussian { sigma: f64 },
}

impl Augment {
    pub fn standard() -> Vec<Augment> {
        vec![Augment::RandomCrop { pad: 4 }, Augment::HorizontalFlip { p: 0.5 }, Augment::Rotation { max_degrees: 15.0 }]
    }
}

/// Applies one augmentation to `x` of shape `[c, h, w]` (gaussian accepts any shape).
pub fn augment(x: &[f64], shape: &[usize], kind: &Augment, rng: &mut RngState) -> Result<Vec<f64>> {
    let n: usize = shape.iter().product();
    if n != x.len() {
        return Err(shape_err(format!("{n} values"), format!("{}", x.len())));
    }
    if let Augment::Gaussian { sigma } = kind {
        return Ok(x.iter().map(|v| v + sigma * rng.normal()).collect());
    }
    let &[c, h, w] = shape else {
        return Err(shape_err("image shape [c, h, w]", format!("{shape:?}")));
    };
    Ok(match kind {
        Augment::RandomCrop { pad } => {
            let dy = rng.below(2 * pad + 1) as isize - *pad as isize;
            let dx = rng.below(2 * pad + 1) as isize - *pad as isize;
            let mut out = vec![0.0; n];
            for ch in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        let (sy, sx) = (y as isize + dy, xx as isize + dx);
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            out[ch * h * w + y * w + xx] = x[ch * h * w + sy as usize * w + sx as usize];
                        }
                    }
                }
            }
            out
        }
        Augment::HorizontalFlip { p } => {
            if rng.uniform() < *p {
                let mut out = vec![0.0; n];
                for row in 0..c * h {
                    for xx in 0..w {
                        out[row * w + xx] = x[row * w + (w - 1 - xx)];
                    }
                }
                out
            } else {
                x.to_vec()
            }
        }
        Augment::Rotation { max_degrees } => {
            let angle = rng.uniform_range(-max_degrees, *max_degrees).to_radians();
            let (s, co) = angle.sin_cos();
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let mut out = vec![0.0; n];
            for y in 0..h {
                for xx in 0..w {
                    // inverse map from destination to source
                    let (ry, rx) = (y as f64 - cy, xx as f64 - cx);
                    let sy = (co * ry - s * rx + cy).round();
                    let sx = (s * ry + co * rx + cx).round();
                    if sy >= 0.0 && sx >= 0.0 && (sy as usize) < h && (sx as usize) < w {
                        for ch in 0..c {
                            out[ch * h * w + y * w + xx] = x[ch * h * w + sy as usize * w + sx as usize];
                        }
                    }
                }
            }
            out
        }
        Augment::Gaussian { .. } => unreachable!("handled above"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_records(path: &Path, recs: &[(u8, u8)]) {
        let mut bytes = Vec::new();
        for &(label, fill) in recs {
            bytes.push(label);
            bytes.extend(std::iter::repeat_n(fill, CIFAR_RECORD - 1));
        }
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn reads_two_record_batch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        write_records(&p, &[(3, 255), (7, 51)]);
        let d = read_cifar_batch(&p).unwrap();
        assert_eq!(d.labels, vec![3, 7]);
        assert_eq!(d.image(0)[0], 1.0);
        assert_eq!(d.image(1)[3071], 0.2);
    }

    #[test]
    fn wrong_size_and_missing_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        fs::write(&p, vec![0u8; CIFAR_RECORD + 5]).unwrap();
        assert!(matches!(read_cifar_batch(&p), Err(Error::WrongFileSize { .. })));
        assert!(matches!(read_cifar_batch(&dir.path().join("nope.bin")), Err(Error::MissingFile(_))));
        // a valid two-record batch is still the wrong size for the full loader
        for i in 1..=5 {
            write_records(&dir.path().join(format!("data_batch_{i}.bin")), &[(0, 0), (1, 1)]);
        }
        assert!(matches!(load_cifar10(dir.path()), Err(Error::WrongFileSize { .. })));
        fs::remove_file(dir.path().join("data_batch_1.bin")).unwrap();
        assert!(matches!(load_cifar10(dir.path()), Err(Error::MissingFile(_))));
    }

    /// Pinned fixture from the canonical distribution: record 0 of
    /// data_batch_1 has label 6 and first red pixel 59.
    #[test]
    #[ignore = "needs the CIFAR-10 binary distribution in $CIFAR10_DIR"]
    fn canonical_first_record() {
        let dir = std::env::var("CIFAR10_DIR").expect("CIFAR10_DIR");
        let d = read_cifar_batch(&Path::new(&dir).join("data_batch_1.bin")).unwrap();
        assert_eq!(d.labels[0], 6);
        assert_eq!(d.image(0)[0], 59.0 / 255.0);
    }

    fn image(c: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    v.push(f(ch, y, x));
                }
            }
        }
        v
    }

    #[test]
    fn constant_image_patches() {
        let px = image(3, 32, 32, |_, _, _| 0.25);
        let d = ImageDataset::new(3, 32, 32, px, vec![0]).unwrap();
        let p = extract_patches(&d).unwrap();
        assert_eq!(p.patches.rows(), 900);
        assert_eq!(p.patches.cols(), 27);
        assert!(p.patches.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn checkerboard_first_patch() {
        let px = image(3, 32, 32, |c, y, x| if (y + x) % 2 == 0 { c as f64 } else { 10.0 + c as f64 });
        let d = ImageDataset::new(3, 32, 32, px, vec![0, 1].into_iter().take(1).collect()).unwrap();
        let p = extract_patches(&d).unwrap();
        let mut expect = Vec::new();
        for c in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    expect.push(if (y + x) % 2 == 0 { c as f64 } else { 10.0 + c as f64 });
                }
            }
        }
        assert_eq!(p.patches.row(0), expect.as_slice());
        // patch (0, 1) is shifted by one column: parity flips
        let second: Vec<f64> = p.patches.row(1).to_vec();
        assert_eq!(second[0], 10.0);
    }

    #[test]
    fn patch_count_scales_with_images() {
        let d = ImageDataset::new(3, 32, 32, vec![0.0; 3 * 3072], vec![0, 1, 2]).unwrap();
        assert_eq!(extract_patches(&d).unwrap().patches.rows(), 3 * 900);
        let gray = ImageDataset::new(1, 32, 32, vec![0.0; 1024], vec![0]).unwrap();
        assert!(extract_patches(&gray).is_err());
    }

    #[test]
    fn flip_twice_is_identity_and_sigma_zero_is_identity() {
        let mut rng = RngState::new(1);
        let x = image(3, 8, 8, |c, y, xx| (c * 64 + y * 8 + xx) as f64);
        let f = Augment::HorizontalFlip { p: 1.0 };
        let once = augment(&x, &[3, 8, 8], &f, &mut rng).unwrap();
        assert_ne!(once, x);
        assert_eq!(augment(&once, &[3, 8, 8], &f, &mut rng).unwrap(), x);
        assert_eq!(augment(&x, &[3, 8, 8], &Augment::Gaussian { sigma: 0.0 }, &mut rng).unwrap(), x);
    }

    #[test]
    fn gaussian_noise_has_configured_std() {
        let mut rng = RngState::new(2024);
        let x = vec![0.5; 100_000];
        let y = augment(&x, &[100_000], &Augment::Gaussian { sigma: 0.1 }, &mut rng).unwrap();
        let n = y.len() as f64;
        let mean = y.iter().map(|v| v - 0.5).sum::<f64>() / n;
        let var = y.iter().map(|v| (v - 0.5 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        assert!((0.095..=0.105).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn crop_and_rotation_keep_shape() {
        let mut rng = RngState::new(5);
        let x = image(3, 32, 32, |_, y, xx| (y * 32 + xx) as f64 / 1024.0);
        for kind in Augment::standard() {
            let y = augment(&x, &[3, 32, 32], &kind, &mut rng).unwrap();
            assert_eq!(y.len(), x.len());
        }
        let r0 = augment(&x, &[3, 32, 32], &Augment::Rotation { max_degrees: 0.0 }, &mut rng).unwrap();
        assert_eq!(r0, x);
        let c0 = augment(&x, &[3, 32, 32], &Augment::RandomCrop { pad: 0 }, &mut rng).unwrap();
        assert_eq!(c0, x);
    }
}
