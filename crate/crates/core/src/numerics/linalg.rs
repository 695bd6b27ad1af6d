use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{shape_err, Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `a` (m×k) times `b` (k×n).
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    if b.rows() != k {
        return Err(shape_err(format!("{k} rows"), format!("{}", b.rows())));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(b.row(p)) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn mat_vec(a: &Tensor, v: &[f64]) -> Result<Vec<f64>> {
    if a.cols() != v.len() {
        return Err(shape_err(format!("vector of length {}", a.cols()), format!("{}", v.len())));
    }
    Ok((0..a.rows()).map(|i| dot(a.row(i), v)).collect())
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the columns of an n×n matrix. Each eigenvector is signed so that its first
/// component with magnitude above 1e-12 is positive.
pub fn jacobi_eigh(sym: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = sym.rows();
    if sym.cols() != n {
        return Err(shape_err("square matrix", format!("{:?}", sym.shape())));
    }
    let mut a = sym.data().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale > 0.0 {
        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[p * n + q] * a[p * n + q];
                }
            }
            if off.sqrt() <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[p * n + q];
                    if apq.abs() <= 1e-300 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps ties in canonical order
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap_or(std::cmp::Ordering::Equal));
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        let sign = (0..n)
            .map(|r| v[r * n + src])
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, f64::signum);
        for r in 0..n {
            vecs[r * n + col] = sign * v[r * n + src];
        }
    }
    Ok((values, Tensor::new(vec![n, n], vecs)?))
}

/// Modified Gram-Schmidt (two passes) over the given columns; columns that
/// collapse below 1e-10 are dropped.
pub fn orthonormalize(columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for c in columns {
        let mut v = c.clone();
        for _ in 0..2 {
            for q in &out {
                let p = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm2(&v);
        if n > 1e-10 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    out
}

/// Extends an orthonormal set to a full basis of R^d using the canonical
/// basis vectors in order.
pub fn gram_schmidt_complete(columns: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    let mut all = columns.to_vec();
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        all.push(e);
    }
    let mut basis = orthonormalize(&all);
    basis.truncate(d);
    basis
}

/// Solves `a x = b` for square `a` with partial pivoting.
pub fn solve(a: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(shape_err(format!("{n}x{n} system"), format!("{:?} / {}", a.shape(), b.len())));
    }
    let mut m = a.data().to_vec();
    let mut x = b.to_vec();
    let scale = norm_inf(&m).max(1e-300);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap_or(col);
        if m[piv * n + col].abs() <= 1e-13 * scale {
            return Err(Error::InvalidArgument("singular matrix".into()));
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            x.swap(piv, col);
        }
        for r in col + 1..n {
            let f = m[r * n + col] / m[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let s: f64 = (col + 1..n).map(|k| m[col * n + k] * x[k]).sum();
        x[col] = (x[col] - s) / m[col * n + col];
    }
    Ok(x)
}

/// How the offset x₀ of a PCA basis is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    /// Subtract the sample mean (covariance PCA).
    Mean,
    /// Keep raw coordinates (second-moment PCA through the origin).
    Zero,
}

/// Orthonormal basis of an input subspace with its offset and spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBasis {
    /// d×d' matrix with orthonormal columns.
    pub u: Tensor,
    pub offset: Vec<f64>,
    /// Full descending spectrum (length d), kept after truncation.
    pub eigenvalues: Vec<f64>,
}

impl SubspaceBasis {
    pub fn new(u: Tensor, offset: Vec<f64>, eigenvalues: Vec<f64>) -> Result<Self> {
        if offset.len() != u.rows() {
            return Err(shape_err(format!("offset of length {}", u.rows()), format!("{}", offset.len())));
        }
        Ok(Self { u, offset, eigenvalues })
    }

    pub fn ambient_dim(&self) -> usize {
        self.u.rows()
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn truncate(&self, k: usize) -> Result<Self> {
        Ok(Self { u: self.u.take_columns(k)?, offset: self.offset.clone(), eigenvalues: self.eigenvalues.clone() })
    }

    /// Smallest rank whose eigenvalues carry at least `fraction` of the total.
    pub fn rank_for_variance(&self, fraction: f64) -> usize {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return 1;
        }
        let mut acc = 0.0;
        for (i, v) in self.eigenvalues.iter().enumerate() {
            acc += v;
            if acc >= fraction * total {
                return i + 1;
            }
        }
        self.eigenvalues.len()
    }

    /// Coordinates Uᵀv.
    pub fn coords(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.ambient_dim() {
            return Err(shape_err(format!("vector of length {}", self.ambient_dim()), format!("{}", v.len())));
        }
        let (d, k) = (self.u.rows(), self.u.cols());
        let ud = self.u.data();
        let mut c = vec![0.0; k];
        for i in 0..d {
            let vi = v[i];
            for j in 0..k {
                c[j] += ud[i * k + j] * vi;
            }
        }
        Ok(c)
    }

    /// U c for coordinates c.
    pub fn lift(&self, c: &[f64]) -> Vec<f64> {
        let (d, k) = (self.u.rows(), self.u.cols());
        let ud = self.u.data();
        (0..d).map(|i| (0..k).map(|j| ud[i * k + j] * c[j]).sum()).collect()
    }

    /// Splits `v` into UUᵀv and (I − UUᵀ)v. The offset is not applied.
    pub fn project(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let inside = self.lift(&self.coords(v)?);
        let outside = v.iter().zip(&inside).map(|(a, b)| a - b).collect();
        Ok((inside, outside))
    }

    /// ‖(I − UUᵀ)(x − x₀)‖₂.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.offset).map(|(a, b)| a - b).collect();
        Ok(norm2(&self.project(&centered)?.1))
    }
}

fn second_moment(samples: &Tensor, mode: OffsetMode) -> (Vec<f64>, Tensor) {
    let (n, d) = (samples.rows(), samples.cols());
    let offset = match mode {
        OffsetMode::Zero => vec![0.0; d],
        OffsetMode::Mean => {
            let mut m = vec![0.0; d];
            for i in 0..n {
                m.iter_mut().zip(samples.row(i)).for_each(|(a, b)| *a += b);
            }
            m.iter_mut().for_each(|a| *a /= n as f64);
            m
        }
    };
    let denom = match mode {
        OffsetMode::Mean => (n - 1) as f64,
        OffsetMode::Zero => n as f64,
    };
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for i in 0..n {
        centered.iter_mut().zip(samples.row(i).iter().zip(&offset)).for_each(|(c, (x, o))| *c = x - o);
        for a in 0..d {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..d {
                cov[a * d + b] += ca * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    (offset, Tensor::new(vec![d, d], cov).expect("square"))
}

/// Full PCA of `samples` (N×d rows): all d eigenpairs of the (offset-removed)
/// second-moment matrix, descending. Callers truncate with
/// [`SubspaceBasis::truncate`]. Covariance uses the N−1 divisor in
/// [`OffsetMode::Mean`] and N in [`OffsetMode::Zero`].
pub fn pca_fit(samples: &Tensor, mode: OffsetMode) -> Result<SubspaceBasis> {
    if samples.shape().len() != 2 || samples.rows() < 2 || samples.cols() < 1 {
        return Err(Error::InvalidArgument(format!("pca needs an N×d matrix with N ≥ 2, got {:?}", samples.shape())));
    }
    let (offset, cov) = second_moment(samples, mode);
    let (values, vectors) = jacobi_eigh(&cov)?;
    let values = values.into_iter().map(|v| v.max(0.0)).collect();
    SubspaceBasis::new(vectors, offset, values)
}
