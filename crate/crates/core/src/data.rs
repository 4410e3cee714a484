//! Synthetic source/target Gaussian tasks, seeded subset partitioning and
//! minimal-loss subset selection for mask computation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GrftError, Result};
use crate::losses::scl_loss;
use crate::model::{forward, ModelParams};
use crate::numeric::{Matrix, Rng, Scalar};

/// Labelled samples, one per row of `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub x: Matrix<T>,
    pub y: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Matrix<T>, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(GrftError::input(format!("{} samples but {} labels", x.rows(), y.len())));
        }
        if let Some(bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(GrftError::input(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self { x, y, num_classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Writes CSV with header `y,x0,…,x{d−1}`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["y".to_string()];
        header.extend((0..self.dim()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut record = vec![self.y[i].to_string()];
            record.extend(self.x.row(i).iter().map(|v| v.as_f64().to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout of `write_csv`. The class count is one past the
    /// largest label unless given.
    pub fn read_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let dim = headers.len().saturating_sub(1);
        let expected: Vec<String> =
            std::iter::once("y".to_string()).chain((0..dim).map(|j| format!("x{j}"))).collect();
        if headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(GrftError::input("dataset header must be y,x0,x1,..."));
        }
        let mut y = Vec::new();
        let mut data = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let label = record[0]
                .trim()
                .parse::<usize>()
                .map_err(|_| GrftError::input(format!("row {}: label is not a non-negative integer", line + 1)))?;
            y.push(label);
            for field in record.iter().skip(1) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| GrftError::input(format!("row {}: bad feature value {field:?}", line + 1)))?;
                data.push(T::of(v));
            }
        }
        let classes = num_classes.unwrap_or_else(|| y.iter().max().map_or(0, |m| m + 1));
        let x = Matrix::new(y.len(), dim, data)?;
        Self::new(x, y, classes)
    }
}

/// Distribution shift from source to target class means: a rotation by
/// `angle` radians in every plane of a random orthonormal basis, then a
/// per-class random offset of length `offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub seed: u64,
    pub angle: f64,
    pub offset: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub dim: usize,
    pub classes: usize,
    /// Samples per class in the source and target training sets.
    pub per_class: usize,
    /// Samples per class in the target test set.
    pub test_per_class: usize,
    pub noise_sigma: f64,
    pub shift: ShiftConfig,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(GrftError::config("task dim must be positive"));
        }
        if self.classes < 2 {
            return Err(GrftError::config("task needs at least 2 classes"));
        }
        if self.per_class < 2 {
            return Err(GrftError::config("task needs at least 2 samples per class"));
        }
        if self.test_per_class == 0 {
            return Err(GrftError::config("task needs at least 1 test sample per class"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(GrftError::config("noise_sigma must be finite and non-negative"));
        }
        if !self.shift.angle.is_finite() || !self.shift.offset.is_finite() || self.shift.offset < 0.0 {
            return Err(GrftError::config("shift angle must be finite and offset non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskPair<T> {
    pub source: Dataset<T>,
    pub target_train: Dataset<T>,
    pub target_test: Dataset<T>,
    pub source_means: Vec<Vec<f64>>,
    pub target_means: Vec<Vec<f64>>,
    pub shift: ShiftConfig,
}

fn unit_vector(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.iter().map(|a| a / norm).collect();
        }
    }
}

/// Random orthonormal basis by Gram–Schmidt on Gaussian vectors.
fn orthonormal_basis(rng: &mut Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v = unit_vector(rng, dim);
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.iter().map(|a| a / norm).collect());
        }
    }
    basis
}

fn rotate(v: &[f64], basis: &[Vec<f64>], angle: f64) -> Vec<f64> {
    let mut coords: Vec<f64> = basis.iter().map(|b| b.iter().zip(v).map(|(x, y)| x * y).sum()).collect();
    let (s, c) = angle.sin_cos();
    for pair in coords.chunks_exact_mut(2) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
    let mut out = vec![0.0; v.len()];
    for (coef, b) in coords.iter().zip(basis) {
        out.iter_mut().zip(b).for_each(|(o, x)| *o += coef * x);
    }
    out
}

fn sample_clusters<T: Scalar>(means: &[Vec<f64>], per_class: usize, sigma: f64, rng: &mut Rng) -> Result<Dataset<T>> {
    let dim = means[0].len();
    let mut data = Vec::with_capacity(means.len() * per_class * dim);
    let mut y = Vec::with_capacity(means.len() * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &mu in mean {
                data.push(T::of(mu + sigma * rng.normal()));
            }
            y.push(c);
        }
    }
    Dataset::new(Matrix::new(y.len(), dim, data)?, y, means.len())
}

/// Gaussian class clusters around unit-norm random means for the source
/// task, and around shifted means for the target task. Generator streams:
/// 0 means, 1 source samples, 2 target train, 3 target test; the shift uses
/// its own seed.
pub fn gen_task<T: Scalar>(spec: &TaskSpec) -> Result<TaskPair<T>> {
    spec.validate()?;
    let mut mean_rng = Rng::with_stream(spec.seed, 0);
    let source_means: Vec<Vec<f64>> = (0..spec.classes).map(|_| unit_vector(&mut mean_rng, spec.dim)).collect();

    let mut shift_rng = Rng::new(spec.shift.seed);
    let basis = orthonormal_basis(&mut shift_rng, spec.dim);
    let target_means: Vec<Vec<f64>> = source_means
        .iter()
        .map(|mu| {
            let rotated = if spec.shift.angle == 0.0 { mu.clone() } else { rotate(mu, &basis, spec.shift.angle) };
            let dir = unit_vector(&mut shift_rng, spec.dim);
            if spec.shift.offset == 0.0 {
                rotated
            } else {
                rotated.iter().zip(&dir).map(|(r, d)| r + spec.shift.offset * d).collect()
            }
        })
        .collect();

    let sigma = spec.noise_sigma;
    Ok(TaskPair {
        source: sample_clusters(&source_means, spec.per_class, sigma, &mut Rng::with_stream(spec.seed, 1))?,
        target_train: sample_clusters(&target_means, spec.per_class, sigma, &mut Rng::with_stream(spec.seed, 2))?,
        target_test: sample_clusters(&target_means, spec.test_per_class, sigma, &mut Rng::with_stream(spec.seed, 3))?,
        source_means,
        target_means,
        shift: spec.shift,
    })
}

/// Seeded random permutation cut into `n` parts whose sizes differ by at
/// most one; the larger parts come first.
pub fn partition_subsets<T: Scalar>(data: &Dataset<T>, n: usize, seed: u64) -> Result<Vec<Dataset<T>>> {
    if n == 0 || n > data.len() {
        return Err(GrftError::config(format!("subset count {n} outside [1, {}]", data.len())));
    }
    let perm = Rng::new(seed).permutation(data.len());
    let base = data.len() / n;
    let extra = data.len() % n;
    let mut parts = Vec::with_capacity(n);
    let mut start = 0;
    for p in 0..n {
        let size = base + usize::from(p < extra);
        parts.push(data.subset(&perm[start..start + size]));
        start += size;
    }
    Ok(parts)
}

/// Per-sample contrastive loss of each subset at `pre`, and the index of the
/// smallest (lowest index on ties).
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetChoice {
    pub index: usize,
    pub losses: Vec<f64>,
}

/// Scores every subset by its mean per-sample contrastive loss at `pre`
/// without touching the parameters and picks the minimum.
pub fn select_mask_subset<T: Scalar>(pre: &ModelParams<T>, subsets: &[Dataset<T>], tau: T) -> Result<SubsetChoice> {
    if subsets.is_empty() {
        return Err(GrftError::input("no subsets to choose from"));
    }
    let losses = subsets
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.is_empty() {
                return Err(GrftError::input(format!("subset {i} is empty")));
            }
            let out = forward(pre, &s.x)?;
            let (loss, _) = scl_loss(&out.features, &s.y, tau)?;
            Ok(loss.as_f64() / s.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut index = 0;
    for (i, l) in losses.iter().enumerate() {
        if *l < losses[index] {
            index = i;
        }
    }
    Ok(SubsetChoice { index, losses })
}
