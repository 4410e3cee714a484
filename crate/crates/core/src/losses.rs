//! Cross-entropy, supervised contrastive loss, the pull-to-pretrained penalty
//! and the combined training objective, each with its exact gradient.

use serde::{Deserialize, Serialize};

use crate::error::{GrftError, Result};
use crate::model::{backward, forward, GradientSet, ModelParams, Role, Upstream};
use crate::numeric::{Matrix, Scalar};

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(GrftError::input(format!("{} labels for {rows} samples", labels.len())));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(GrftError::input(format!("label {y} of sample {i} outside [0, {classes})")));
    }
    Ok(())
}

/// Mean over the batch of `−log softmax(logits)[label]`, with
/// `∂/∂logits = (softmax − onehot) / batch`.
pub fn cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    check_labels(labels, logits.rows(), logits.cols())?;
    if logits.rows() == 0 {
        return Err(GrftError::input("cross-entropy of an empty batch"));
    }
    let batch = T::of(logits.rows() as f64);
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for v in row {
            denom = denom + (*v - max).exp();
        }
        let log_denom = denom.ln();
        total = total + (log_denom - (row[label] - max));
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (row[j] - max).exp() / denom;
            let target = if j == label { T::one() } else { T::zero() };
            *g = (p - target) / batch;
        }
    }
    Ok((total / batch, grad))
}

/// Supervised contrastive loss summed over anchors:
///
/// `Σᵢ −1/|P(i)| Σ_{p∈P(i)} log( exp(zᵢ·z_p/τ) / Σ_{a≠i} exp(zᵢ·z_a/τ) )`
///
/// where `z` are the L2-normalized feature rows and `P(i)` the other samples
/// sharing `i`'s label. Anchors without positives contribute 0. A zero
/// feature row normalizes to 0 and receives a zero gradient.
pub fn scl_loss<T: Scalar>(features: &Matrix<T>, labels: &[usize], tau: T) -> Result<(T, Matrix<T>)> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(GrftError::config(format!("temperature must be positive, got {tau}")));
    }
    let n = features.rows();
    if n < 2 {
        return Err(GrftError::input(format!("contrastive loss needs at least 2 samples, got {n}")));
    }
    check_labels(labels, n, usize::MAX)?;

    let mut z = features.clone();
    let mut norms = vec![T::zero(); n];
    for (i, norm) in norms.iter_mut().enumerate() {
        let row = z.row_mut(i);
        let mut sq = T::zero();
        for v in row.iter() {
            sq = sq + *v * *v;
        }
        *norm = sq.sqrt();
        for v in row.iter_mut() {
            *v = if *norm > T::zero() { *v / *norm } else { T::zero() };
        }
    }
    let sim = z.matmul_transpose_rhs(&z)?.scale(T::one() / tau);

    let mut total = T::zero();
    let mut dz = Matrix::zeros(n, features.cols());
    let mut coef = vec![T::zero(); n];
    for i in 0..n {
        let positives = (0..n).filter(|&p| p != i && labels[p] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        let inv_p = T::one() / T::of(positives as f64);
        let row = sim.row(i);
        let mut max = T::neg_infinity();
        for (a, s) in row.iter().enumerate() {
            if a != i {
                max = max.max(*s);
            }
        }
        let mut denom = T::zero();
        for (a, s) in row.iter().enumerate() {
            if a != i {
                denom = denom + (*s - max).exp();
            }
        }
        let lse = max + denom.ln();
        let mut pos_sum = T::zero();
        for (a, s) in row.iter().enumerate() {
            if a != i && labels[a] == labels[i] {
                pos_sum = pos_sum + *s;
            }
        }
        total = total + lse - pos_sum * inv_p;

        for (a, c) in coef.iter_mut().enumerate() {
            *c = if a == i {
                T::zero()
            } else {
                let q = (row[a] - max).exp() / denom;
                let target = if labels[a] == labels[i] { inv_p } else { T::zero() };
                (q - target) / tau
            };
        }
        // ∂sᵢₐ/∂zᵢ = z_a/τ and ∂sᵢₐ/∂z_a = zᵢ/τ
        for a in 0..n {
            if a == i {
                continue;
            }
            let c = coef[a];
            for j in 0..features.cols() {
                let zi = z.get(i, j);
                let za = z.get(a, j);
                dz.set(i, j, dz.get(i, j) + c * za);
                dz.set(a, j, dz.get(a, j) + c * zi);
            }
        }
    }

    // Back through z = f/‖f‖: ∂f = (∂z − z(z·∂z)) / ‖f‖
    let mut grad = Matrix::zeros(n, features.cols());
    for i in 0..n {
        if norms[i] > T::zero() {
            let mut proj = T::zero();
            for (zv, dv) in z.row(i).iter().zip(dz.row(i)) {
                proj = proj + *zv * *dv;
            }
            let zi = z.row(i).to_vec();
            for ((g, dv), zv) in grad.row_mut(i).iter_mut().zip(dz.row(i)).zip(&zi) {
                *g = (*dv - *zv * proj) / norms[i];
            }
        }
    }
    if !total.is_finite() || !grad.is_finite() {
        return Err(GrftError::numeric("non-finite contrastive loss"));
    }
    Ok((total, grad))
}

/// Layers whose distance to the pretrained snapshot is penalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularSet {
    /// Number of trailing hidden layers included.
    pub last_l: usize,
    pub include_embedding: bool,
    pub include_head: bool,
}

impl RegularSet {
    pub fn none() -> Self {
        Self { last_l: 0, include_embedding: false, include_head: false }
    }

    pub fn validate<T: Scalar>(&self, model: &ModelParams<T>) -> Result<()> {
        if self.last_l > model.num_layers() {
            return Err(GrftError::config(format!(
                "regular set asks for the last {} layers of a {}-layer model",
                self.last_l,
                model.num_layers()
            )));
        }
        Ok(())
    }

    /// Membership per layer. `last_l` beyond the hidden-layer count
    /// saturates at all hidden layers.
    pub fn members<T: Scalar>(&self, model: &ModelParams<T>) -> Vec<bool> {
        let hidden: Vec<usize> =
            model.layers().iter().enumerate().filter(|(_, l)| l.role == Role::Hidden).map(|(i, _)| i).collect();
        let first_tail = hidden.len().saturating_sub(self.last_l);
        model
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| match l.role {
                Role::Embedding => self.include_embedding,
                Role::Head => self.include_head,
                Role::Hidden => hidden[first_tail..].contains(&i),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    L1,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    pub lambda: f64,
    pub norm: Norm,
    pub set: RegularSet,
}

impl RegConfig {
    pub fn disabled() -> Self {
        Self { lambda: 0.0, norm: Norm::None, set: RegularSet::none() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(GrftError::config(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `λ Σ_{l∈R} ‖W^l − W^l_pre‖` (squared Frobenius for L2, absolute sum for
/// L1), biases included, with its gradient on the layers of `R`.
pub fn reg_penalty<T: Scalar>(
    model: &ModelParams<T>,
    pre: &ModelParams<T>,
    cfg: &RegConfig,
) -> Result<(T, GradientSet<T>)> {
    cfg.validate()?;
    cfg.set.validate(model)?;
    if model.dims() != pre.dims() {
        return Err(GrftError::shape("model and pretrained snapshot have different shapes"));
    }
    let mut grad = GradientSet::zeros_like(model);
    if cfg.norm == Norm::None || cfg.lambda == 0.0 {
        return Ok((T::zero(), grad));
    }
    let lambda = T::of(cfg.lambda);
    let two = T::of(2.0);
    let mut total = T::zero();
    let members = cfg.set.members(model);
    for (idx, ((layer, anchor), g)) in model.layers().iter().zip(pre.layers()).zip(&mut grad.layers).enumerate() {
        if !members[idx] {
            continue;
        }
        let diff = layer.weight.sub(&anchor.weight)?;
        let bias_diff: Vec<T> = layer.bias.iter().zip(&anchor.bias).map(|(a, b)| *a - *b).collect();
        match cfg.norm {
            Norm::L2 => {
                let mut bias_sq = T::zero();
                for d in &bias_diff {
                    bias_sq = bias_sq + *d * *d;
                }
                total = total + lambda * (diff.frobenius_sq() + bias_sq);
                g.weight = diff.scale(two * lambda);
                g.bias = bias_diff.iter().map(|d| two * lambda * *d).collect();
            }
            Norm::L1 => {
                let mut bias_abs = T::zero();
                for d in &bias_diff {
                    bias_abs = bias_abs + d.abs();
                }
                total = total + lambda * (diff.abs_sum() + bias_abs);
                g.weight = diff.map(|d| lambda * sign(d));
                g.bias = bias_diff.iter().map(|d| lambda * sign(*d)).collect();
            }
            Norm::None => unreachable!(),
        }
    }
    Ok((total, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts<T> {
    /// `L_R = cross_entropy + penalty`.
    pub total: T,
    pub cross_entropy: T,
    pub penalty: T,
}

/// `L_R = L_cross + λ Σ_{l∈R} ‖W^l − W^l_pre‖` on one batch, with the exact
/// sum of both gradients.
pub fn combined_grad<T: Scalar>(
    model: &ModelParams<T>,
    pre: &ModelParams<T>,
    x: &Matrix<T>,
    labels: &[usize],
    cfg: &RegConfig,
) -> Result<(LossParts<T>, GradientSet<T>)> {
    let out = forward(model, x)?;
    let (ce, d_logits) = cross_entropy(&out.logits, labels)?;
    let ce_grad = backward(model, &out.cache, Upstream::Logits(&d_logits))?;
    let (penalty, reg_grad) = reg_penalty(model, pre, cfg)?;
    let grad = ce_grad.add(&reg_grad)?;
    let total = ce + penalty;
    if !total.is_finite() {
        return Err(GrftError::numeric("non-finite training loss"));
    }
    Ok((LossParts { total, cross_entropy: ce, penalty }, grad))
}
