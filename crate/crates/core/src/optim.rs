//! Masked Adam and the per-epoch cosine schedule with linear warmup.
//!
//! The update is `W ← W − η · m̂ / √(v̂ + ε)`, with `ε` inside the square
//! root. Masked-out entries are skipped entirely: their weights and both
//! moment buffers stay bitwise untouched.

use serde::{Deserialize, Serialize};

use crate::error::{GrftError, Result};
use crate::masking::GradientMaskSet;
use crate::model::{GradientSet, ModelParams};
use crate::numeric::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_epsilon() -> f64 {
    1e-8
}

impl OptimConfig {
    pub fn new(base_lr: f64, warmup_epochs: usize, total_epochs: usize) -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            base_lr,
            warmup_epochs,
            total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(GrftError::config("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(GrftError::config("epsilon must be positive"));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(GrftError::config("base_lr must be positive"));
        }
        if self.total_epochs > 0 && self.warmup_epochs >= self.total_epochs {
            return Err(GrftError::config(format!(
                "warmup_epochs ({}) must be below total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        Ok(())
    }
}

/// Learning rate for `epoch`: linear ramp from 0 over the warmup epochs, then
/// `base·½(1 + cos(π(e − W)/(T − W)))` down to 0 at `T`.
pub fn cosine_warmup_lr(epoch: usize, cfg: &OptimConfig) -> Result<f64> {
    let (w, t) = (cfg.warmup_epochs, cfg.total_epochs);
    if epoch > t {
        return Err(GrftError::config(format!("epoch {epoch} beyond total_epochs {t}")));
    }
    if w >= t {
        return Err(GrftError::config("schedule needs warmup_epochs < total_epochs"));
    }
    if epoch < w {
        return Ok(cfg.base_lr * epoch as f64 / w as f64);
    }
    let progress = (epoch - w) as f64 / (t - w) as f64;
    Ok(cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// First and second moment buffers plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: GradientSet<T>,
    pub v: GradientSet<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &ModelParams<T>) -> Self {
        Self { m: GradientSet::zeros_like(model), v: GradientSet::zeros_like(model), t: 0 }
    }
}

struct StepCoefficients<T> {
    beta1: T,
    beta2: T,
    one_minus_beta1: T,
    one_minus_beta2: T,
    bias1: T,
    bias2: T,
    eps: T,
    lr: T,
}

impl<T: Scalar> StepCoefficients<T> {
    fn new(cfg: &OptimConfig, t: u64, lr: f64) -> Self {
        let beta1 = T::of(cfg.beta1);
        let beta2 = T::of(cfg.beta2);
        let exp = i32::try_from(t).unwrap_or(i32::MAX);
        Self {
            beta1,
            beta2,
            one_minus_beta1: T::one() - beta1,
            one_minus_beta2: T::one() - beta2,
            bias1: T::one() - beta1.powi(exp),
            bias2: T::one() - beta2.powi(exp),
            eps: T::of(cfg.epsilon),
            lr: T::of(lr),
        }
    }

    #[inline]
    fn update(&self, w: &mut T, m: &mut T, v: &mut T, g: T) {
        *m = self.beta1 * *m + self.one_minus_beta1 * g;
        *v = self.beta2 * *v + self.one_minus_beta2 * g * g;
        let m_hat = *m / self.bias1;
        let v_hat = *v / self.bias2;
        *w = *w - self.lr * m_hat / (v_hat + self.eps).sqrt();
    }
}

fn check_step<T: Scalar>(model: &ModelParams<T>, state: &AdamState<T>, grad: &GradientSet<T>, lr: f64) -> Result<()> {
    if !grad.matches(model) || !state.m.matches(model) || !state.v.matches(model) {
        return Err(GrftError::shape("optimizer buffers do not match the model"));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(GrftError::config(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    if !grad.is_finite() {
        return Err(GrftError::numeric("non-finite gradient entry"));
    }
    Ok(())
}

/// One Adam step on the entries selected by `masks`; everything else is left
/// bitwise unchanged, including the moment buffers.
pub fn masked_adam_step<T: Scalar>(
    model: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    grad: &GradientSet<T>,
    masks: &GradientMaskSet,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    check_step(model, state, grad, lr)?;
    masks.validate(model)?;
    state.t += 1;
    let c = StepCoefficients::new(cfg, state.t, lr);
    for (idx, layer) in model.layers_mut().iter_mut().enumerate() {
        let mask = &masks.layers[idx];
        let g = &grad.layers[idx];
        let (m, v) = (&mut state.m.layers[idx], &mut state.v.layers[idx]);
        let weights = layer.weight.as_mut_slice();
        let (gm, mm, vm) = (g.weight.as_slice(), m.weight.as_mut_slice(), v.weight.as_mut_slice());
        for (e, selected) in mask.weight_bits().into_iter().enumerate() {
            if selected {
                c.update(&mut weights[e], &mut mm[e], &mut vm[e], gm[e]);
            }
        }
        for (e, selected) in mask.bias_bits().into_iter().enumerate() {
            if selected {
                c.update(&mut layer.bias[e], &mut m.bias[e], &mut v.bias[e], g.bias[e]);
            }
        }
    }
    Ok(())
}

/// Unmasked Adam step with the same update rule.
pub fn adam_step<T: Scalar>(
    model: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    grad: &GradientSet<T>,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    check_step(model, state, grad, lr)?;
    state.t += 1;
    let c = StepCoefficients::new(cfg, state.t, lr);
    for (idx, layer) in model.layers_mut().iter_mut().enumerate() {
        let g = &grad.layers[idx];
        let (m, v) = (&mut state.m.layers[idx], &mut state.v.layers[idx]);
        let weights = layer.weight.as_mut_slice();
        let (gm, mm, vm) = (g.weight.as_slice(), m.weight.as_mut_slice(), v.weight.as_mut_slice());
        for e in 0..weights.len() {
            c.update(&mut weights[e], &mut mm[e], &mut vm[e], gm[e]);
        }
        for e in 0..layer.bias.len() {
            c.update(&mut layer.bias[e], &mut m.bias[e], &mut v.bias[e], g.bias[e]);
        }
    }
    Ok(())
}
