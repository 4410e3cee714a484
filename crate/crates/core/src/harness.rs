//! End-to-end pipelines: pretraining on the source task, gradient-masked
//! fine-tuning on the target task, evaluation and ablation sweeps.
//!
//! Seeding protocol for a fine-tune run with seed `s`:
//! * head re-initialization draws from `Rng::with_stream(s, HEAD_STREAM)`;
//! * the subset partition seed is the first `next_u64` of
//!   `Rng::with_stream(s, PARTITION_STREAM)`;
//! * every epoch shuffles with one `permutation` call on a single
//!   `Rng::with_stream(s, SHUFFLE_STREAM)`.
//!
//! Pretraining with seed `s` initializes with `init_model(dims, roles, s)` and
//! shuffles from `Rng::with_stream(s, SHUFFLE_STREAM)`.

use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{partition_subsets, select_mask_subset, Dataset, TaskPair};
use crate::error::{GrftError, Result};
use crate::losses::{combined_grad, cross_entropy, Norm, RegConfig};
use crate::masking::{build_mask_set, mask_gradients, trainable_fraction, GradientMaskSet, MaskVariant};
use crate::model::{argmax_rows, backward, default_roles, forward, init_model, GradientSet, ModelParams, Upstream};
use crate::numeric::{Rng, Scalar};
use crate::optim::{adam_step, cosine_warmup_lr, masked_adam_step, AdamState, OptimConfig};

pub const HEAD_STREAM: u64 = 10;
pub const PARTITION_STREAM: u64 = 11;
pub const SHUFFLE_STREAM: u64 = 12;

/// Which parameters a fine-tune run may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineTuneVariant {
    /// Top-`k` rows per maskable layer.
    Row,
    /// Top-`k` columns per maskable layer.
    Col,
    /// Top-`k` connections per neuron.
    Sparse,
    /// Every parameter.
    Full,
    /// Only the classification head (linear probe).
    Head,
}

impl FineTuneVariant {
    pub fn mask_variant(self) -> Option<MaskVariant> {
        match self {
            FineTuneVariant::Row => Some(MaskVariant::Row),
            FineTuneVariant::Col => Some(MaskVariant::Col),
            FineTuneVariant::Sparse => Some(MaskVariant::Sparse),
            FineTuneVariant::Full | FineTuneVariant::Head => None,
        }
    }
}

impl FromStr for FineTuneVariant {
    type Err = GrftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(Self::Row),
            "col" | "column" => Ok(Self::Col),
            "sparse" => Ok(Self::Sparse),
            "full" => Ok(Self::Full),
            "head" | "linear" => Ok(Self::Head),
            other => Err(GrftError::config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTuneConfig {
    /// Rows, columns or per-neuron connections kept per maskable layer;
    /// ignored by the `full` and `head` variants.
    pub k: usize,
    pub variant: FineTuneVariant,
    pub reg: RegConfig,
    pub tau: f64,
    pub subsets_n: usize,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub seed: u64,
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.reg.validate()?;
        self.optim.validate()?;
        if self.optim.total_epochs == 0 {
            return Err(GrftError::config("fine-tuning needs at least one epoch"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(GrftError::config("tau must be positive"));
        }
        if self.subsets_n == 0 {
            return Err(GrftError::config("subsets_n must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(GrftError::config("batch_size must be positive"));
        }
        if self.variant.mask_variant().is_some() && self.k == 0 {
            return Err(GrftError::config("k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    /// Layer widths, input first; the last width must equal the source
    /// class count.
    pub dims: Vec<usize>,
    /// `total_epochs` is the pretraining length; 0 returns the initial model.
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_r: f64,
    pub ce_loss: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub index: usize,
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: serde_json::Value,
    pub epochs: Vec<EpochRecord>,
    pub final_accuracy: f64,
    pub trainable_fraction: f64,
    pub storage_bits: usize,
    /// `√(‖W − W_pre‖² + ‖b − b_pre‖²)` per layer, head measured from its
    /// re-initialized value.
    pub layer_distances: Vec<f64>,
    pub mask_subset: Option<SubsetReport>,
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    /// Per-epoch rows: `epoch,lr,loss_R,ce_loss,test_acc`.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,lr,loss_R,ce_loss,test_acc\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.lr, e.loss_r, e.ce_loss, e.test_acc));
        }
        out
    }

    /// Same report with the wall-clock field zeroed, for comparisons.
    pub fn without_timing(&self) -> Self {
        Self { wall_clock_seconds: 0.0, ..self.clone() }
    }
}

/// Result of `finetune`: the trained model, its starting point (pretrained
/// body with the re-initialized head), the masks used and the report.
#[derive(Clone, Debug)]
pub struct FineTuneOutcome<T> {
    pub model: ModelParams<T>,
    pub start: ModelParams<T>,
    pub masks: GradientMaskSet,
    pub report: TrainReport,
}

/// Fraction of argmax-correct predictions; ties go to the lowest class.
pub fn evaluate<T: Scalar>(model: &ModelParams<T>, data: &Dataset<T>) -> Result<f64> {
    if model.num_classes() != data.num_classes {
        return Err(GrftError::shape(format!(
            "model predicts {} classes, data has {}",
            model.num_classes(),
            data.num_classes
        )));
    }
    if data.is_empty() {
        return Err(GrftError::input("cannot evaluate on an empty dataset"));
    }
    let logits = forward(model, &data.x)?.logits;
    let correct = argmax_rows(&logits).iter().zip(&data.y).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / data.len() as f64)
}

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

fn at_epoch(epoch: usize, err: GrftError) -> GrftError {
    match err {
        GrftError::Numeric(msg) => GrftError::Numeric(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

/// Full cross-entropy training on the source task.
pub fn pretrain<T: Scalar>(task: &TaskPair<T>, cfg: &PretrainConfig) -> Result<ModelParams<T>> {
    let roles = default_roles(cfg.dims.len().saturating_sub(1));
    let mut model = init_model::<T>(&cfg.dims, &roles, cfg.seed)?;
    if model.input_dim() != task.source.dim() {
        return Err(GrftError::config(format!(
            "model input width {} does not match task dim {}",
            model.input_dim(),
            task.source.dim()
        )));
    }
    if model.num_classes() != task.source.num_classes {
        return Err(GrftError::config(format!(
            "model output width {} does not match {} source classes",
            model.num_classes(),
            task.source.num_classes
        )));
    }
    if cfg.optim.total_epochs == 0 {
        return Ok(model);
    }
    cfg.optim.validate()?;
    if cfg.batch_size == 0 {
        return Err(GrftError::config("batch_size must be positive"));
    }
    let data = &task.source;
    let mut state = AdamState::new(&model);
    let mut shuffle = Rng::with_stream(cfg.seed, SHUFFLE_STREAM);
    for epoch in 0..cfg.optim.total_epochs {
        let lr = cosine_warmup_lr(epoch, &cfg.optim)?;
        let order = shuffle.permutation(data.len());
        for idx in batches(&order, cfg.batch_size) {
            let batch = data.subset(idx);
            let out = forward(&model, &batch.x).map_err(|e| at_epoch(epoch, e))?;
            let (loss, d_logits) = cross_entropy(&out.logits, &batch.y)?;
            if !loss.is_finite() {
                return Err(GrftError::numeric(format!("epoch {epoch}: non-finite pretraining loss")));
            }
            let grad = backward(&model, &out.cache, Upstream::Logits(&d_logits)).map_err(|e| at_epoch(epoch, e))?;
            adam_step(&mut model, &mut state, &grad, lr, &cfg.optim).map_err(|e| at_epoch(epoch, e))?;
        }
    }
    Ok(model)
}

fn layer_distances<T: Scalar>(model: &ModelParams<T>, anchor: &ModelParams<T>) -> Result<Vec<f64>> {
    model
        .layers()
        .iter()
        .zip(anchor.layers())
        .map(|(a, b)| {
            let w = a.weight.sub(&b.weight)?.frobenius_sq().as_f64();
            let bias: f64 = a.bias.iter().zip(&b.bias).map(|(x, y)| (*x - *y).as_f64().powi(2)).sum();
            Ok((w + bias).sqrt())
        })
        .collect()
}

/// Masks for a fine-tune run and how they were chosen.
#[derive(Clone, Debug)]
pub struct MaskPlan<T> {
    pub masks: GradientMaskSet,
    /// Present for the masked variants only.
    pub subset: Option<SubsetReport>,
    /// Mean contrastive gradients on the chosen subset, for the masked variants.
    pub grads: Option<GradientSet<T>>,
}

/// `pre` with its head re-initialized for `classes` target classes from the
/// run's head stream: the starting point and pull anchor of fine-tuning.
pub fn finetune_start<T: Scalar>(pre: &ModelParams<T>, classes: usize, seed: u64) -> Result<ModelParams<T>> {
    let mut start = pre.clone();
    start.reinit_head(classes, &mut Rng::with_stream(seed, HEAD_STREAM))?;
    Ok(start)
}

/// Chooses the mask subset of `train` and builds the masks at `start`.
pub fn plan_masks<T: Scalar>(start: &ModelParams<T>, train: &Dataset<T>, cfg: &FineTuneConfig) -> Result<MaskPlan<T>> {
    let variant = match cfg.variant.mask_variant() {
        Some(v) => v,
        None if cfg.variant == FineTuneVariant::Full => {
            return Ok(MaskPlan { masks: GradientMaskSet::full(start), subset: None, grads: None })
        }
        None => return Ok(MaskPlan { masks: GradientMaskSet::head_only(start), subset: None, grads: None }),
    };
    let tau = T::of(cfg.tau);
    let partition_seed = Rng::with_stream(cfg.seed, PARTITION_STREAM).next_u64();
    let subsets = partition_subsets(train, cfg.subsets_n, partition_seed)?;
    let choice = select_mask_subset(start, &subsets, tau)?;
    let chosen = &subsets[choice.index];
    let grads = mask_gradients(start, &chosen.x, &chosen.y, tau)?;
    let masks = build_mask_set(start, &grads, cfg.k, variant)?;
    Ok(MaskPlan { masks, subset: Some(SubsetReport { index: choice.index, losses: choice.losses }), grads: Some(grads) })
}

/// Gradient-masked, regularized fine-tuning of `pre` on the task's target
/// data: choose the mask subset, compute the masks once at the pretrained
/// weights, then train with masked Adam under the cosine schedule.
pub fn finetune<T: Scalar>(pre: &ModelParams<T>, task: &TaskPair<T>, cfg: &FineTuneConfig) -> Result<FineTuneOutcome<T>> {
    let started = Instant::now();
    cfg.validate()?;
    cfg.reg.set.validate(pre)?;
    let train = &task.target_train;
    let test = &task.target_test;
    if pre.input_dim() != train.dim() {
        return Err(GrftError::config(format!(
            "checkpoint input width {} does not match task dim {}",
            pre.input_dim(),
            train.dim()
        )));
    }

    let start = finetune_start(pre, train.num_classes, cfg.seed)?;
    let anchor = start.clone();
    let plan = plan_masks(&start, train, cfg)?;
    let (masks, mask_subset) = (plan.masks, plan.subset);

    let mut model = start.clone();
    let mut state = AdamState::new(&model);
    let mut shuffle = Rng::with_stream(cfg.seed, SHUFFLE_STREAM);
    let mut epochs = Vec::with_capacity(cfg.optim.total_epochs);
    for epoch in 0..cfg.optim.total_epochs {
        let lr = cosine_warmup_lr(epoch, &cfg.optim)?;
        let order = shuffle.permutation(train.len());
        let (mut loss_sum, mut ce_sum) = (0.0, 0.0);
        for idx in batches(&order, cfg.batch_size) {
            let batch = train.subset(idx);
            let (parts, grad) =
                combined_grad(&model, &anchor, &batch.x, &batch.y, &cfg.reg).map_err(|e| at_epoch(epoch, e))?;
            loss_sum += parts.total.as_f64() * idx.len() as f64;
            ce_sum += parts.cross_entropy.as_f64() * idx.len() as f64;
            masked_adam_step(&mut model, &mut state, &grad, &masks, lr, &cfg.optim).map_err(|e| at_epoch(epoch, e))?;
        }
        let n = train.len() as f64;
        if !(loss_sum / n).is_finite() {
            return Err(GrftError::numeric(format!("epoch {epoch}: non-finite training loss")));
        }
        epochs.push(EpochRecord {
            epoch,
            lr,
            loss_r: loss_sum / n,
            ce_loss: ce_sum / n,
            test_acc: evaluate(&model, test)?,
        });
    }

    let report = TrainReport {
        config: serde_json::to_value(cfg)?,
        final_accuracy: epochs.last().map_or(0.0, |e| e.test_acc),
        epochs,
        trainable_fraction: trainable_fraction(&start, &masks)?,
        storage_bits: masks.storage_bits(),
        layer_distances: layer_distances(&model, &anchor)?,
        mask_subset,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(FineTuneOutcome { model, start, masks, report })
}

/// Hyperparameter swept by `ablate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    K,
    Lambda,
    RegularBlocks,
    SubsetsN,
    Variant,
    Norm,
}

impl FromStr for AblationAxis {
    type Err = GrftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(Self::K),
            "lambda" => Ok(Self::Lambda),
            "regular_blocks" => Ok(Self::RegularBlocks),
            "subsets_n" => Ok(Self::SubsetsN),
            "variant" => Ok(Self::Variant),
            "norm" => Ok(Self::Norm),
            other => Err(GrftError::config(format!("unknown ablation axis {other:?}"))),
        }
    }
}

impl AblationAxis {
    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &FineTuneConfig, value: &str) -> Result<FineTuneConfig> {
        let bad = || GrftError::config(format!("invalid value {value:?} for axis {self:?}"));
        let mut cfg = base.clone();
        match self {
            AblationAxis::K => cfg.k = value.parse().map_err(|_| bad())?,
            AblationAxis::Lambda => cfg.reg.lambda = value.parse().map_err(|_| bad())?,
            AblationAxis::RegularBlocks => cfg.reg.set.last_l = value.parse().map_err(|_| bad())?,
            AblationAxis::SubsetsN => cfg.subsets_n = value.parse().map_err(|_| bad())?,
            AblationAxis::Variant => cfg.variant = value.parse()?,
            AblationAxis::Norm => {
                cfg.reg.norm = match value {
                    "l2" => Norm::L2,
                    "l1" => Norm::L1,
                    "none" => Norm::None,
                    _ => return Err(bad()),
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One fine-tune run per value with everything else, seeds included, held
/// fixed. Runs execute in parallel; reports come back in value order.
pub fn ablate<T: Scalar>(
    pre: &ModelParams<T>,
    task: &TaskPair<T>,
    base: &FineTuneConfig,
    axis: AblationAxis,
    values: &[String],
) -> Result<Vec<TrainReport>> {
    if values.is_empty() {
        return Err(GrftError::config("ablation needs at least one value"));
    }
    let configs = values.iter().map(|v| axis.apply(base, v)).collect::<Result<Vec<_>>>()?;
    configs
        .par_iter()
        .map(|cfg| finetune(pre, task, cfg).map(|o| o.report))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_task, ShiftConfig, TaskSpec};
    use crate::losses::RegularSet;
    use crate::model::{Activation, Layer, Role};
    use crate::numeric::Matrix;

    fn small_task() -> TaskPair<f64> {
        gen_task(&TaskSpec {
            dim: 6,
            classes: 3,
            per_class: 12,
            test_per_class: 10,
            noise_sigma: 0.2,
            shift: ShiftConfig { seed: 3, angle: 0.6, offset: 0.2 },
            seed: 4,
        })
        .unwrap()
    }

    fn pre_cfg(epochs: usize) -> PretrainConfig {
        PretrainConfig { dims: vec![6, 8, 8, 3], optim: OptimConfig::new(0.01, 1, epochs.max(2)), batch_size: 8, seed: 5 }
    }

    fn ft_cfg(variant: FineTuneVariant) -> FineTuneConfig {
        FineTuneConfig {
            k: 2,
            variant,
            reg: RegConfig {
                lambda: 1e-3,
                norm: Norm::L2,
                set: RegularSet { last_l: 1, include_embedding: true, include_head: true },
            },
            tau: 0.5,
            subsets_n: 2,
            optim: OptimConfig::new(0.01, 2, 12),
            batch_size: 8,
            seed: 6,
        }
    }

    #[test]
    fn zero_epoch_pretrain_is_init() {
        let task = small_task();
        let cfg = PretrainConfig { optim: OptimConfig::new(0.01, 0, 0), ..pre_cfg(0) };
        let m = pretrain(&task, &cfg).unwrap();
        assert_eq!(m, init_model(&cfg.dims, &default_roles(3), cfg.seed).unwrap());
    }

    #[test]
    fn pretrain_is_deterministic_and_checks_dims() {
        let task = small_task();
        assert_eq!(pretrain(&task, &pre_cfg(5)).unwrap(), pretrain(&task, &pre_cfg(5)).unwrap());
        let bad = PretrainConfig { dims: vec![5, 8, 3], ..pre_cfg(5) };
        assert!(matches!(pretrain(&task, &bad), Err(GrftError::Config(_))));
        let bad = PretrainConfig { dims: vec![6, 8, 4], ..pre_cfg(5) };
        assert!(matches!(pretrain(&task, &bad), Err(GrftError::Config(_))));
    }

    #[test]
    fn evaluate_examples() {
        let x = Matrix::from_rows(&[[3.0, 1.0, 0.0], [0.0, 2.0, 1.0], [0.0, 0.0, 5.0], [1.0, 1.0, 1.0]]).unwrap();
        let data = Dataset::new(x.clone(), vec![0, 1, 2, 0], 3).unwrap();
        let id = ModelParams::new(vec![Layer::new(Matrix::identity(3), vec![0.0; 3], Role::Head, Activation::Identity)
            .unwrap()])
        .unwrap();
        assert_eq!(evaluate(&id, &data).unwrap(), 1.0);
        let biased = ModelParams::new(vec![Layer::new(
            Matrix::zeros(3, 3),
            vec![0.0, 0.0, 1.0],
            Role::Head,
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let single = Dataset::new(x, vec![2; 4], 3).unwrap();
        assert_eq!(evaluate(&biased, &single).unwrap(), 1.0);
        let two = Dataset::new(Matrix::zeros(2, 3), vec![0, 1], 2).unwrap();
        assert!(matches!(evaluate(&id, &two), Err(GrftError::Shape(_))));
    }

    #[test]
    fn finetune_report_is_complete_and_deterministic() {
        let task = small_task();
        let pre = pretrain(&task, &pre_cfg(10)).unwrap();
        let cfg = ft_cfg(FineTuneVariant::Row);
        let a = finetune(&pre, &task, &cfg).unwrap();
        let b = finetune(&pre, &task, &cfg).unwrap();
        assert_eq!(a.report.without_timing(), b.report.without_timing());
        assert_eq!(a.model, b.model);
        assert_eq!(a.report.epochs.len(), 12);
        assert!(a.report.epochs.iter().all(|e| (0.0..=1.0).contains(&e.test_acc)));
        assert_eq!(a.report.layer_distances.len(), 3);
        assert_eq!(a.report.mask_subset.as_ref().unwrap().losses.len(), 2);
        assert_eq!(a.report.config["variant"], "row");
        assert!(a.report.epochs_csv().starts_with("epoch,lr,loss_R,ce_loss,test_acc\n"));
    }

    #[test]
    fn frozen_entries_stay_put() {
        let task = small_task();
        let pre = pretrain(&task, &pre_cfg(10)).unwrap();
        for variant in [FineTuneVariant::Row, FineTuneVariant::Col, FineTuneVariant::Sparse, FineTuneVariant::Head] {
            let out = finetune(&pre, &task, &ft_cfg(variant)).unwrap();
            for ((mask, a), b) in out.masks.layers.iter().zip(out.model.layers()).zip(out.start.layers()) {
                for (e, sel) in mask.weight_bits().into_iter().enumerate() {
                    if !sel {
                        assert_eq!(a.weight.as_slice()[e].to_bits(), b.weight.as_slice()[e].to_bits());
                    }
                }
                for (e, sel) in mask.bias_bits().into_iter().enumerate() {
                    if !sel {
                        assert_eq!(a.bias[e].to_bits(), b.bias[e].to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn oversized_k_names_the_layer() {
        let task = small_task();
        let pre = pretrain(&task, &pre_cfg(2)).unwrap();
        let err = finetune(&pre, &task, &FineTuneConfig { k: 9, ..ft_cfg(FineTuneVariant::Row) }).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn ablation_axis_parsing() {
        let base = ft_cfg(FineTuneVariant::Row);
        assert_eq!(AblationAxis::K.apply(&base, "3").unwrap().k, 3);
        assert_eq!(AblationAxis::Lambda.apply(&base, "1e-5").unwrap().reg.lambda, 1e-5);
        assert_eq!(AblationAxis::RegularBlocks.apply(&base, "2").unwrap().reg.set.last_l, 2);
        assert_eq!(AblationAxis::Norm.apply(&base, "l1").unwrap().reg.norm, Norm::L1);
        assert_eq!(AblationAxis::Variant.apply(&base, "sparse").unwrap().variant, FineTuneVariant::Sparse);
        assert!(AblationAxis::SubsetsN.apply(&base, "zero").is_err());
        assert!("depth".parse::<AblationAxis>().is_err());
    }

    #[test]
    fn ablation_keeps_value_order() {
        let task = small_task();
        let pre = pretrain(&task, &pre_cfg(5)).unwrap();
        let base = ft_cfg(FineTuneVariant::Row);
        let values: Vec<String> = ["1", "3", "2"].iter().map(|s| s.to_string()).collect();
        let reports = ablate(&pre, &task, &base, AblationAxis::K, &values).unwrap();
        let ks: Vec<u64> = reports.iter().map(|r| r.config["k"].as_u64().unwrap()).collect();
        assert_eq!(ks, vec![1, 3, 2]);
        let lambda0 = ablate(&pre, &task, &base, AblationAxis::Lambda, &["0".to_string()]).unwrap();
        let direct = finetune(&pre, &task, &FineTuneConfig { reg: RegConfig { lambda: 0.0, ..base.reg }, ..base.clone() })
            .unwrap();
        assert_eq!(lambda0[0].without_timing(), direct.report.without_timing());
    }
}
