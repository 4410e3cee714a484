use grft_core::data::{gen_task, ShiftConfig, TaskSpec};
use grft_core::harness::{ablate, finetune, pretrain, AblationAxis, FineTuneConfig, FineTuneVariant, PretrainConfig};
use grft_core::losses::{Norm, RegConfig, RegularSet};
use grft_core::model::{load_checkpoint, save_checkpoint};
use grft_core::optim::OptimConfig;
use grft_core::{GrftError, ModelParams, TaskPair};

fn task() -> TaskPair {
    gen_task(&TaskSpec {
        dim: 8,
        classes: 3,
        per_class: 30,
        test_per_class: 30,
        noise_sigma: 0.3,
        shift: ShiftConfig { seed: 9, angle: 0.8, offset: 0.3 },
        seed: 11,
    })
    .unwrap()
}

fn pretrained(task: &TaskPair) -> ModelParams {
    let cfg = PretrainConfig { dims: vec![8, 12, 12, 3], optim: OptimConfig::new(0.01, 2, 20), batch_size: 16, seed: 2 };
    pretrain(task, &cfg).unwrap()
}

fn base() -> FineTuneConfig {
    FineTuneConfig {
        k: 3,
        variant: FineTuneVariant::Row,
        reg: RegConfig { lambda: 0.0, norm: Norm::L2, set: RegularSet { last_l: 1, include_embedding: true, include_head: true } },
        tau: 0.1,
        subsets_n: 2,
        optim: OptimConfig::new(0.01, 2, 20),
        batch_size: 16,
        seed: 4,
    }
}

#[test]
fn huge_lambda_pins_regularized_layers() {
    let task = task();
    let pre = pretrained(&task);
    let free = finetune(&pre, &task, &base()).unwrap().report;
    let pinned = finetune(&pre, &task, &FineTuneConfig { reg: RegConfig { lambda: 1e6, ..base().reg }, ..base() })
        .unwrap()
        .report;
    let members = base().reg.set.members(&pre);
    for (l, member) in members.into_iter().enumerate() {
        if member {
            assert!(pinned.layer_distances[l] < free.layer_distances[l], "layer {l}");
            assert!(pinned.layer_distances[l] < 1e-3, "layer {l}: {}", pinned.layer_distances[l]);
        }
    }
}

#[test]
fn k_at_full_width_trains_everything() {
    let task = task();
    let pre = pretrained(&task);
    let reports = ablate(&pre, &task, &base(), AblationAxis::K, &["12".into(), "3".into()]).unwrap();
    assert_eq!(reports[0].trainable_fraction, 1.0);
    assert!(reports[1].trainable_fraction < 1.0);
    assert_eq!(reports[1].config["k"], 3);
}

#[test]
fn row_masks_at_full_width_match_full_finetuning() {
    let task = task();
    let pre = pretrained(&task);
    let rows = finetune(&pre, &task, &FineTuneConfig { k: 12, ..base() }).unwrap();
    let full = finetune(&pre, &task, &FineTuneConfig { variant: FineTuneVariant::Full, ..base() }).unwrap();
    assert_eq!(rows.model, full.model);
}

#[test]
fn runs_are_reproducible_through_checkpoints() {
    let task = task();
    let pre = pretrained(&task);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pre.json");
    save_checkpoint(&pre, &path).unwrap();
    let loaded: ModelParams = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, pre);
    let a = finetune(&pre, &task, &base()).unwrap();
    let b = finetune(&loaded, &task, &base()).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.report.without_timing(), b.report.without_timing());
}

#[test]
fn oversized_k_is_a_config_error_naming_the_layer() {
    let task = task();
    let pre = pretrained(&task);
    let err = finetune(&pre, &task, &FineTuneConfig { k: 13, ..base() }).unwrap_err();
    assert!(matches!(err, GrftError::Config(_)));
    assert!(err.to_string().contains("layer 0"), "{err}");
}

#[test]
fn ablation_over_norms_and_variants() {
    let task = task();
    let pre = pretrained(&task);
    let mut cfg = base();
    cfg.reg.lambda = 0.01;
    let norms = ablate(&pre, &task, &cfg, AblationAxis::Norm, &["l2".into(), "l1".into(), "none".into()]).unwrap();
    assert_eq!(norms.len(), 3);
    let variants =
        ablate(&pre, &task, &cfg, AblationAxis::Variant, &["row".into(), "col".into(), "sparse".into()]).unwrap();
    assert!(variants.iter().all(|r| r.final_accuracy.is_finite() && r.trainable_fraction < 1.0));
    assert!(ablate(&pre, &task, &cfg, AblationAxis::Norm, &["l3".into()]).is_err());
}
