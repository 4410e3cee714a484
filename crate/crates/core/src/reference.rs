//! The reference transfer experiment: a 16-dimensional, 4-class Gaussian
//! task whose target domain is rotated and offset from the source, with a
//! `[16, 32, 32, 4]` MLP. The CLI writes these as its default config and the
//! acceptance suite pins results against them.

use crate::data::{ShiftConfig, TaskSpec};
use crate::harness::{FineTuneConfig, FineTuneVariant, PretrainConfig};
use crate::losses::{Norm, RegConfig, RegularSet};
use crate::optim::OptimConfig;

pub fn task_spec() -> TaskSpec {
    TaskSpec {
        dim: 16,
        classes: 4,
        per_class: 200,
        test_per_class: 200,
        noise_sigma: 0.3,
        shift: ShiftConfig { seed: 7, angle: 1.2, offset: 0.3 },
        seed: 2024,
    }
}

pub fn pretrain_config() -> PretrainConfig {
    PretrainConfig { dims: vec![16, 32, 32, 4], optim: OptimConfig::new(0.01, 5, 50), batch_size: 32, seed: 1 }
}

/// Row-masked with `k = 2`, light L2 pull on the embedding, the last hidden
/// layer and the head, 10 warmup epochs then 100 cosine epochs.
pub fn finetune_config() -> FineTuneConfig {
    FineTuneConfig {
        k: 2,
        variant: FineTuneVariant::Row,
        reg: RegConfig {
            lambda: 1e-4,
            norm: Norm::L2,
            set: RegularSet { last_l: 1, include_embedding: true, include_head: true },
        },
        tau: 0.1,
        subsets_n: 4,
        optim: OptimConfig::new(0.01, 10, 110),
        batch_size: 32,
        seed: 3,
    }
}
