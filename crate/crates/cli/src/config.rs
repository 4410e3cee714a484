use std::path::Path;

use grft_core::data::TaskSpec;
use grft_core::harness::{FineTuneConfig, PretrainConfig};
use grft_core::reference;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Everything a run needs: the synthetic task, pretraining and fine-tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub pretrain: PretrainConfig,
    pub finetune: FineTuneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: reference::task_spec(),
            pretrain: reference::pretrain_config(),
            finetune: reference::finetune_config(),
        }
    }
}

impl RunConfig {
    /// Reads `path`, or the reference experiment when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::User(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::User(format!("config {}: {e}", path.display())))
    }

    /// Checks each section, prefixing errors with the section name.
    pub fn validate(&self) -> Result<(), Failure> {
        let section = |name: &str, r: grft_core::Result<()>| {
            r.map_err(|e| match e {
                grft_core::GrftError::Config(m) => Failure::User(format!("config field {name}: {m}")),
                other => Failure::User(format!("config field {name}: {other}")),
            })
        };
        section("task", self.task.validate())?;
        section("pretrain.optim", self.pretrain.optim.validate())?;
        if self.pretrain.batch_size == 0 {
            return Err(Failure::User("config field pretrain.batch_size: must be positive".into()));
        }
        section("finetune", self.finetune.validate())
    }
}
