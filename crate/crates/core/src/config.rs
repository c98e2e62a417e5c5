//! Run configuration file (TOML).
//!
//! ```toml
//! task = "parity_check"
//! seeds = [0, 1, 2, 3, 4]
//! out_dir = "runs/parity"
//!
//! [model]
//! integration = "temporal"
//!
//! [model.stack]
//! structure_mode = "queue"
//!
//! [train]
//! steps = 30000
//! entropy_weight = 0.01
//! ```
//!
//! Every field has a default; `model.vocab_size` is taken from the task
//! when left at zero.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tasks::{TaskKind, Vocabulary};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Skip the remaining seeds once one reaches this held-out accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_accuracy: Option<f64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    pub fn new(task: TaskKind) -> Self {
        Self {
            task: task.name().to_string(),
            seeds: default_seeds(),
            out_dir: default_out(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            target_accuracy: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn task_kind(&self) -> Result<TaskKind> {
        self.task.parse()
    }

    /// Model config with the vocabulary size filled in from the task.
    pub fn resolved_model(&self) -> Result<ModelConfig> {
        let task = self.task_kind()?;
        let mut m = self.model.clone();
        let v = Vocabulary::for_task(task).len();
        if m.vocab_size == 0 {
            m.vocab_size = v;
        } else if m.vocab_size != v {
            return Err(Error::InvalidConfig(format!(
                "model.vocab_size = {} but task {task} has {v} symbols",
                m.vocab_size
            )));
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved_model()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IntegrationMode, NamedPlacement, Placement};
    use crate::stack::{ActionMode, ReadMode, StructureMode};

    #[test]
    fn round_trip() {
        let mut c = RunConfig::new(TaskKind::ParityCheck);
        c.seeds = vec![3, 4];
        c.model.integration = IntegrationMode::Layerwise;
        c.model.stack.structure_mode = StructureMode::Queue;
        c.model.stack.action_mode = ActionMode::PushOnly;
        c.model.stack.read_mode = ReadMode::TopPeek;
        c.model.stack.placement = Placement::Layers(vec![0, 3]);
        c.train.early_stop_accuracy = Some(1.0);
        c.train.val_lengths = Some((41, 60));
        c.train.eval_lengths = vec![(41, 100), (101, 500)];
        c.target_accuracy = Some(0.95);
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);

        c.model.stack.placement = Placement::Named(NamedPlacement::All);
        c.train.early_stop_accuracy = None;
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn minimal_file_and_errors() {
        let c = RunConfig::from_toml("task = \"reverse_string\"").unwrap();
        assert_eq!(c.resolved_model().unwrap().vocab_size, 6);
        c.validate().unwrap();
        assert!(RunConfig::from_toml("task = \"x\"\nbogus = 1").is_err());
        let c = RunConfig::from_toml("task = \"nope\"").unwrap();
        assert!(matches!(c.validate(), Err(Error::UnknownTask(_))));
        let c = RunConfig::from_toml("task = \"parity_check\"\n[model]\nvocab_size = 3").unwrap();
        assert!(c.validate().is_err());
    }
}
