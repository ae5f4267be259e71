use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::composition::Architecture;
use crate::error::{Error, Result};
use crate::trainer::TrainHyper;
use crate::universe::{Universe, World};

/// The world left out of training, and which trained task module stands in
/// for the wrong-task baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Holdout {
    pub robot: String,
    pub task: String,
    /// Defaults to the first other task of the universe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrong_task: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Test-split scenes per evaluation.
    pub conditions: usize,
    pub seeds: Vec<u64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            conditions: 4,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub universe: Universe,
    pub holdout: Holdout,
    #[serde(default)]
    pub trainer: TrainHyper,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub regularization: Architecture,
    /// Run directory used when the command line gives none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.universe.validate()?;
        self.universe.held_out_split(&self.held_out())?;
        self.trainer.validate()?;
        self.regularization.validate()?;
        if self.eval.seeds.is_empty() || self.eval.conditions == 0 {
            return Err(Error::Config("eval needs at least one seed and one condition".into()));
        }
        let wrong = self.wrong_task()?;
        if wrong == self.holdout.task {
            return Err(Error::Config("wrong task must differ from the held-out task".into()));
        }
        Ok(())
    }

    pub fn held_out(&self) -> World {
        World::new(&self.holdout.robot, &self.holdout.task)
    }

    pub fn train_worlds(&self) -> Result<Vec<World>> {
        self.universe.held_out_split(&self.held_out())
    }

    pub fn wrong_task(&self) -> Result<String> {
        match &self.holdout.wrong_task {
            Some(t) => Ok(self.universe.task(t)?.id.clone()),
            None => self
                .universe
                .tasks
                .iter()
                .find(|t| t.id != self.holdout.task)
                .map(|t| t.id.clone())
                .ok_or_else(|| Error::Config("the universe has no second task for the wrong-task baseline".into())),
        }
    }

    /// SHA-256 of the canonical serialization, hex encoded. The output
    /// directory is excluded so moving a run does not change its hash.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
