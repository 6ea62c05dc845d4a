//! Run manifest: everything needed to reproduce a run, written next to the
//! run's outputs.

use std::path::{Path, PathBuf};

use serde::Serialize;

use fitdnn_core::{ExperimentConfig, FitDnnConfig};

#[derive(Serialize)]
pub struct SeedDerivation {
    pub master: u64,
    pub delays: u64,
    pub init: u64,
    pub train: u64,
    pub task: u64,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub timestamp: String,
    pub config_path: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub experiment: Option<ExperimentConfig>,
    /// Model hyperparameters with delays resolved.
    pub model: FitDnnConfig,
    pub seeds: Option<SeedDerivation>,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path, model: FitDnnConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            config_path: None,
            data_dir: None,
            checkpoint: None,
            out_dir: out_dir.to_path_buf(),
            experiment: None,
            model,
            seeds: None,
        }
    }

    pub fn with_experiment(mut self, path: &Path, experiment: &ExperimentConfig) -> Self {
        self.config_path = Some(path.to_path_buf());
        self.seeds = Some(SeedDerivation {
            master: experiment.seed,
            delays: experiment.delay_seed(),
            init: experiment.init_seed(),
            train: experiment.train_seed(),
            task: experiment.task_seed(),
        });
        self.experiment = Some(experiment.clone());
        self
    }

    pub fn write(&self, out_dir: &Path) -> std::io::Result<()> {
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text)
    }
}
