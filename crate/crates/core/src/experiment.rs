//! Experiment configuration: one human-readable key/value (TOML) file
//! holding the model hyperparameters, the training schedule and the task
//! selection. See the repository README for the full key list.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{build_denoising_task, build_sine_task, load_idx, Dataset, Split};
use crate::error::{FitDnnError, Result};
use crate::model::{
    Activation, FitDnnConfig, OutputActivation, Preprocessing, ThetaMode,
};
use crate::topology::{choose_delays, DelayStrategy};
use crate::training::{Loss, TrainSchedule};

/// Which benchmark the experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Digit classification from IDX files.
    Mnist,
    /// Clothing classification from IDX files (same layout as MNIST).
    FashionMnist,
    /// Reconstruction of clean images from noise-corrupted versions.
    Denoising,
    /// Scalar regression onto a composition of `depth` sine functions.
    Sine { depth: usize },
}

impl TaskKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(TaskKind::Mnist),
            "fashion_mnist" => Ok(TaskKind::FashionMnist),
            "denoising" => Ok(TaskKind::Denoising),
            _ => {
                if let Some(depth) = s.strip_prefix("sine") {
                    let depth: usize = depth.parse().map_err(|_| {
                        FitDnnError::InvalidConfig(format!("unknown task {s:?}"))
                    })?;
                    if (1..=5).contains(&depth) {
                        return Ok(TaskKind::Sine { depth });
                    }
                }
                Err(FitDnnError::InvalidConfig(format!(
                    "unknown task {s:?} (expected mnist, fashion_mnist, denoising, or sine1..sine5)"
                )))
            }
        }
    }

    pub fn needs_data_dir(&self) -> bool {
        matches!(
            self,
            TaskKind::Mnist | TaskKind::FashionMnist | TaskKind::Denoising
        )
    }
}

fn default_sigma_task() -> f64 {
    1.0
}

fn default_strategy() -> DelayStrategy {
    DelayStrategy::UniformNoReplacement
}

/// Raw experiment file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: String,
    pub input_dim: usize,
    pub output_dim: usize,
    pub nodes_per_layer: usize,
    pub hidden_layers: usize,
    pub num_delays: usize,
    /// Explicit delay list; overrides `num_delays`/`delay_strategy`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays: Option<Vec<usize>>,
    #[serde(default = "default_strategy")]
    pub delay_strategy: DelayStrategy,
    pub theta: f64,
    pub alpha: f64,
    #[serde(default)]
    pub x0: f64,
    pub theta_mode: ThetaMode,
    pub activation: Activation,
    pub preprocessing: Preprocessing,
    pub output_activation: OutputActivation,
    pub eta0: f64,
    pub eta1: f64,
    pub epochs: usize,
    #[serde(default)]
    pub sigma_noise: f64,
    #[serde(default)]
    pub jitter: bool,
    #[serde(default)]
    pub rotation_flip: bool,
    #[serde(default)]
    pub dropout: f64,
    /// Noise intensity of the denoising task input corruption.
    #[serde(default = "default_sigma_task")]
    pub sigma_task: f64,
    pub seed: u64,
}

/// Everything a run needs, with delays resolved.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub task: TaskKind,
    pub config: FitDnnConfig,
    pub schedule: TrainSchedule,
    pub loss: Loss,
    pub seed: u64,
    pub sigma_task: f64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FitDnnError::Parse(format!("config: {e}")))
    }

    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            FitDnnError::Parse(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| FitDnnError::Parse(format!("config: {e}")))
    }

    /// Seed for the delay draw.
    pub fn delay_seed(&self) -> u64 {
        self.seed
    }

    /// Seed for weight initialization.
    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    /// Seed for the training loop (shuffling, augmentation, dropout).
    pub fn train_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    /// Seed for task construction (denoising corruption, sine sampling).
    pub fn task_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let task = TaskKind::parse(&self.task)?;
        let delays = match &self.delays {
            Some(explicit) => explicit.clone(),
            None => choose_delays(
                self.nodes_per_layer,
                self.num_delays,
                self.delay_strategy,
                self.delay_seed(),
            )?,
        };
        let config = FitDnnConfig {
            alpha: self.alpha,
            theta: self.theta,
            nodes_per_layer: self.nodes_per_layer,
            hidden_layers: self.hidden_layers,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            delays,
            activation: self.activation,
            preprocessing: self.preprocessing,
            output_activation: self.output_activation,
            x0: self.x0,
            theta_mode: self.theta_mode,
        };
        config.validate()?;
        let loss = match self.output_activation {
            OutputActivation::Softmax => Loss::CrossEntropy,
            OutputActivation::Clip01 | OutputActivation::Identity => Loss::Mse,
        };
        let schedule = TrainSchedule {
            eta0: self.eta0,
            eta1: self.eta1,
            epochs: self.epochs,
            rng_seed: self.train_seed(),
            sigma_noise: self.sigma_noise,
            jitter: self.jitter,
            dropout_rate: self.dropout,
            rotation_flip: self.rotation_flip,
        };
        if !(0.0..1.0).contains(&schedule.dropout_rate) {
            return Err(FitDnnError::InvalidConfig(
                "dropout must lie in [0, 1)".into(),
            ));
        }
        Ok(ResolvedExperiment {
            task,
            config,
            schedule,
            loss,
            seed: self.seed,
            sigma_task: self.sigma_task,
        })
    }
}

/// Standard IDX file names inside a data directory.
pub const IDX_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

impl ResolvedExperiment {
    /// Load the train/test pair for this experiment. Image tasks read the
    /// four standard IDX files from `data_dir`.
    pub fn load_datasets(&self, data_dir: Option<&Path>) -> Result<(Dataset, Dataset)> {
        let load_pair = |dir: &Path| -> Result<(Dataset, Dataset)> {
            let train = load_idx(
                &dir.join(IDX_FILES[0]),
                &dir.join(IDX_FILES[1]),
                Split::Train,
            )?;
            let test = load_idx(&dir.join(IDX_FILES[2]), &dir.join(IDX_FILES[3]), Split::Test)?;
            Ok((train, test))
        };
        let (train, test) = match self.task {
            TaskKind::Mnist | TaskKind::FashionMnist => {
                let dir = data_dir.ok_or_else(|| {
                    FitDnnError::InvalidConfig("this task needs --data-dir".into())
                })?;
                load_pair(dir)?
            }
            TaskKind::Denoising => {
                let dir = data_dir.ok_or_else(|| {
                    FitDnnError::InvalidConfig("this task needs --data-dir".into())
                })?;
                let (train, test) = load_pair(dir)?;
                let seed = self.task_seed();
                (
                    build_denoising_task(&train, self.sigma_task, seed)?,
                    build_denoising_task(&test, self.sigma_task, seed.wrapping_add(1))?,
                )
            }
            TaskKind::Sine { depth } => build_sine_task(depth, 10_000, 1_000, self.task_seed())?,
        };
        train.check_compatible(&self.config)?;
        test.check_compatible(&self.config)?;
        Ok((train, test))
    }

    fn task_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
task = "mnist"
input_dim = 784
output_dim = 10
nodes_per_layer = 100
hidden_layers = 2
num_delays = 100
theta = 0.5
alpha = 1.0
theta_mode = "small_theta"
activation = "sin"
preprocessing = "tanh"
output_activation = "softmax"
eta0 = 0.01
eta1 = 10000.0
epochs = 100
sigma_noise = 0.1
jitter = true
seed = 1
"#;

    #[test]
    fn parse_and_resolve_standard_config() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.task, TaskKind::Mnist);
        assert_eq!(resolved.config.delays.len(), 100);
        assert_eq!(resolved.loss, Loss::CrossEntropy);
        assert_eq!(resolved.schedule.epochs, 100);
        assert!(resolved.schedule.jitter);
        // delays resolve deterministically from the seed
        let again = cfg.resolve().unwrap();
        assert_eq!(resolved.config.delays, again.config.delays);
    }

    #[test]
    fn explicit_delays_override_strategy() {
        let text = SAMPLE.replace("num_delays = 100", "num_delays = 3\ndelays = [7, 100, 150]");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.config.delays, vec![7, 100, 150]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{SAMPLE}\nbogus_key = 1\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn task_parsing() {
        assert_eq!(TaskKind::parse("sine3").unwrap(), TaskKind::Sine { depth: 3 });
        assert!(TaskKind::parse("sine9").is_err());
        assert!(TaskKind::parse("imagenet").is_err());
        assert!(!TaskKind::parse("sine1").unwrap().needs_data_dir());
        assert!(TaskKind::parse("denoising").unwrap().needs_data_dir());
    }

    #[test]
    fn mse_tasks_derive_mse_loss() {
        let text = SAMPLE
            .replace("output_activation = \"softmax\"", "output_activation = \"clip01\"")
            .replace("task = \"mnist\"", "task = \"denoising\"")
            .replace("output_dim = 10", "output_dim = 784");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.resolve().unwrap().loss, Loss::Mse);
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.resolve().unwrap().config, back.resolve().unwrap().config);
    }
}
