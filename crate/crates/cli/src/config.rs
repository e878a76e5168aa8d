use std::path::{Path, PathBuf};

use quancrypt::attack::{AttackConfig, AttackInit, AttackOptimizer};
use quancrypt::ckks::CkksParams;
use quancrypt::data::PartitionStrategy;
use quancrypt::federation::{FederationConfig, Mode, RangeMode};
use quancrypt::nn::TrainConfig;
use quancrypt::par::Exec;
use quancrypt::shaping::{ClipConfig, PruneSchedule};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Mnist,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSection {
    pub clients: usize,
    pub rounds: u32,
    pub mode: Mode,
    pub lambda: f64,
    pub checkpoint_patience: u32,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub exec: Exec,
    pub data: DataSource,
    /// IDX directory; falls back to `QUANCRYPT_MNIST_DIR`, then `data/mnist`.
    pub mnist_dir: Option<PathBuf>,
    /// Use only the first `train_subset` training images.
    pub train_subset: Option<usize>,
    pub train_fraction: f64,
    pub partition: PartitionStrategy,
    pub classes_per_client: usize,
    pub synthetic_samples: usize,
    pub synthetic_features: usize,
    pub synthetic_classes: usize,
    pub synthetic_separation: f64,
}

impl Default for FederationSection {
    fn default() -> Self {
        let f = FederationConfig::default();
        Self {
            clients: f.num_clients,
            rounds: f.rounds,
            mode: f.mode,
            lambda: f.lambda,
            checkpoint_patience: f.checkpoint_patience,
            hidden: f.hidden,
            seed: f.seed,
            exec: f.exec,
            data: DataSource::Mnist,
            mnist_dir: None,
            train_subset: None,
            train_fraction: 0.8,
            partition: PartitionStrategy::Iid,
            classes_per_client: 2,
            synthetic_samples: 4000,
            synthetic_features: 32,
            synthetic_classes: 10,
            synthetic_separation: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantSection {
    pub bits: u32,
    pub range_mode: RangeMode,
    pub headroom: f64,
}

impl Default for QuantSection {
    fn default() -> Self {
        let f = FederationConfig::default();
        Self {
            bits: f.bits,
            range_mode: f.range_mode,
            headroom: f.headroom,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub tv_weight: f64,
    pub steps: u32,
    pub step_size: f64,
    pub init: AttackInit,
    pub fd_epsilon: f64,
    pub patience: u32,
    pub optimizer: AttackOptimizer,
    pub prune_rates: Vec<f64>,
    /// Number of target seeds, `0..seeds`.
    pub seeds: u64,
    /// Victim checkpoint; the built-in tiny victim when absent.
    pub checkpoint: Option<PathBuf>,
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            tv_weight: a.tv_weight,
            steps: a.steps,
            step_size: a.step_size,
            init: a.init,
            fd_epsilon: a.fd_epsilon,
            patience: a.patience,
            optimizer: a.optimizer,
            prune_rates: vec![0.0, 0.3, 0.5, 0.7],
            seeds: 10,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub federation: FederationSection,
    pub training: TrainConfig,
    pub he: CkksParams,
    pub quantization: QuantSection,
    pub pruning: PruneSchedule,
    pub clipping: ClipConfig,
    pub attack: AttackSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Parse errors carry the offending line and key.
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn federation(&self) -> FederationConfig {
        let f = &self.federation;
        FederationConfig {
            num_clients: f.clients,
            rounds: f.rounds,
            mode: f.mode,
            lambda: f.lambda,
            bits: self.quantization.bits,
            clip: self.clipping,
            schedule: self.pruning,
            train: self.training.clone(),
            he: self.he.clone(),
            range_mode: self.quantization.range_mode,
            headroom: self.quantization.headroom,
            checkpoint_patience: f.checkpoint_patience,
            hidden: f.hidden.clone(),
            seed: f.seed,
            exec: f.exec,
        }
    }

    pub fn attack(&self) -> AttackConfig {
        let a = &self.attack;
        AttackConfig {
            tv_weight: a.tv_weight,
            steps: a.steps,
            step_size: a.step_size,
            init: a.init,
            prune_rate: 0.0,
            fd_epsilon: a.fd_epsilon,
            patience: a.patience,
            optimizer: a.optimizer,
            seed: self.federation.seed,
        }
    }

    pub fn mnist_dir(&self) -> PathBuf {
        self.federation
            .mnist_dir
            .clone()
            .or_else(|| std::env::var_os("QUANCRYPT_MNIST_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }
}

/// Written next to every run's outputs; enough to repeat the run.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a RunConfig,
}

impl Manifest<'_> {
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join("manifest.toml");
        let text =
            toml::to_string(self).map_err(|e| CliError::Runtime(format!("manifest: {e}")))?;
        std::fs::write(&path, text)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
