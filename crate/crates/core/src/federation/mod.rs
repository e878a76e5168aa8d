//! Federated training with pruned, clipped, quantized, encrypted updates.

mod client;
mod run;
mod server;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ckks::{CkksError, CkksParams};
use crate::data::DataError;
use crate::nn::{NnError, TrainConfig};
use crate::par::Exec;
use crate::quant::QuantError;
use crate::shaping::{ClipConfig, PruneSchedule, ShapingError};

pub use client::{
    client_prepare_update, shape_update, ClientBackend, EncryptedUpdate, LayerUpdate, Payload,
};
pub use run::{run_training, FederatedData, Federation, RoundOutput, RoundTrace, TrainingOutcome};
pub use server::{
    compute_shared_range, decode_aggregate, server_aggregate, server_finalize_round, smooth,
    Aggregate, CheckpointTracker, ServerKeys, SharedRange,
};

#[derive(Debug, Error)]
pub enum FedError {
    #[error(transparent)]
    Ckks(#[from] CkksError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid federation config: {0}")]
    Config(String),
    #[error("client {client} produced a non-finite update in tensor {layer}")]
    NonFinite { client: usize, layer: usize },
}

pub type Result<T> = std::result::Result<T, FedError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Quancrypt,
    /// Full pipeline with a plaintext stand-in for encryption.
    PlainQuant,
    /// Plain FedAvg of raw local weights.
    Vanilla,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeMode {
    #[default]
    Shared,
    PerClient,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointAction {
    Saved,
    Reloaded,
    #[default]
    None,
}

/// One metrics row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub test_acc: f64,
    pub val_acc: f64,
    pub loss: f64,
    pub prune_rate: f64,
    pub enc_ms: f64,
    pub dec_ms: f64,
    pub agg_ms: f64,
    pub upload_bytes: u64,
    pub checkpoint: CheckpointAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub rounds: u32,
    pub mode: Mode,
    pub lambda: f64,
    pub bits: u32,
    pub clip: ClipConfig,
    pub schedule: PruneSchedule,
    pub train: TrainConfig,
    pub he: CkksParams,
    pub range_mode: RangeMode,
    /// Multiplier on the clip bound of the global model when deriving the shared range.
    pub headroom: f64,
    pub checkpoint_patience: u32,
    /// Hidden layer widths of the MLP built by `run_training`.
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_clients: 5,
            rounds: 30,
            mode: Mode::Quancrypt,
            lambda: 1.0,
            bits: 8,
            clip: ClipConfig::default(),
            schedule: PruneSchedule::default(),
            train: TrainConfig::default(),
            he: CkksParams::default(),
            range_mode: RangeMode::Shared,
            headroom: 2.0,
            checkpoint_patience: 5,
            hidden: vec![128],
            seed: 0,
            exec: Exec::Parallel,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FedError::Config(m));
        if self.num_clients == 0 {
            return bad("num_clients must be at least 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad(format!("lambda {} not in (0, 1]", self.lambda));
        }
        if !matches!(self.bits, 8 | 16 | 32) {
            return bad(format!("bits must be 8, 16 or 32, got {}", self.bits));
        }
        if !(self.headroom >= 1.0 && self.headroom.is_finite()) {
            return bad(format!("headroom must be >= 1, got {}", self.headroom));
        }
        if self.checkpoint_patience == 0 {
            return bad("checkpoint_patience must be at least 1".into());
        }
        self.clip.validate()?;
        self.schedule.validate()?;
        self.train.validate()?;
        Ok(())
    }
}
