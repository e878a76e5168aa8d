use std::time::Instant;

use super::server::finish_round;
use super::{
    client_prepare_update, compute_shared_range, decode_aggregate, server_aggregate, shape_update,
    CheckpointTracker, ClientBackend, FedError, FederationConfig, Mode, RangeMode, Result,
    RoundRecord, ServerKeys,
};
use crate::data::{
    partition_iid, partition_label_shards, split_train_validation, Dataset, Partition,
    PartitionStrategy,
};
use crate::nn::{local_train, Model, ModelSchema, TrainConfig};
use crate::par::derive_seed;
use crate::quant::QuantParams;
use crate::shaping::prune_rate;

/// Training shards plus the server's held-out sets.
#[derive(Clone, Debug)]
pub struct FederatedData {
    pub train: Dataset,
    pub partition: Partition,
    pub validation: Dataset,
    pub test: Dataset,
}

impl FederatedData {
    /// Holds out `1 - train_fraction` of `train` for validation and shards the rest.
    pub fn prepare(
        train: &Dataset,
        test: Dataset,
        train_fraction: f64,
        clients: usize,
        strategy: PartitionStrategy,
        classes_per_client: usize,
        seed: u64,
    ) -> Result<Self> {
        let (train, validation) =
            split_train_validation(train, train_fraction, derive_seed(seed, &[0xD0]))?;
        let partition = match strategy {
            PartitionStrategy::Iid => partition_iid(&train, clients, derive_seed(seed, &[0xD1]))?,
            PartitionStrategy::LabelShards => partition_label_shards(
                &train,
                clients,
                classes_per_client,
                derive_seed(seed, &[0xD1]),
            )?,
        };
        Ok(Self {
            train,
            partition,
            validation,
            test,
        })
    }
}

/// Intermediate values of one round, kept only when tracing is enabled.
#[derive(Clone, Debug, Default)]
pub struct RoundTrace {
    /// Each client's pruned and clipped weights before quantization.
    pub shaped: Vec<Vec<Vec<f64>>>,
    /// Decoded mean update before global pruning and smoothing.
    pub aggregate: Vec<Vec<f64>>,
    /// Shared quantization parameters per tensor (shared range mode).
    pub params: Vec<Option<QuantParams>>,
}

#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub record: RoundRecord,
    pub trace: Option<RoundTrace>,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub model: Model,
    pub records: Vec<RoundRecord>,
    pub decrypt_events: usize,
}

/// Round-by-round driver holding the global model and server state.
pub struct Federation<'a> {
    cfg: FederationConfig,
    data: &'a FederatedData,
    global: Model,
    keys: Option<ServerKeys>,
    tracker: CheckpointTracker,
    round: u32,
    trace: bool,
}

impl<'a> Federation<'a> {
    /// MLP with `cfg.hidden` hidden widths, initialised from the run seed.
    pub fn new(cfg: FederationConfig, data: &'a FederatedData) -> Result<Self> {
        let mut sizes = vec![data.train.features()];
        sizes.extend(&cfg.hidden);
        sizes.push(data.train.classes());
        let model = Model::init(ModelSchema::mlp(&sizes)?, derive_seed(cfg.seed, &[0xA0]));
        Self::with_model(cfg, data, model)
    }

    pub fn with_model(
        cfg: FederationConfig,
        data: &'a FederatedData,
        model: Model,
    ) -> Result<Self> {
        cfg.validate()?;
        if data.partition.num_clients() != cfg.num_clients {
            return Err(FedError::Config(format!(
                "partition has {} clients, config {}",
                data.partition.num_clients(),
                cfg.num_clients
            )));
        }
        if let Some(c) = data.partition.clients.iter().position(Vec::is_empty) {
            return Err(FedError::Config(format!("client {c} has no data")));
        }
        let keys = match cfg.mode {
            Mode::Quancrypt => Some(ServerKeys::generate(
                &cfg.he,
                derive_seed(cfg.seed, &[0xC0]),
            )?),
            _ => None,
        };
        Ok(Self {
            tracker: CheckpointTracker::new(cfg.checkpoint_patience),
            cfg,
            data,
            global: model,
            keys,
            round: 0,
            trace: false,
        })
    }

    pub fn set_trace(&mut self, on: bool) {
        self.trace = on;
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn global(&self) -> &Model {
        &self.global
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn keys(&self) -> Option<&ServerKeys> {
        self.keys.as_ref()
    }

    pub fn tracker(&self) -> &CheckpointTracker {
        &self.tracker
    }

    pub fn decrypt_events(&self) -> usize {
        self.keys.as_ref().map_or(0, ServerKeys::decrypt_events)
    }

    pub fn is_done(&self) -> bool {
        self.round >= self.cfg.rounds
    }

    fn client_train_config(&self, t: u32, client: usize) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.cfg.seed, &[u64::from(t), client as u64]),
            ..self.cfg.train.clone()
        }
    }

    /// Runs the next round.
    pub fn step(&mut self) -> Result<RoundOutput> {
        let t = self.round + 1;
        let cfg = &self.cfg;
        let global = &self.global;
        let data = self.data;
        let locals: Vec<Vec<Vec<f64>>> = cfg.exec.try_map(cfg.num_clients, |c| {
            let shard = data.train.view_of(&data.partition.clients[c]);
            let w = local_train(global, shard, &self.client_train_config(t, c))?;
            Ok::<_, FedError>(w.into_iter().map(|x| x.into_data()).collect())
        })?;
        for (client, w) in locals.iter().enumerate() {
            if let Some(layer) = w.iter().position(|l| l.iter().any(|v| !v.is_finite())) {
                return Err(FedError::NonFinite { client, layer });
            }
        }

        if cfg.mode == Mode::Vanilla {
            let started = Instant::now();
            let n = cfg.num_clients as f64;
            let mut mean: Vec<Vec<f64>> = locals[0].iter().map(|l| vec![0.0; l.len()]).collect();
            for w in &locals {
                for (acc, l) in mean.iter_mut().zip(w) {
                    acc.iter_mut().zip(l).for_each(|(a, v)| *a += v);
                }
            }
            mean.iter_mut().flatten().for_each(|v| *v /= n);
            let agg_ms = started.elapsed().as_secs_f64() * 1e3;
            let (model, mut record) = finish_round(
                mean,
                t,
                cfg,
                global,
                &data.validation,
                &data.test,
                &mut self.tracker,
            )?;
            record.agg_ms = agg_ms;
            record.upload_bytes = 4 * global.param_count() as u64;
            self.global = model;
            self.round = t;
            return Ok(RoundOutput {
                record,
                trace: None,
            });
        }

        let range = match cfg.range_mode {
            RangeMode::Shared => Some(compute_shared_range(
                &global.layers_flat(),
                &cfg.clip,
                cfg.headroom,
            )?),
            RangeMode::PerClient => None,
        };
        let backend = match &self.keys {
            Some(k) => ClientBackend::Ckks {
                ctx: k.context(),
                pk: k.public_key(),
            },
            None => ClientBackend::PassThrough,
        };
        let updates = cfg.exec.try_map(cfg.num_clients, |c| {
            client_prepare_update(c, &locals[c], t, cfg, range.as_ref(), backend)
        })?;
        let enc_ms = updates.iter().map(|u| u.enc_ms).sum();
        let upload_bytes =
            updates.iter().map(|u| u.upload_bytes as u64).sum::<u64>() / updates.len() as u64;

        let started = Instant::now();
        let agg = server_aggregate(
            &updates,
            cfg.range_mode,
            self.keys.as_ref().map(ServerKeys::context),
        )?;
        let agg_ms = started.elapsed().as_secs_f64() * 1e3;
        drop(updates);

        let started = Instant::now();
        let mean = decode_aggregate(&agg, self.keys.as_ref(), cfg.exec)?;
        let dec_ms = started.elapsed().as_secs_f64() * 1e3;

        let trace = if self.trace {
            let p_t = prune_rate(&cfg.schedule, t);
            Some(RoundTrace {
                shaped: locals
                    .iter()
                    .map(|w| shape_update(w, p_t, &cfg.clip))
                    .collect::<Result<_>>()?,
                aggregate: mean.clone(),
                params: agg.params.clone(),
            })
        } else {
            None
        };

        let (model, mut record) = finish_round(
            mean,
            t,
            cfg,
            global,
            &data.validation,
            &data.test,
            &mut self.tracker,
        )?;
        record.enc_ms = enc_ms;
        record.dec_ms = dec_ms;
        record.agg_ms = agg_ms;
        record.upload_bytes = upload_bytes;
        self.global = model;
        self.round = t;
        Ok(RoundOutput { record, trace })
    }

    /// Runs the remaining rounds, calling `observe` after each.
    pub fn run_with(
        mut self,
        mut observe: impl FnMut(&RoundRecord, &Model, &CheckpointTracker) -> Result<()>,
    ) -> Result<TrainingOutcome> {
        let mut records = Vec::new();
        while !self.is_done() {
            let out = self.step()?;
            observe(&out.record, &self.global, &self.tracker)?;
            records.push(out.record);
        }
        Ok(TrainingOutcome {
            decrypt_events: self.decrypt_events(),
            model: self.global,
            records,
        })
    }
}

/// Full run of `cfg.rounds` rounds from a freshly initialised MLP.
pub fn run_training(cfg: &FederationConfig, data: &FederatedData) -> Result<TrainingOutcome> {
    Federation::new(cfg.clone(), data)?.run_with(|_, _, _| Ok(()))
}
