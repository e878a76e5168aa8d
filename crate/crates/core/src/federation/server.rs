use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use super::{
    CheckpointAction, EncryptedUpdate, FedError, FederationConfig, Mode, Payload, RangeMode,
    Result, RoundRecord,
};
use crate::ckks::{decrypt_vector, Ciphertext, CkksContext, CkksParams, PublicKey, SecretKey};
use crate::data::Dataset;
use crate::nn::{evaluate, Checkpoint, Model};
use crate::par::Exec;
use crate::quant::QuantParams;
use crate::shaping::{apply_mask, build_mask, mean_abs, prune_rate, ClipConfig, PruneMask};

const ZERO_RANGE: f64 = 1e-6;

/// Per-tensor symmetric quantization range broadcast with the global model.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedRange {
    pub layers: Vec<(f64, f64)>,
}

/// `R = headroom * alpha * mean_abs(layer)`, range `[-R, R]`.
pub fn compute_shared_range<L: AsRef<[f64]>>(
    global: &[L],
    clip: &ClipConfig,
    headroom: f64,
) -> Result<SharedRange> {
    let layers = global
        .iter()
        .map(|l| {
            let r = headroom * clip.alpha * mean_abs(l.as_ref())?;
            let r = if r > 0.0 { r } else { ZERO_RANGE };
            Ok((-r, r))
        })
        .collect::<Result<_>>()?;
    Ok(SharedRange { layers })
}

/// The single keypair. Only the server holds the secret half; every
/// decryption is counted.
pub struct ServerKeys {
    ctx: CkksContext,
    sk: SecretKey,
    pk: PublicKey,
    decryptions: AtomicUsize,
}

impl ServerKeys {
    pub fn generate(params: &CkksParams, seed: u64) -> Result<Self> {
        let ctx = params.build()?;
        let (sk, pk) = ctx.keygen(seed);
        Ok(Self::from_parts(ctx, sk, pk))
    }

    pub fn from_parts(ctx: CkksContext, sk: SecretKey, pk: PublicKey) -> Self {
        Self {
            ctx,
            sk,
            pk,
            decryptions: AtomicUsize::new(0),
        }
    }

    pub fn context(&self) -> &CkksContext {
        &self.ctx
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    /// Number of aggregate decryptions performed so far.
    pub fn decrypt_events(&self) -> usize {
        self.decryptions.load(Ordering::Relaxed)
    }
}

/// Summed client contributions, still encrypted (or in the clear for the pass-through backend).
#[derive(Clone, Debug)]
pub struct Aggregate {
    pub layers: Vec<Payload>,
    /// Common quantization parameters (shared range mode only).
    pub params: Vec<Option<QuantParams>>,
    pub counts: Vec<usize>,
    pub clients: usize,
    pub range_mode: RangeMode,
}

/// Sums client updates. Shared mode adds codes; per-client mode first maps
/// each client's codes to `s_i * (c - z0_i) / N`.
pub fn server_aggregate(
    updates: &[EncryptedUpdate],
    range_mode: RangeMode,
    ctx: Option<&CkksContext>,
) -> Result<Aggregate> {
    let first = updates
        .first()
        .ok_or_else(|| FedError::Protocol("no updates to aggregate".into()))?;
    let n_layers = first.layers.len();
    let counts: Vec<usize> = first.layers.iter().map(|l| l.count).collect();
    for u in updates {
        if u.layers.len() != n_layers || u.layers.iter().zip(&counts).any(|(l, &c)| l.count != c) {
            return Err(FedError::Protocol(format!(
                "client {} update does not match the model layout",
                u.client
            )));
        }
    }
    let n = updates.len() as f64;
    let mut layers = Vec::with_capacity(n_layers);
    let mut params = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let common = first.layers[i].params;
        if range_mode == RangeMode::Shared {
            if let Some(u) = updates.iter().find(|u| u.layers[i].params != common) {
                return Err(FedError::Protocol(format!(
                    "client {} quantized tensor {i} with different parameters",
                    u.client
                )));
            }
        }
        let payload = match &first.layers[i].payload {
            Payload::Plain(_) => {
                let mut acc = vec![0.0; counts[i]];
                for u in updates {
                    let Payload::Plain(codes) = &u.layers[i].payload else {
                        return Err(FedError::Protocol("mixed payload kinds".into()));
                    };
                    let p = u.layers[i].params;
                    for (a, &c) in acc.iter_mut().zip(codes) {
                        *a += match range_mode {
                            RangeMode::Shared => c,
                            RangeMode::PerClient => (c - p.z0) * (p.s / n),
                        };
                    }
                }
                Payload::Plain(acc)
            }
            Payload::Cipher(chunks) => {
                let ctx =
                    ctx.ok_or_else(|| FedError::Protocol("ciphertexts without a context".into()))?;
                let mut acc: Vec<Option<Ciphertext>> = vec![None; chunks.len()];
                for u in updates {
                    let Payload::Cipher(cts) = &u.layers[i].payload else {
                        return Err(FedError::Protocol("mixed payload kinds".into()));
                    };
                    if cts.len() != chunks.len() {
                        return Err(FedError::Protocol("chunk counts differ".into()));
                    }
                    let p = u.layers[i].params;
                    for (slot, ct) in acc.iter_mut().zip(cts) {
                        let term = match range_mode {
                            RangeMode::Shared => ct.clone(),
                            RangeMode::PerClient => ctx.multiply_plaintext_scalar(
                                &ctx.add_plain_scalar(ct, -p.z0)?,
                                p.s / n,
                            )?,
                        };
                        match slot {
                            None => *slot = Some(term),
                            Some(sum) => ctx.add_assign(sum, &term)?,
                        }
                    }
                }
                Payload::Cipher(acc.into_iter().map(Option::unwrap).collect())
            }
        };
        layers.push(payload);
        params.push((range_mode == RangeMode::Shared).then_some(common));
    }
    Ok(Aggregate {
        layers,
        params,
        counts,
        clients: updates.len(),
        range_mode,
    })
}

/// Decrypts (one counted event) and dequantizes the mean update.
pub fn decode_aggregate(
    agg: &Aggregate,
    keys: Option<&ServerKeys>,
    exec: Exec,
) -> Result<Vec<Vec<f64>>> {
    if agg.layers.iter().any(|l| matches!(l, Payload::Cipher(_))) {
        let keys =
            keys.ok_or_else(|| FedError::Protocol("ciphertexts but no secret key".into()))?;
        keys.decryptions.fetch_add(1, Ordering::Relaxed);
    }
    let n = agg.clients as f64;
    agg.layers
        .iter()
        .enumerate()
        .map(|(i, payload)| {
            let raw = match payload {
                Payload::Plain(v) => v.clone(),
                Payload::Cipher(cts) => {
                    let keys = keys.expect("checked above");
                    let mut v = decrypt_vector(&keys.ctx, &keys.sk, cts, agg.counts[i], exec)?;
                    // Summed codes are integers; rounding strips the CKKS noise exactly.
                    if agg.params[i].is_some() {
                        v.iter_mut().for_each(|x| *x = x.round());
                    }
                    v
                }
            };
            Ok(match agg.params[i] {
                Some(p) => raw.into_iter().map(|v| p.dequantize_one(v / n)).collect(),
                None => raw,
            })
        })
        .collect()
}

/// `(1 - lambda) * init + lambda * fin`, elementwise.
pub fn smooth(init: &[Vec<f64>], fin: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
    if lambda == 1.0 {
        return fin.to_vec();
    }
    init.iter()
        .zip(fin)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (1.0 - lambda) * x + lambda * y)
                .collect()
        })
        .collect()
}

/// Keeps the best-validation model; reloads it after `patience`
/// consecutive rounds without improvement.
#[derive(Clone, Debug)]
pub struct CheckpointTracker {
    patience: u32,
    best: Option<Checkpoint>,
    stale: u32,
}

impl CheckpointTracker {
    pub fn new(patience: u32) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    pub fn stale_rounds(&self) -> u32 {
        self.stale
    }

    /// Returns the action and, on reload, the model to continue from.
    pub fn observe(
        &mut self,
        round: u32,
        val_acc: f64,
        model: &Model,
        mask: Option<&PruneMask>,
    ) -> (CheckpointAction, Option<Model>) {
        let improved = self.best.as_ref().is_none_or(|b| val_acc > b.val_acc);
        if improved {
            self.best = Some(Checkpoint {
                model: model.clone(),
                round,
                val_acc,
                mask: mask.cloned(),
            });
            self.stale = 0;
            return (CheckpointAction::Saved, None);
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            let best = self.best.as_ref().expect("a save precedes any reload");
            return (CheckpointAction::Reloaded, Some(best.model.clone()));
        }
        (CheckpointAction::None, None)
    }
}

/// Server side of round `t`: decode, globally prune, smooth against the
/// round-start model, evaluate, and apply the checkpoint rule.
///
/// Timing fields other than `dec_ms` are left at zero for the caller.
#[allow(clippy::too_many_arguments)]
pub fn server_finalize_round(
    agg: &Aggregate,
    keys: Option<&ServerKeys>,
    t: u32,
    cfg: &FederationConfig,
    prev_global: &Model,
    validation: &Dataset,
    test: &Dataset,
    tracker: &mut CheckpointTracker,
) -> Result<(Model, RoundRecord)> {
    let started = Instant::now();
    let decoded = decode_aggregate(agg, keys, cfg.exec)?;
    let dec_ms = started.elapsed().as_secs_f64() * 1e3;
    let (model, mut record) =
        finish_round(decoded, t, cfg, prev_global, validation, test, tracker)?;
    record.dec_ms = dec_ms;
    Ok((model, record))
}

pub(super) fn finish_round(
    mean: Vec<Vec<f64>>,
    t: u32,
    cfg: &FederationConfig,
    prev_global: &Model,
    validation: &Dataset,
    test: &Dataset,
    tracker: &mut CheckpointTracker,
) -> Result<(Model, RoundRecord)> {
    let (layers, mask, p_t) = if cfg.mode == Mode::Vanilla {
        (mean, None, 0.0)
    } else {
        let p_t = prune_rate(&cfg.schedule, t);
        let mask = build_mask(&mean, p_t)?;
        let pruned = apply_mask(&mean, &mask)?;
        (
            smooth(&prev_global.layers_flat(), &pruned, cfg.lambda),
            Some(mask),
            p_t,
        )
    };
    let mut model = prev_global.clone();
    model.set_layers(&layers)?;
    let (val_acc, _) = evaluate(&model, validation.view())?;
    let (action, reload) = tracker.observe(t, val_acc, &model, mask.as_ref());
    if let Some(best) = reload {
        model = best;
    }
    let (test_acc, test_loss) = evaluate(&model, test.view())?;
    Ok((
        model,
        RoundRecord {
            round: t,
            test_acc,
            val_acc,
            loss: test_loss,
            prune_rate: p_t,
            enc_ms: 0.0,
            dec_ms: 0.0,
            agg_ms: 0.0,
            upload_bytes: 0,
            checkpoint: action,
        },
    ))
}
