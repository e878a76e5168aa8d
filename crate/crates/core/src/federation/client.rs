use std::time::Instant;

use super::{FedError, FederationConfig, Mode, RangeMode, Result, SharedRange};
use crate::ckks::{encrypt_vector, Ciphertext, CkksContext, PublicKey};
use crate::par::derive_seed;
use crate::quant::{derive_quant_params, quantize, QuantParams, QuantizedTensor};
use crate::shaping::{apply_mask, build_mask, clip_update, prune_rate, ClipConfig};

/// What a client can encrypt with: real CKKS or a plaintext pass-through.
#[derive(Clone, Copy, Debug)]
pub enum ClientBackend<'a> {
    Ckks {
        ctx: &'a CkksContext,
        pk: &'a PublicKey,
    },
    PassThrough,
}

#[derive(Clone, Debug)]
pub enum Payload {
    Cipher(Vec<Ciphertext>),
    /// Codes (or dequantized values) in the clear.
    Plain(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct LayerUpdate {
    pub payload: Payload,
    pub params: QuantParams,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct EncryptedUpdate {
    pub client: usize,
    pub layers: Vec<LayerUpdate>,
    /// Quantized wire size: codes plus per-tensor metadata.
    pub upload_bytes: usize,
    pub enc_ms: f64,
}

/// Prunes the smallest fraction `p` of each tensor, then clips to `alpha * mean_abs`.
pub fn shape_update(local: &[Vec<f64>], p: f64, clip: &ClipConfig) -> Result<Vec<Vec<f64>>> {
    let mask = build_mask(local, p)?;
    apply_mask(local, &mask)?
        .iter()
        .map(|l| clip_update(l, clip).map_err(FedError::from))
        .collect()
}

/// Prune, clip, quantize and encrypt one client's local weights.
pub fn client_prepare_update(
    client: usize,
    local: &[Vec<f64>],
    t: u32,
    cfg: &FederationConfig,
    range: Option<&SharedRange>,
    backend: ClientBackend<'_>,
) -> Result<EncryptedUpdate> {
    if cfg.mode == Mode::Vanilla {
        return Err(FedError::Protocol(
            "vanilla mode uploads raw weights".into(),
        ));
    }
    for (layer, w) in local.iter().enumerate() {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(FedError::NonFinite { client, layer });
        }
    }
    let shaped = shape_update(local, prune_rate(&cfg.schedule, t), &cfg.clip)?;
    let range = match (cfg.range_mode, range) {
        (RangeMode::Shared, None) => {
            return Err(FedError::Protocol("shared range missing".into()));
        }
        (RangeMode::Shared, Some(r)) if r.layers.len() != shaped.len() => {
            return Err(FedError::Protocol(format!(
                "shared range covers {} tensors, update has {}",
                r.layers.len(),
                shaped.len()
            )));
        }
        (RangeMode::Shared, r) => r,
        (RangeMode::PerClient, _) => None,
    };
    let mut layers = Vec::with_capacity(shaped.len());
    let mut upload_bytes = 0;
    let mut enc_ms = 0.0;
    for (i, x) in shaped.iter().enumerate() {
        let (lo, hi) = match range {
            Some(r) => r.layers[i],
            None => {
                let lo = x.iter().copied().fold(0.0, f64::min);
                let hi = x.iter().copied().fold(0.0, f64::max);
                (lo, hi)
            }
        };
        let params = derive_quant_params(lo, hi, cfg.bits)?;
        let qt = quantize(x, &params, i)?;
        upload_bytes += qt.wire_size();
        let codes = codes_as_reals(&qt);
        let started = Instant::now();
        let payload = match backend {
            ClientBackend::Ckks { ctx, pk } => {
                let seed = derive_seed(cfg.seed, &[u64::from(t), client as u64, i as u64, 0xE]);
                Payload::Cipher(encrypt_vector(ctx, pk, &codes, seed, cfg.exec)?)
            }
            ClientBackend::PassThrough => Payload::Plain(codes),
        };
        enc_ms += started.elapsed().as_secs_f64() * 1e3;
        layers.push(LayerUpdate {
            payload,
            params,
            count: x.len(),
        });
    }
    Ok(EncryptedUpdate {
        client,
        layers,
        upload_bytes,
        enc_ms,
    })
}

fn codes_as_reals(qt: &QuantizedTensor) -> Vec<f64> {
    qt.codes.iter().map(|&c| f64::from(c)).collect()
}
