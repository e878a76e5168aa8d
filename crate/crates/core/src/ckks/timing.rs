//! Wall-clock comparison of slot-packed and one-value-per-ciphertext encryption.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::{decrypt_vector, encrypt_vector, slot_chunks};
use super::context::CkksContext;
use super::keys::Ciphertext;
use super::{CkksError, Result};
use crate::par::{derive_seed, Exec};

#[derive(Clone, Debug, PartialEq)]
pub struct TimingConfig {
    /// Per-layer parameter counts of the synthetic model.
    pub layers: Vec<usize>,
    /// Values encrypted one per ciphertext; the per-element time is scaled up from this sample.
    pub per_element_sample: usize,
    /// Encrypted updates summed in the aggregation measurement.
    pub clients: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for TimingConfig {
    /// 100k parameters in four layers.
    fn default() -> Self {
        Self {
            layers: vec![80_000, 16_000, 3_990, 10],
            per_element_sample: 200,
            clients: 10,
            seed: 0,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub name: &'static str,
    pub values: usize,
    pub ciphertexts: usize,
    pub millis: f64,
    /// True when `millis` was scaled up from a smaller sample.
    pub extrapolated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingReport {
    pub degree: usize,
    pub measurements: Vec<Measurement>,
}

impl TimingReport {
    pub fn get(&self, name: &str) -> Option<&Measurement> {
        self.measurements.iter().find(|m| m.name == name)
    }

    /// Per-element over batched encryption time.
    pub fn encrypt_speedup(&self) -> f64 {
        let per = self
            .get("encrypt_per_element")
            .map_or(f64::NAN, |m| m.millis);
        let batched = self.get("encrypt_batched").map_or(f64::NAN, |m| m.millis);
        per / batched
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Encrypts, decrypts and aggregates a random model of `cfg.layers` values.
pub fn measure(ctx: &CkksContext, cfg: &TimingConfig) -> Result<TimingReport> {
    let total: usize = cfg.layers.iter().sum();
    if total == 0 || cfg.per_element_sample == 0 || cfg.clients == 0 {
        return Err(CkksError::Parameter(
            "timing needs values, a sample and clients".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layers: Vec<Vec<f64>> = cfg
        .layers
        .iter()
        .map(|&n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let (sk, pk) = ctx.keygen(derive_seed(cfg.seed, &[1]));
    let mut out = Vec::new();

    let start = Instant::now();
    let mut cts: Vec<Vec<Ciphertext>> = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        cts.push(encrypt_vector(
            ctx,
            &pk,
            layer,
            derive_seed(cfg.seed, &[2, i as u64]),
            cfg.exec,
        )?);
    }
    let batched_count: usize = cts.iter().map(Vec::len).sum();
    out.push(Measurement {
        name: "encrypt_batched",
        values: total,
        ciphertexts: batched_count,
        millis: ms(start),
        extrapolated: false,
    });

    let sample = cfg.per_element_sample.min(total);
    let flat: Vec<f64> = layers.iter().flatten().copied().take(sample).collect();
    let start = Instant::now();
    let singles = cfg.exec.try_map(sample, |i| {
        ctx.encrypt(
            &pk,
            &ctx.encode(&flat[i..i + 1])?,
            derive_seed(cfg.seed, &[3, i as u64]),
        )
    })?;
    let factor = total as f64 / sample as f64;
    out.push(Measurement {
        name: "encrypt_per_element",
        values: total,
        ciphertexts: total,
        millis: ms(start) * factor,
        extrapolated: sample < total,
    });

    let start = Instant::now();
    for (layer, c) in layers.iter().zip(&cts) {
        decrypt_vector(ctx, &sk, c, layer.len(), cfg.exec)?;
    }
    out.push(Measurement {
        name: "decrypt_batched",
        values: total,
        ciphertexts: batched_count,
        millis: ms(start),
        extrapolated: false,
    });

    let start = Instant::now();
    cfg.exec.try_map(singles.len(), |i| {
        ctx.decode(&ctx.decrypt(&sk, &singles[i])?)
    })?;
    out.push(Measurement {
        name: "decrypt_per_element",
        values: total,
        ciphertexts: total,
        millis: ms(start) * factor,
        extrapolated: sample < total,
    });

    // Every client uploads the same ciphertexts; the homomorphic cost is identical.
    let start = Instant::now();
    let flat_cts: Vec<&Ciphertext> = cts.iter().flatten().collect();
    let k = 1.0 / cfg.clients as f64;
    cfg.exec.try_map(flat_cts.len(), |j| {
        ctx.multiply_plaintext_scalar(
            &ctx.add_many(std::iter::repeat_n(flat_cts[j], cfg.clients))?,
            k,
        )
    })?;
    out.push(Measurement {
        name: "aggregate_round",
        values: total * cfg.clients,
        ciphertexts: batched_count * cfg.clients,
        millis: ms(start),
        extrapolated: false,
    });

    debug_assert_eq!(
        batched_count,
        cfg.layers
            .iter()
            .map(|&n| slot_chunks(n, ctx.slot_count()).len())
            .sum::<usize>()
    );
    Ok(TimingReport {
        degree: ctx.degree(),
        measurements: out,
    })
}
