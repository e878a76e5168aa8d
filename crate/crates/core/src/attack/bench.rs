use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{run_attack, victim_gradient, AttackConfig, Result};
use crate::nn::{Model, ModelSchema, Tensor};
use crate::par::{derive_seed, Exec};

const VICTIM_SEED: u64 = 0x5EED;

/// Fixed victim network plus a reproducible target image per seed.
#[derive(Clone, Debug)]
pub struct TinyBenchmark {
    pub model: Model,
    pub side: usize,
}

/// Untrained 8x8 two-conv victim with 32 channels and 10 classes.
///
/// Narrower victims leave the matching objective too flat for plain descent
/// to recover much at any pruning rate.
pub fn tiny_benchmark() -> TinyBenchmark {
    let schema = ModelSchema::tiny_conv(8, 32, 10).expect("valid schema");
    TinyBenchmark {
        model: Model::init(schema, VICTIM_SEED),
        side: 8,
    }
}

impl TinyBenchmark {
    /// Blob image from [`blob_image`]; the label is `seed % classes`.
    pub fn target(&self, seed: u64) -> (Tensor, usize) {
        let label = (seed % self.model.schema().classes() as u64) as usize;
        (blob_image(self.side, seed), label)
    }
}

/// Side length of a square single-channel input, if the model takes one.
pub fn square_side(model: &Model) -> Option<usize> {
    let n = model.schema().input_size();
    let side = (n as f64).sqrt().round() as usize;
    (side * side == n && side >= 2).then_some(side)
}

/// Smooth `side x side` target: three Gaussian blobs, rescaled to peak at 1.
pub fn blob_image(side: usize, seed: u64) -> Tensor {
    let n = side;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(VICTIM_SEED, &[seed]));
    let blobs: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..n as f64),
                rng.random_range(0.0..n as f64),
                rng.random_range(1.0..2.5) * n as f64 / 8.0,
            )
        })
        .collect();
    let mut img: Vec<f64> = (0..n * n)
        .map(|i| {
            let (r, c) = ((i / n) as f64, (i % n) as f64);
            blobs
                .iter()
                .map(|&(br, bc, s)| (-((r - br).powi(2) + (c - bc).powi(2)) / (2.0 * s * s)).exp())
                .sum()
        })
        .collect();
    let peak = img.iter().copied().fold(0.0, f64::max);
    img.iter_mut().for_each(|v| *v /= peak);
    Tensor::new(vec![n, n], img).expect("square")
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub prune_rate: f64,
    pub seed: u64,
    pub psnr: Option<f64>,
    pub mse: Option<f64>,
    pub steps_used: u32,
    pub x_hat: Option<Tensor>,
    pub error: Option<String>,
}

/// Attacks every `(rate, seed)` pair. `target(seed)` supplies the private
/// sample; failures become rows with `error` set.
pub fn run_sweep<F>(
    model: &Model,
    target: F,
    rates: &[f64],
    seeds: &[u64],
    base: &AttackConfig,
    exec: Exec,
) -> Vec<SweepRow>
where
    F: Fn(u64) -> (Tensor, usize) + Sync,
{
    let jobs: Vec<(f64, u64)> = rates
        .iter()
        .flat_map(|&r| seeds.iter().map(move |&s| (r, s)))
        .collect();
    exec.map(jobs.len(), |j| {
        let (prune_rate, seed) = jobs[j];
        let (x, y) = target(seed);
        let cfg = AttackConfig {
            prune_rate,
            seed,
            ..base.clone()
        };
        let outcome = victim_gradient(model, &x, y, prune_rate)
            .and_then(|g| run_attack(model, &g, y, &cfg, x.shape(), Some(&x)));
        match outcome {
            Ok(r) => SweepRow {
                prune_rate,
                seed,
                psnr: r.psnr,
                mse: r.mse,
                steps_used: r.steps_used,
                x_hat: Some(r.x_hat),
                error: None,
            },
            Err(e) => SweepRow {
                prune_rate,
                seed,
                psnr: None,
                mse: None,
                steps_used: 0,
                x_hat: None,
                error: Some(e.to_string()),
            },
        }
    })
}

/// `prune_rate,seed,psnr,mse,steps_used,error`; failed runs leave the metrics empty.
pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["prune_rate", "seed", "psnr", "mse", "steps_used", "error"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        w.write_record([
            r.prune_rate.to_string(),
            r.seed.to_string(),
            opt(r.psnr),
            opt(r.mse),
            r.steps_used.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
