use std::fs;
use std::path::Path;

use quancrypt::attack::{
    blob_image, run_sweep, square_side, tiny_benchmark, write_pgm, write_sweep_csv,
};
use quancrypt::ckks::{measure, save_public_key, save_secret_key, TimingConfig};
use quancrypt::data::{
    append_metrics, gen_synthetic, load_mnist_dir, write_metrics, SyntheticSpec,
};
use quancrypt::federation::{FederatedData, Federation};
use quancrypt::nn::{Checkpoint, Model};
use quancrypt::par::derive_seed;

use crate::config::{DataSource, Manifest, RunConfig};
use crate::CliError;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn prepare_out(dir: &Path, command: &str, cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    Manifest {
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg,
    }
    .write(dir)?;
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<FederatedData, CliError> {
    let f = &cfg.federation;
    let (mut train, test) = match f.data {
        DataSource::Mnist => load_mnist_dir(cfg.mnist_dir()).map_err(runtime)?,
        DataSource::Synthetic => {
            // One draw so train and test share class centres.
            let test_count = (f.synthetic_samples / 5).max(f.synthetic_classes);
            let spec = SyntheticSpec {
                count: f.synthetic_samples + test_count,
                features: f.synthetic_features,
                classes: f.synthetic_classes,
                separation: f.synthetic_separation,
            };
            let all = gen_synthetic(spec, derive_seed(f.seed, &[0xD5])).map_err(config_err)?;
            let split = |r: std::ops::Range<usize>| all.subset(&r.collect::<Vec<_>>());
            let train = split(0..f.synthetic_samples).map_err(config_err)?;
            let test = split(f.synthetic_samples..all.len()).map_err(config_err)?;
            (train, test)
        }
    };
    if let Some(n) = f.train_subset.filter(|&n| n < train.len()) {
        train = train
            .subset(&(0..n).collect::<Vec<_>>())
            .map_err(config_err)?;
    }
    FederatedData::prepare(
        &train,
        test,
        f.train_fraction,
        f.clients,
        f.partition,
        f.classes_per_client,
        f.seed,
    )
    .map_err(config_err)
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let fed_cfg = cfg.federation();
    fed_cfg.validate().map_err(config_err)?;
    let data = load_data(cfg)?;
    prepare_out(out, "train", cfg)?;
    let metrics = out.join("metrics.csv");
    write_metrics(&[], &metrics).map_err(runtime)?;

    let mut fed = Federation::new(fed_cfg, &data).map_err(config_err)?;
    let mut last_val = 0.0;
    while !fed.is_done() {
        let rec = fed.step().map_err(runtime)?.record;
        append_metrics(&rec, &metrics).map_err(runtime)?;
        eprintln!(
            "round {:>3}  test_acc {:.4}  val_acc {:.4}  loss {:.4}  prune {:.3}  upload {} B  {:?}",
            rec.round, rec.test_acc, rec.val_acc, rec.loss, rec.prune_rate, rec.upload_bytes, rec.checkpoint
        );
        last_val = rec.val_acc;
    }
    let ckpt = Checkpoint {
        model: fed.global().clone(),
        round: fed.round(),
        val_acc: last_val,
        mask: None,
    };
    ckpt.save(out.join("final.ckpt")).map_err(runtime)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

pub fn attack(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let base = cfg.attack();
    base.validate().map_err(config_err)?;
    let a = &cfg.attack;
    if a.prune_rates.is_empty() || a.seeds == 0 {
        return Err(CliError::Config(
            "attack needs at least one prune rate and one seed".into(),
        ));
    }
    if let Some(r) = a.prune_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(CliError::Config(format!("prune rate {r} not in [0, 1]")));
    }
    let (model, side): (Model, usize) = match &a.checkpoint {
        Some(path) => {
            let ckpt =
                Checkpoint::load(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            let side = square_side(&ckpt.model).ok_or_else(|| {
                runtime(format!(
                    "victim input of {} values is not a square image",
                    ckpt.model.schema().input_size()
                ))
            })?;
            (ckpt.model, side)
        }
        None => {
            let b = tiny_benchmark();
            (b.model, b.side)
        }
    };
    prepare_out(out, "attack", cfg)?;

    let classes = model.schema().classes() as u64;
    let target = |seed: u64| (blob_image(side, seed), (seed % classes) as usize);
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let rows = run_sweep(
        &model,
        target,
        &a.prune_rates,
        &seeds,
        &base,
        cfg.federation.exec,
    );

    for &s in &seeds {
        write_pgm(out.join(format!("target_s{s}.pgm")), &target(s).0).map_err(runtime)?;
    }
    for r in &rows {
        match (&r.x_hat, &r.error) {
            (Some(x), _) => write_pgm(
                out.join(format!("recon_p{:.2}_s{}.pgm", r.prune_rate, r.seed)),
                x,
            )
            .map_err(runtime)?,
            (None, Some(e)) => eprintln!("warning: rate {} seed {}: {e}", r.prune_rate, r.seed),
            (None, None) => {}
        }
    }
    write_sweep_csv(&rows, out.join("sweep.csv")).map_err(runtime)?;
    for &rate in &a.prune_rates {
        let mut v: Vec<f64> = rows
            .iter()
            .filter(|r| r.prune_rate == rate)
            .filter_map(|r| r.psnr)
            .collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let median = if v.len().is_multiple_of(2) {
            (v[mid - 1] + v[mid]) / 2.0
        } else {
            v[mid]
        };
        eprintln!(
            "prune rate {rate:.2}: median PSNR {median:.2} dB over {} runs",
            v.len()
        );
    }
    Ok(())
}

/// Splits `params` into a four-layer shape resembling a small MLP.
fn synthetic_layers(params: usize) -> Vec<usize> {
    let a = params * 4 / 5;
    let b = params * 4 / 25;
    let d = (params - a - b).min(10);
    let c = params - a - b - d;
    vec![a, b, c, d].into_iter().filter(|&n| n > 0).collect()
}

pub fn bench(
    cfg: &RunConfig,
    out: &Path,
    params: usize,
    sample: usize,
    clients: usize,
) -> Result<(), CliError> {
    if params == 0 || sample == 0 || clients == 0 {
        return Err(CliError::Config(
            "--params, --sample and --clients must be positive".into(),
        ));
    }
    let ctx = cfg.he.build().map_err(config_err)?;
    prepare_out(out, "bench", cfg)?;
    let timing = TimingConfig {
        layers: synthetic_layers(params),
        per_element_sample: sample,
        clients,
        seed: cfg.federation.seed,
        exec: cfg.federation.exec,
    };
    let report = measure(&ctx, &timing).map_err(runtime)?;
    let path = out.join("bench.csv");
    let mut w = csv::Writer::from_path(&path).map_err(runtime)?;
    w.write_record([
        "measurement",
        "degree",
        "values",
        "ciphertexts",
        "wall_ms",
        "extrapolated",
    ])
    .map_err(runtime)?;
    for m in &report.measurements {
        w.write_record([
            m.name.to_string(),
            report.degree.to_string(),
            m.values.to_string(),
            m.ciphertexts.to_string(),
            format!("{:.3}", m.millis),
            m.extrapolated.to_string(),
        ])
        .map_err(runtime)?;
        eprintln!(
            "{:<20} {:>10} ciphertexts {:>12.1} ms",
            m.name, m.ciphertexts, m.millis
        );
    }
    w.flush().map_err(runtime)?;
    eprintln!(
        "batched encryption speedup: {:.1}x",
        report.encrypt_speedup()
    );
    Ok(())
}

pub fn keygen(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ctx = cfg.he.build().map_err(config_err)?;
    if ctx.is_insecure() {
        eprintln!(
            "warning: degree {} is below the 128-bit security bound for these moduli",
            ctx.degree()
        );
    }
    prepare_out(out, "keygen", cfg)?;
    let (sk, pk) = ctx.keygen(derive_seed(cfg.federation.seed, &[0xC0]));
    save_secret_key(&out.join("secret.key"), &ctx, &sk).map_err(runtime)?;
    save_public_key(&out.join("public.key"), &ctx, &pk).map_err(runtime)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}
