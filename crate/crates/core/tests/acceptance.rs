//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints one PASS/FAIL line even when it succeeds.
//!
//! MNIST is read from `QUANCRYPT_MNIST_DIR` or `data/mnist` at the workspace root.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use quancrypt::attack::{
    analytic_linear_recovery, run_sweep, tiny_benchmark, victim_gradient, AttackConfig,
};
use quancrypt::ckks::{measure, CkksContext, CkksParams, TimingConfig};
use quancrypt::data::{load_mnist_dir, Dataset, PartitionStrategy};
use quancrypt::federation::{
    smooth, CheckpointAction, CheckpointTracker, FederatedData, Federation, FederationConfig, Mode,
    TrainingOutcome,
};
use quancrypt::nn::{LayerKind, LayerSpec, Model, ModelSchema, Tensor};
use quancrypt::par::Exec;
use quancrypt::quant::{dequantize, derive_quant_params, quantize};
use quancrypt::shaping::{prune_rate, ClipConfig, PruneSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mnist() -> Result<&'static (Dataset, Dataset), String> {
    static DATA: OnceLock<Result<(Dataset, Dataset), String>> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = std::env::var_os("QUANCRYPT_MNIST_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
        load_mnist_dir(&dir)
            .map_err(|e| format!("{}: {e} (run scripts/fetch-mnist.sh)", dir.display()))
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn mnist_federation(
    subset: Option<usize>,
    clients: usize,
    seed: u64,
) -> Result<FederatedData, String> {
    let (train, test) = mnist()?;
    let train = match subset {
        Some(n) => train
            .subset(&(0..n).collect::<Vec<_>>())
            .map_err(|e| e.to_string())?,
        None => train.clone(),
    };
    FederatedData::prepare(
        &train,
        test.clone(),
        0.8,
        clients,
        PartitionStrategy::Iid,
        2,
        seed,
    )
    .map_err(|e| e.to_string())
}

fn schedule_exactness() -> Outcome {
    let s = PruneSchedule::default();
    let mut checks: Vec<(u32, f64)> = (0..=40).map(|t| (t, 0.20)).collect();
    checks.extend([(170, 0.35), (300, 0.50), (301, 0.50), (1000, 0.50)]);
    for (t, want) in checks {
        let got = prune_rate(&s, t);
        ensure((got - want).abs() <= 1e-12, || {
            format!("t={t}: {got} != {want}")
        })?;
    }
    Ok("0.20 / 0.35 / 0.50 at t = 40 / 170 / 300".into())
}

fn quantizer_round_trip() -> Outcome {
    let (lo, hi) = (-3.7, 5.1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut x: Vec<f64> = (0..1_000_000).map(|_| rng.random_range(lo..=hi)).collect();
    x[0] = lo;
    x[1] = hi;
    x[2] = 0.0;
    let mut notes = Vec::new();
    for bits in [8, 16, 32] {
        let params = derive_quant_params(lo, hi, bits).map_err(|e| e.to_string())?;
        let back = dequantize(&quantize(&x, &params, 0).map_err(|e| e.to_string())?);
        let worst = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(worst <= params.s / 2.0 + 1e-12, || {
            format!("b={bits}: {worst:e} > s/2 = {:e}", params.s / 2.0)
        })?;
        notes.push(format!("b={bits} max {:.3} s", worst / params.s));
    }
    Ok(notes.join(", "))
}

fn ckks_correctness() -> Outcome {
    let ctx =
        CkksContext::new(8192, &[60, 40, 40, 60], 2f64.powi(40)).map_err(|e| e.to_string())?;
    let (sk, pk) = ctx.keygen(3);
    let slots = ctx.slot_count();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bound = 2f64.powi(16);
    let inputs: Vec<Vec<f64>> = (0..50)
        .map(|_| {
            (0..slots)
                .map(|_| rng.random_range(-bound..=bound))
                .collect()
        })
        .collect();
    let err = |ct, want: &[f64]| -> Result<f64, String> {
        let got = ctx
            .decode(&ctx.decrypt(&sk, ct).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        Ok(got
            .iter()
            .zip(want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    };
    let cts = inputs
        .iter()
        .enumerate()
        .map(|(i, v)| ctx.encrypt(&pk, &ctx.encode(v)?, 100 + i as u64))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let single = err(&cts[0], &inputs[0])?;
    ensure(single < 1e-3, || format!("round trip error {single:e}"))?;

    let sum = ctx.add_many(&cts).map_err(|e| e.to_string())?;
    let want: Vec<f64> = (0..slots)
        .map(|k| inputs.iter().map(|v| v[k]).sum())
        .collect();
    let sum_err = err(&sum, &want)?;
    ensure(sum_err < 1e-2, || format!("sum of 50 error {sum_err:e}"))?;

    let mean = ctx
        .multiply_plaintext_scalar(&sum, 1.0 / 50.0)
        .map_err(|e| e.to_string())?;
    let want: Vec<f64> = want.iter().map(|v| v / 50.0).collect();
    let mean_err = err(&mean, &want)?;
    ensure(mean_err < 1e-2, || {
        format!("scalar 1/50 error {mean_err:e}")
    })?;
    Ok(format!(
        "round trip {single:.1e}, sum {sum_err:.1e}, x1/50 {mean_err:.1e}"
    ))
}

/// Equivalence summary plus the upload check, which rides on the same run.
fn pipeline_equivalence_and_upload() -> Result<(String, Outcome), String> {
    let data = mnist_federation(Some(5000), 5, 21)?;
    let cfg = |mode| FederationConfig {
        num_clients: 5,
        rounds: 5,
        mode,
        hidden: vec![128],
        seed: 21,
        ..Default::default()
    };
    let mut he = Federation::new(cfg(Mode::Quancrypt), &data).map_err(|e| e.to_string())?;
    let mut plain = Federation::new(cfg(Mode::PlainQuant), &data).map_err(|e| e.to_string())?;
    plain.set_trace(true);
    let vanilla_bytes = 4 * he.global().param_count() as u64;
    let mut worst_trace_ratio: f64 = 0.0;
    let mut worst_upload: u64 = 0;
    while !he.is_done() {
        let rec = he.step().map_err(|e| e.to_string())?.record;
        worst_upload = worst_upload.max(rec.upload_bytes);
        let out = plain.step().map_err(|e| e.to_string())?;
        let tr = out.trace.ok_or("plain-quant run produced no trace")?;
        for (i, agg) in tr.aggregate.iter().enumerate() {
            let s = tr.params[i]
                .ok_or("missing shared quantization parameters")?
                .s;
            for (k, v) in agg.iter().enumerate() {
                let exact = tr.shaped.iter().map(|c| c[i][k]).sum::<f64>() / tr.shaped.len() as f64;
                worst_trace_ratio = worst_trace_ratio.max((v - exact).abs() / s);
            }
        }
    }
    let mut worst: f64 = 0.0;
    for (a, b) in he.global().params().iter().zip(plain.global().params()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst <= 1e-2, || {
        format!("final weights differ by {worst:e}")
    })?;
    ensure(worst_trace_ratio <= 0.5 + 1e-9, || {
        format!("aggregate off the exact mean by {worst_trace_ratio:.4} s")
    })?;
    let equivalence =
        format!("max weight gap {worst:.1e}, aggregate within {worst_trace_ratio:.3} s");
    let upload = if 3 * worst_upload <= vanilla_bytes {
        Ok(format!(
            "{worst_upload} B per client vs {vanilla_bytes} B vanilla"
        ))
    } else {
        Err(format!(
            "{worst_upload} B per client exceeds a third of {vanilla_bytes} B"
        ))
    };
    Ok((equivalence, upload))
}

fn run_mnist(mode: Mode, data: &FederatedData) -> Result<TrainingOutcome, String> {
    let cfg = FederationConfig {
        num_clients: 5,
        rounds: 30,
        mode,
        lambda: 1.0,
        bits: 8,
        clip: ClipConfig { alpha: 3.0 },
        schedule: PruneSchedule::default(),
        hidden: vec![128],
        seed: 5,
        ..Default::default()
    };
    quancrypt::federation::run_training(&cfg, data).map_err(|e| e.to_string())
}

fn convergence() -> Outcome {
    let data = mnist_federation(None, 5, 5)?;
    let acc = |o: &TrainingOutcome| o.records.last().map(|r| r.test_acc).unwrap_or(0.0);
    let q = acc(&run_mnist(Mode::Quancrypt, &data)?);
    let v = acc(&run_mnist(Mode::Vanilla, &data)?);
    ensure(q >= 0.92, || format!("quancrypt accuracy {q:.4} < 0.92"))?;
    ensure((q - v).abs() <= 0.015, || {
        format!("quancrypt {q:.4} vs vanilla {v:.4}")
    })?;
    Ok(format!("quancrypt {q:.4}, vanilla {v:.4}"))
}

fn layer(name: &str, kind: LayerKind) -> LayerSpec {
    LayerSpec {
        name: name.into(),
        kind,
    }
}

/// Worst relative error between analytic and central-difference gradients,
/// over parameters and inputs.
fn gradcheck(schema: &ModelSchema, seed: u64) -> f64 {
    const EPS: f64 = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / (a.abs() + b.abs()).max(1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::init(schema.clone(), seed);
    for i in 0..model.num_tensors() {
        for v in model.param_mut(i) {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let n = schema.input_size();
    let mut x = Tensor::new(
        vec![2, n],
        (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let labels: Vec<usize> = (0..2)
        .map(|_| rng.random_range(0..schema.classes()))
        .collect();
    let (_, grads, dx) = model.loss_grad_input(&x, &labels).unwrap();
    let mut worst: f64 = 0.0;
    for t in 0..model.num_tensors() {
        for k in 0..model.params()[t].len() {
            let orig = model.params()[t].data()[k];
            model.param_mut(t)[k] = orig + EPS;
            let up = model.loss_and_grad(&x, &labels).unwrap().0;
            model.param_mut(t)[k] = orig - EPS;
            let down = model.loss_and_grad(&x, &labels).unwrap().0;
            model.param_mut(t)[k] = orig;
            worst = worst.max(rel(grads.grads[t].data()[k], (up - down) / (2.0 * EPS)));
        }
    }
    for k in 0..x.len() {
        let orig = x.data()[k];
        x.data_mut()[k] = orig + EPS;
        let up = model.loss_and_grad(&x, &labels).unwrap().0;
        x.data_mut()[k] = orig - EPS;
        let down = model.loss_and_grad(&x, &labels).unwrap().0;
        x.data_mut()[k] = orig;
        worst = worst.max(rel(dx.data()[k], (up - down) / (2.0 * EPS)));
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let conv = ModelSchema::new(vec![
        layer(
            "conv",
            LayerKind::Conv3x3 {
                in_channels: 2,
                out_channels: 3,
                height: 4,
                width: 4,
            },
        ),
        layer("relu", LayerKind::Relu { size: 48 }),
        layer(
            "pool",
            LayerKind::MaxPool2 {
                channels: 3,
                height: 4,
                width: 4,
            },
        ),
        layer(
            "fc",
            LayerKind::Dense {
                inputs: 12,
                outputs: 4,
            },
        ),
        layer("head", LayerKind::SoftmaxXent { classes: 4 }),
    ])
    .map_err(|e| e.to_string())?;
    let schemas = [
        (
            "mlp",
            ModelSchema::mlp(&[6, 5, 3]).map_err(|e| e.to_string())?,
        ),
        ("conv", conv),
    ];
    let mut worst: f64 = 0.0;
    for (name, schema) in &schemas {
        for seed in 0..20 {
            let e = gradcheck(schema, seed);
            ensure(e <= 1e-4, || {
                format!("{name} seed {seed}: relative error {e:e}")
            })?;
            worst = worst.max(e);
        }
    }
    Ok(format!(
        "dense, relu, conv3x3, maxpool, softmax; worst {worst:.1e} over 20 seeds"
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

fn gia_defense() -> Outcome {
    let model = Model::init(ModelSchema::mlp(&[64, 10]).map_err(|e| e.to_string())?, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = Tensor::new(vec![8, 8], (0..64).map(|_| rng.random()).collect()).unwrap();
    let g = victim_gradient(&model, &x, 3, 0.0).map_err(|e| e.to_string())?;
    let rec = analytic_linear_recovery(&g).map_err(|e| e.to_string())?;
    let num: f64 = rec
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = x.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    ensure(num / den <= 1e-3, || {
        format!("analytic recovery relative error {:e}", num / den)
    })?;

    let bench = tiny_benchmark();
    let rates = [0.0, 0.3, 0.5, 0.7];
    let seeds: Vec<u64> = (0..10).collect();
    let rows = run_sweep(
        &bench.model,
        |s| bench.target(s),
        &rates,
        &seeds,
        &AttackConfig::default(),
        Exec::Parallel,
    );
    let mut medians = Vec::new();
    for &r in &rates {
        let v: Vec<f64> = rows
            .iter()
            .filter(|row| row.prune_rate == r)
            .filter_map(|row| row.psnr)
            .collect();
        ensure(v.len() == seeds.len(), || {
            format!("rate {r}: only {} of 10 attacks finished", v.len())
        })?;
        medians.push(median(v));
    }
    let shown = medians
        .iter()
        .map(|m| format!("{m:.2}"))
        .collect::<Vec<_>>()
        .join(" / ");
    ensure(medians.windows(2).all(|w| w[1] <= w[0]), || {
        format!("medians not monotone: {shown} dB")
    })?;
    let drop = medians[0] - medians[3];
    ensure(drop >= 5.0, || {
        format!("drop {drop:.2} dB < 5 ({shown} dB)")
    })?;
    Ok(format!(
        "median PSNR {shown} dB, analytic error {:.1e}",
        num / den
    ))
}

fn batching_speedup() -> Outcome {
    let ctx = CkksParams::default().build().map_err(|e| e.to_string())?;
    // Default layout: 100000 values over four layers.
    let report = measure(&ctx, &TimingConfig::default()).map_err(|e| e.to_string())?;
    let x = report.encrypt_speedup();
    ensure(x >= 50.0, || format!("speedup {x:.1}x < 50x"))?;
    Ok(format!(
        "{x:.0}x at degree {} over 100000 values",
        report.degree
    ))
}

fn smoothing_and_checkpoints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut draw = |n| {
        (0..n)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    let init = vec![draw(30), draw(7)];
    let fin = vec![draw(30), draw(7)];
    ensure(smooth(&init, &fin, 1.0) == fin, || {
        "lambda = 1 changed the update".into()
    })?;

    let schema = ModelSchema::mlp(&[3, 2]).map_err(|e| e.to_string())?;
    let best = Model::init(schema.clone(), 1);
    let other = Model::init(schema, 2);
    let mut tracker = CheckpointTracker::new(5);
    let (a, _) = tracker.observe(1, 0.9, &best, None);
    ensure(a == CheckpointAction::Saved, || {
        format!("first round gave {a:?}")
    })?;
    for (i, val) in [0.8, 0.85, 0.9, 0.7, 0.89].into_iter().enumerate() {
        let round = i as u32 + 2;
        let (action, model) = tracker.observe(round, val, &other, None);
        let want = if i == 4 {
            CheckpointAction::Reloaded
        } else {
            CheckpointAction::None
        };
        ensure(action == want, || {
            format!("round {round}: {action:?}, expected {want:?}")
        })?;
        if i == 4 {
            let m = model.ok_or("reload returned no model")?;
            ensure(m.params() == best.params(), || {
                "reload did not restore the best model".into()
            })?;
        }
    }
    Ok("lambda = 1 is identity; reload after exactly 5 stale rounds".into())
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        print_line(id, name, &out, secs);
        results.push((id, name, out, secs));
    };

    run(1, "pruning schedule", &schedule_exactness);
    run(2, "quantizer round trip", &quantizer_round_trip);
    run(3, "ckks correctness", &ckks_correctness);
    let shared = OnceLock::new();
    let pipeline = || shared.get_or_init(pipeline_equivalence_and_upload).clone();
    run(4, "encrypted vs plaintext pipeline", &|| {
        pipeline().map(|p| p.0)
    });
    run(5, "mnist convergence", &convergence);
    run(6, "gradient correctness", &gradient_correctness);
    run(7, "gradient inversion defense", &gia_defense);
    run(8, "batched encryption speedup", &batching_speedup);
    run(9, "upload economy", &|| pipeline().and_then(|p| p.1));
    run(
        10,
        "smoothing and checkpointing",
        &smoothing_and_checkpoints,
    );

    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!(
        "\nacceptance: {} passed, {failed} failed in {:.0} s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn print_line(id: u32, name: &str, out: &Outcome, secs: f64) {
    let (tag, detail) = match out {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("check {id:>2} {tag} {name:<34} {detail} ({secs:.1} s)");
}
