use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use quancrypt::attack::{run_sweep, tiny_benchmark, AttackConfig};
use quancrypt::ckks::{encrypt_vector, CkksContext};
use quancrypt::data::{gen_synthetic, partition_iid, SyntheticSpec};
use quancrypt::nn::{local_train, Model, ModelSchema, TrainConfig};
use quancrypt::par::Exec;

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn encryption(c: &mut Criterion) {
    let ctx = CkksContext::new(4096, &[60, 40, 60], 2f64.powi(40)).unwrap();
    let (_, pk) = ctx.keygen(1);
    let values: Vec<f64> = (0..20_000).map(|i| (i % 255) as f64).collect();
    let mut g = c.benchmark_group("encrypt_20k");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| encrypt_vector(&ctx, &pk, &values, 7, exec).unwrap())
        });
    }
    g.finish();
}

fn client_training(c: &mut Criterion) {
    let spec = SyntheticSpec {
        count: 2000,
        features: 64,
        classes: 10,
        separation: 4.0,
    };
    let data = gen_synthetic(spec, 3).unwrap();
    let part = partition_iid(&data, 4, 5).unwrap();
    let model = Model::init(ModelSchema::mlp(&[64, 64, 10]).unwrap(), 1);
    let cfg = TrainConfig::default();
    let mut g = c.benchmark_group("local_train_4_clients");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map(4, |k| {
                    local_train(&model, data.view_of(&part.clients[k]), &cfg).unwrap()
                })
            })
        });
    }
    g.finish();
}

fn attack_sweep(c: &mut Criterion) {
    let bench = tiny_benchmark();
    let cfg = AttackConfig {
        steps: 2,
        ..Default::default()
    };
    let mut g = c.benchmark_group("attack_sweep_4_runs");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                run_sweep(
                    &bench.model,
                    |s| bench.target(s),
                    &[0.0, 0.5],
                    &[0, 1],
                    &cfg,
                    exec,
                )
            })
        });
    }
    g.finish();
}

criterion_group!(benches, encryption, client_training, attack_sweep);
criterion_main!(benches);
