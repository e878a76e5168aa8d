use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use quancrypt::attack::{AttackInit, AttackOptimizer};
use quancrypt::data::PartitionStrategy;
use quancrypt::federation::{Mode, RangeMode};

mod commands;
mod config;

use config::{DataSource, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "quancrypt",
    version,
    about = "Federated learning with quantized, encrypted aggregation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a federated training job.
    Train(TrainArgs),
    /// Gradient inversion sweep over pruning rates.
    Attack(AttackArgs),
    /// Time batched vs per-element encryption.
    Bench(BenchArgs),
    /// Generate and save a CKKS key pair.
    Keygen(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Ring degree for the CKKS context.
    #[arg(long)]
    degree: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_parser = parse_enum::<Mode>)]
    mode: Option<Mode>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Clip factor.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_enum::<RangeMode>)]
    range_mode: Option<RangeMode>,
    #[arg(long, value_parser = parse_enum::<DataSource>)]
    data: Option<DataSource>,
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    train_subset: Option<usize>,
    #[arg(long, value_parser = parse_enum::<PartitionStrategy>)]
    partition: Option<PartitionStrategy>,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Victim checkpoint; omit for the built-in tiny victim.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    prune_rates: Option<Vec<f64>>,
    /// Number of targets, seeded 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long, value_parser = parse_enum::<AttackInit>)]
    init: Option<AttackInit>,
    #[arg(long)]
    tv_weight: Option<f64>,
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, value_parser = parse_enum::<AttackOptimizer>)]
    optimizer: Option<AttackOptimizer>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Parameters in the synthetic model.
    #[arg(long, default_value_t = 100_000)]
    params: usize,
    /// Values encrypted one per ciphertext before extrapolating.
    #[arg(long, default_value_t = 200)]
    sample: usize,
    /// Encrypted updates per aggregation round.
    #[arg(long, default_value_t = 10)]
    clients: usize,
}

/// Accepts the same spellings as the config file.
fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    use serde::de::value::{Error, StrDeserializer};
    T::deserialize(StrDeserializer::<Error>::new(s)).map_err(|e| e.to_string())
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.federation.seed, self.seed);
        set(&mut cfg.he.degree, self.degree);
        Ok(cfg)
    }
}

fn resolve_train(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = a.common.resolve()?;
    let f = &mut cfg.federation;
    set(&mut f.mode, a.mode);
    set(&mut f.rounds, a.rounds);
    set(&mut f.clients, a.clients);
    set(&mut f.lambda, a.lambda);
    set(&mut f.data, a.data);
    set(&mut f.partition, a.partition);
    if a.mnist_dir.is_some() {
        f.mnist_dir = a.mnist_dir.clone();
    }
    if a.train_subset.is_some() {
        f.train_subset = a.train_subset;
    }
    set(&mut cfg.quantization.bits, a.bits);
    set(&mut cfg.quantization.range_mode, a.range_mode);
    set(&mut cfg.clipping.alpha, a.alpha);
    Ok(cfg)
}

fn resolve_attack(a: &AttackArgs) -> Result<RunConfig, CliError> {
    let mut cfg = a.common.resolve()?;
    let s = &mut cfg.attack;
    if a.checkpoint.is_some() {
        s.checkpoint = a.checkpoint.clone();
    }
    set(&mut s.prune_rates, a.prune_rates.clone());
    set(&mut s.seeds, a.seeds);
    set(&mut s.init, a.init);
    set(&mut s.tv_weight, a.tv_weight);
    set(&mut s.steps, a.steps);
    set(&mut s.step_size, a.step_size);
    set(&mut s.optimizer, a.optimizer);
    Ok(cfg)
}

fn configure_threads() -> Result<(), CliError> {
    let Some(raw) = std::env::var_os("QUANCRYPT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .to_str()
        .and_then(|s| s.parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CliError::Config(format!(
                "QUANCRYPT_THREADS must be a positive integer, got {raw:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => commands::train(&resolve_train(&a)?, &a.common.out),
        Command::Attack(a) => commands::attack(&resolve_attack(&a)?, &a.common.out),
        Command::Bench(a) => commands::bench(
            &a.common.resolve()?,
            &a.common.out,
            a.params,
            a.sample,
            a.clients,
        ),
        Command::Keygen(a) => commands::keygen(&a.resolve()?, &a.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
