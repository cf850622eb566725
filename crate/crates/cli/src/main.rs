mod cmd;
mod http;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use celestine::dataset::DatasetError;
use celestine::netspec::{self, NetSpec, SpecError};
use celestine::runtime::RuntimeError;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "celestine", version, about = "Galaxy vs. nebula/star-cluster classification toolkit")]
struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads [default: available cores].
    #[arg(long, global = true, env = "CELESTINE_THREADS")]
    threads: Option<usize>,
    /// Write a machine-readable JSON report here.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Network spec: a TOML path, or `hr-celestialnet` / `hr-celestialnet-tiny`.
    #[arg(long, global = true)]
    spec: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Layer shapes, parameter counts and memory estimate, compared with the published tables.
    Analyze(cmd::analyze::Args),
    /// Fetch raw frames, crop to the science area, optionally resize.
    Preprocess(cmd::preprocess::Args),
    /// Leakage-free train/test split by celestial body.
    Split(cmd::split::Args),
    /// Synthetic exposures from the electron-flux model.
    Synth(cmd::synth::Args),
    /// Train a network on a sample store.
    Train(cmd::train::Args),
    /// Accuracy and per-class F1 from a checkpoint, a predictions file, or a fixture.
    Eval(cmd::eval::Args),
    /// Per-sample preprocessing and classification time.
    Bench(cmd::bench::Args),
}

pub struct Context {
    pub seed: u64,
    pub threads: usize,
    spec: Option<String>,
}

impl Context {
    /// The `--spec` network, or `default` when none was given.
    pub fn spec_or(&self, default: &str) -> anyhow::Result<NetSpec> {
        load_spec(self.spec.as_deref().unwrap_or(default))
    }
}

fn load_spec(name: &str) -> anyhow::Result<NetSpec> {
    let spec = match name {
        "hr-celestialnet" => netspec::hr_celestialnet_spec(),
        "hr-celestialnet-tiny" => netspec::hr_celestialnet_tiny_spec(),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("spec {path}: {e}")))?;
            NetSpec::from_toml(&text).with_context(|| format!("spec {path}"))?
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// A usage or configuration error (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Per-item failures after the command finished its other work (exit code 1).
#[derive(Debug)]
pub struct ItemFailures(pub usize);

impl std::fmt::Display for ItemFailures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} item(s) failed", self.0)
    }
}

impl std::error::Error for ItemFailures {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<SpecError>() {
            return 2;
        }
        if let Some(
            RuntimeError::Config(_) | RuntimeError::Spec(_) | RuntimeError::InputShape { .. } | RuntimeError::Checkpoint(_),
        ) = cause.downcast_ref::<RuntimeError>()
        {
            return 2;
        }
        if let Some(
            DatasetError::Manifest(_)
            | DatasetError::Row { .. }
            | DatasetError::ConflictingCategory { .. }
            | DatasetError::Split(_)
            | DatasetError::Exposure(_)
            | DatasetError::Csv(_),
        ) = cause.downcast_ref::<DatasetError>()
        {
            return 2;
        }
    }
    1
}

fn resolve_threads(requested: Option<usize>) -> anyhow::Result<usize> {
    match requested {
        Some(0) => Err(usage("--threads must be >= 1")),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = resolve_threads(cli.threads)?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("thread pool")?;
    let ctx = Context { seed: cli.seed, threads, spec: cli.spec };
    let (report, outcome) = match &cli.command {
        Command::Analyze(a) => cmd::analyze::run(a, &ctx),
        Command::Preprocess(a) => cmd::preprocess::run(a, &ctx),
        Command::Split(a) => cmd::split::run(a, &ctx),
        Command::Synth(a) => cmd::synth::run(a, &ctx),
        Command::Train(a) => cmd::train::run(a, &ctx),
        Command::Eval(a) => cmd::eval::run(a, &ctx),
        Command::Bench(a) => cmd::bench::run(a, &ctx),
    }?;
    if let Some(path) = &cli.report {
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing report {}", path.display()))?;
    }
    outcome
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
