use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};

use simwave::config::RunConfig;
use simwave::run::{execute, write_artifacts, Mode};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Validate,
    Ao,
    SweepN,
    SweepL,
    Converge,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Validate => Mode::Validate,
            ModeArg::Ao => Mode::Ao,
            ModeArg::SweepN => Mode::SweepN,
            ModeArg::SweepL => Mode::SweepL,
            ModeArg::Converge => Mode::Converge,
        }
    }
}

/// Stacked intelligent metasurface downlink: oracles, optimization runs and
/// parameter sweeps.
#[derive(Debug, Parser)]
#[command(name = "simwave", version)]
struct Cli {
    mode: ModeArg,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, env = "SIMWAVE_THREADS")]
    threads: Option<usize>,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut config = RunConfig::load(&cli.config).with_context(|| format!("reading {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out_dir = cli.out.unwrap_or_else(|| PathBuf::from(&config.output.dir));
    eprintln!("# config: {}", config.resolved_json());

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker pool")?;

    let mode = Mode::from(cli.mode);
    let outcome = pool.install(|| execute(mode, &config)).with_context(|| format!("{} failed", mode.name()))?;
    for line in &outcome.report {
        println!("{line}");
    }
    if !outcome.artifacts.is_empty() {
        write_artifacts(&out_dir, &outcome.artifacts).with_context(|| format!("writing to {}", out_dir.display()))?;
        for a in &outcome.artifacts {
            println!("wrote {}", out_dir.join(&a.name).display());
        }
    }
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
