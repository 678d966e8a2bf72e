//! `mdts`: experiment runner for reward-guided masked diffusion sampling.

mod checks;
mod config;
mod output;
mod run;
mod task;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mdts_bridge::ENDPOINT_ENV;

use crate::config::{Method, RunConfig};
use crate::run::SweepAxis;

#[derive(Parser)]
#[command(name = "mdts", version, about = "Reward-guided tree search for masked diffusion language models")]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set fk.lambda=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Comma-separated seeds, replacing `seeds` from the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Output path prefix.
    #[arg(long, short)]
    output: Option<String>,

    /// Bridge server `host:port`.
    #[arg(long, env = ENDPOINT_ENV)]
    bridge_endpoint: Option<String>,

    #[arg(long)]
    bridge_timeout_ms: Option<u64>,

    /// Write zero for runtime so repeated runs give identical files.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Plain first-hitting sampling, one sample per seed.
    Generate(Common),
    /// Tree search.
    Treasure(Common),
    /// Best-of-N reranking.
    Bon(Common),
    /// Particle steering with resampling.
    Fk(Common),
    /// Runs the configured method across values of one width axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Per-step pool statistics of tree-search runs.
    Trajectory(Common),
    /// Runs the theory checks and writes one JSON report per line.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        check: checks::Check,
        /// Seed for the checks.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One tenth of the default sample sizes.
        #[arg(long)]
        quick: bool,
    },
    /// Prints the effective config as TOML.
    Config(Common),
}

enum Failure {
    /// The request itself is wrong: bad config, flags, or task.
    Usage(anyhow::Error),
    /// Something broke while running.
    Run(anyhow::Error),
    /// Checks ran but some did not pass.
    Checks(usize),
}

fn load(common: &Common, method: Option<Method>) -> Result<RunConfig, Failure> {
    let mut overrides = common.overrides.clone();
    if let Some(m) = method {
        overrides.insert(0, format!("method=\"{}\"", m.name()));
    }
    let mut cfg = RunConfig::load(common.config.as_deref(), &overrides).map_err(Failure::Usage)?;
    if let Some(s) = &common.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(o) = &common.output {
        cfg.output = o.clone();
    }
    if let Some(e) = &common.bridge_endpoint {
        cfg.bridge.endpoint = e.clone();
    }
    if let Some(t) = common.bridge_timeout_ms {
        cfg.bridge.timeout_ms = t;
    }
    if common.no_timing {
        cfg.timing = false;
    }
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn setup(common: &Common, method: Option<Method>) -> Result<(RunConfig, task::Task), Failure> {
    let cfg = load(common, method)?;
    // An unreachable bridge is a run failure; anything else here is the config.
    let task = task::build(&cfg).map_err(|e| {
        if e.chain().any(|c| c.is::<mdts_bridge::BridgeError>()) {
            Failure::Run(e)
        } else {
            Failure::Usage(e)
        }
    })?;
    Ok((cfg, task))
}

/// Writes whatever rows finished, then reports the first failure if any.
fn finish<T: serde::Serialize>(prefix: &str, rows: &[T], err: Option<anyhow::Error>) -> Result<(), Failure> {
    let (csv, jsonl) = output::write_rows(prefix, rows).map_err(Failure::Run)?;
    eprintln!("wrote {} rows to {} and {}", rows.len(), csv.display(), jsonl.display());
    match err {
        Some(e) => Err(Failure::Run(e.context(format!("run stopped after {} rows", rows.len())))),
        None => Ok(()),
    }
}

fn num(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-3 {
        format!("{x:.3e}")
    } else {
        format!("{x:.4}")
    }
}

fn verify(common: &Common, check: checks::Check, seed: u64, quick: bool) -> Result<(), Failure> {
    let (cfg, task) = setup(common, None)?;
    let reports = checks::run_checks(check, &task, &cfg, seed, quick).map_err(Failure::Run)?;
    let written = match &common.output {
        Some(path) => std::fs::File::create(path)
            .with_context(|| format!("cannot create {path}"))
            .and_then(|f| output::write_jsonl(&mut std::io::BufWriter::new(f), &reports)),
        None => output::write_jsonl(&mut std::io::stdout().lock(), &reports),
    };
    written.map_err(Failure::Run)?;
    for r in &reports {
        let status = if r.skipped { "SKIP" } else if r.pass { "PASS" } else { "FAIL" };
        eprintln!("{status} {}: statistic {} vs threshold {} ({})", r.name, num(r.statistic), num(r.threshold), r.rule);
    }
    match reports.iter().filter(|r| !r.pass).count() {
        0 => Ok(()),
        n => Err(Failure::Checks(n)),
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    let run = |common: &Common, method| {
        let (cfg, task) = setup(common, method)?;
        let (rows, err) = run::run_all(&task, &cfg);
        finish(&cfg.output, &rows, err)
    };
    match command {
        Command::Generate(c) => run(&c, Some(Method::Base)),
        Command::Treasure(c) => run(&c, Some(Method::Treasure)),
        Command::Bon(c) => run(&c, Some(Method::Bon)),
        Command::Fk(c) => run(&c, Some(Method::Fk)),
        Command::Sweep { common, axis, values } => {
            let (cfg, task) = setup(&common, None)?;
            let (rows, err) = run::sweep(&task, &cfg, axis, &values).map_err(Failure::Usage)?;
            finish(&cfg.output, &rows, err)
        }
        Command::Trajectory(common) => {
            let (cfg, task) = setup(&common, None)?;
            let (rows, err) = run::trajectory(&task, &cfg).map_err(Failure::Usage)?;
            finish(&cfg.output, &rows, err)
        }
        Command::Verify { common, check, seed, quick } => verify(&common, check, seed, quick),
        Command::Config(common) => {
            print!("{}", load(&common, None)?.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
        Err(Failure::Checks(n)) => {
            eprintln!("{n} checks failed");
            ExitCode::FAILURE
        }
    }
}
