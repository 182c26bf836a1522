use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use vlq_cli::{parse_config, run, Command};
use vlq_core::riccati::Scheme;

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SchemeArg {
    Direct,
    Dp,
}

/// Linear-quadratic control of stochastic Volterra equations.
#[derive(Debug, Parser)]
#[command(name = "vlq", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and the tables.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "VLQ_THREADS")]
    threads: Option<usize>,
    /// Overrides run.scheme.
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Overrides run.sweep, e.g. 8,16,32,64.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
}

fn main_inner(cli: Cli) -> Result<bool> {
    let text = std::fs::read_to_string(&cli.config).with_context(|| format!("reading {}", cli.config.display()))?;
    let mut config = parse_config(&text)?;
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(scheme) = cli.scheme {
        config.run.scheme = match scheme {
            SchemeArg::Direct => Scheme::Direct,
            SchemeArg::Dp => Scheme::Dp,
        };
    }
    if let Some(ladder) = cli.sweep {
        config.run.sweep = ladder;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        anyhow::ensure!(t > 0, "--threads must be positive");
        pool = pool.num_threads(t);
    }
    pool.build_global().context("starting the worker pool")?;
    let threads = rayon::current_num_threads();

    let report = run(cli.command, &config, &cli.out, threads)?;
    for c in &report.checks {
        let tag = match (c.tolerance, c.pass) {
            (None, _) => "info",
            (Some(_), true) => "pass",
            (Some(_), false) => "FAIL",
        };
        println!("{tag:>4}  {:<36} value {:.6e}  oracle {:.6e}  deviation {:.3e}", c.name, c.value, c.oracle, c.deviation);
    }
    for (k, v) in &report.values {
        println!("      {k:<36} {v:.10e}");
    }
    println!("report written to {}", cli.out.join("report.json").display());
    Ok(report.pass)
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks exceeded their tolerance");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
