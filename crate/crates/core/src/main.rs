use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use spdegal::config::{parse_config, Strictness};
use spdegal::{Error, Result};

/// Run a configured experiment on the stochastic Galerkin engine.
#[derive(Parser, Debug)]
#[command(name = "spdegal", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Base seed, overrides `seed` in the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory, overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for ensembles (results do not depend on it).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,

    /// Reject unknown configuration keys (default).
    #[arg(long, conflicts_with = "lenient")]
    strict: bool,

    /// Warn about unknown configuration keys instead of failing.
    #[arg(long)]
    lenient: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        set_threads(n)?;
    }
    let text = std::fs::read_to_string(&cli.config).map_err(|e| Error::Io(format!("{}: {e}", cli.config.display())))?;
    let strictness = if cli.lenient {
        Strictness::Lenient
    } else {
        Strictness::Strict
    };
    let mut config = parse_config(&text, strictness)?;
    for w in &config.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| config.output.dir.clone());
    let result = spdegal::run::run(&config, &out)?;
    print!("{}", result.summary);
    Ok(())
}

#[cfg(feature = "parallel")]
fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Argument(e.to_string()))
}

#[cfg(not(feature = "parallel"))]
fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("--threads must be at least 1".into()));
    }
    Ok(())
}
