use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rshe::cli_io::{run, RunConfig, RunStatus};

/// Runs one numerical suite described by a JSON configuration.
#[derive(Parser, Debug)]
#[command(name = "rshe", version)]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. Affects speed only.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut config = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("rshe: {e}");
            return ExitCode::from(RunStatus::InvalidConfig.exit_code() as u8);
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.output_dir = Some(out);
    }
    let manifest = match run(&config, args.threads) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("rshe: {e}");
            return ExitCode::from(RunStatus::InvalidConfig.exit_code() as u8);
        }
    };
    for v in &manifest.verdicts {
        println!("{} {}: {:.6e} ({})", if v.passed { "PASS" } else { "FAIL" }, v.name, v.value, v.detail);
    }
    if let Some(e) = &manifest.error {
        eprintln!("rshe: {e}");
    }
    println!("{:?} in {:.2}s", manifest.status, manifest.wall_clock_secs);
    ExitCode::from(manifest.status.exit_code() as u8)
}
