//! `berglab <subcommand> --config <path> [--out <dir>]`.

use std::path::PathBuf;
use std::process::ExitCode;

use berglab::report::Status;
use berglab_cli::{combined_status, run, Command, ExperimentConfig};
use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    Moments,
    Regularize,
    LatticeVerify,
    Construct,
    Pair,
    Smooth,
    Cyclicity,
    All,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Command {
        match s {
            Sub::Moments => Command::Moments,
            Sub::Regularize => Command::Regularize,
            Sub::LatticeVerify => Command::LatticeVerify,
            Sub::Construct => Command::Construct,
            Sub::Pair => Command::Pair,
            Sub::Smooth => Command::Smooth,
            Sub::Cyclicity => Command::Cyclicity,
            Sub::All => Command::All,
        }
    }
}

/// Numerical laboratory for large weighted Bergman spaces.
#[derive(Debug, Parser)]
#[command(name = "berglab", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for reports and tables.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Ok(v) = std::env::var("BERGLAB_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("berglab: cannot set thread count: {e}");
                }
            }
            _ => {
                eprintln!("berglab: config error: BERGLAB_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    let cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("berglab: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(args.command.into(), &cfg, &args.out) {
        Ok(envs) => {
            for env in &envs {
                println!("{:<15} {:?}", env.command, env.status);
                for r in env.reports.iter().filter(|r| r.status != Status::Pass) {
                    println!("  {} {:?}: {}", r.lemma, r.status, r.failing().join(", "));
                }
            }
            let reports: Vec<_> = envs.iter().flat_map(|e| e.reports.iter().cloned()).collect();
            if combined_status(&reports) == Status::Fail {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("berglab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
