//! `snslab <kind> --config <path> [--seed N] [--out DIR] [--workers N]`
//!
//! Exit codes: 0 on pass, 2 on statistical-test failure, 1 on execution
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use snslab::config::ExperimentKind;
use snslab::{parse_config, run_experiment};

#[derive(Parser)]
#[command(
    name = "snslab",
    about = "Spectral stochastic Navier-Stokes laboratory",
    version
)]
struct Cli {
    /// Experiment to run; must match the config's `kind` when both are set.
    #[arg(value_enum)]
    kind: ExperimentKind,

    /// Path to the experiment configuration.
    #[arg(long)]
    config: PathBuf,

    /// Overrides `run.master_seed`.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads for ensemble execution (defaults to all cores).
    #[arg(long, env = "SNSLAB_WORKERS")]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are execution errors, not statistical failures.
            let _ = e.print();
            return ExitCode::from(1);
        }
    };

    #[cfg(feature = "parallel")]
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("warning: could not size the worker pool: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cli.workers.is_some() {
        eprintln!("warning: built without the parallel feature; --workers is ignored");
    }

    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(1);
        }
    };
    let mut config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match config.kind {
        Some(k) if k != cli.kind => {
            eprintln!(
                "error: config declares kind \"{}\" but the command line asked for \"{}\"",
                k.name(),
                cli.kind.name()
            );
            return ExitCode::from(1);
        }
        _ => config.kind = Some(cli.kind),
    }
    if let Some(seed) = cli.seed {
        config.run.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.directory = out.display().to_string();
    }

    let command = {
        let mut c = format!(
            "snslab {} --config {}",
            cli.kind.name(),
            cli.config.display()
        );
        if let Some(seed) = cli.seed {
            c.push_str(&format!(" --seed {seed}"));
        }
        if let Some(out) = &cli.out {
            c.push_str(&format!(" --out {}", out.display()));
        }
        if let Some(w) = cli.workers {
            c.push_str(&format!(" --workers {w}"));
        }
        c
    };

    match run_experiment(&config, command) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            println!("{}", outcome.summary_line());
            if outcome.passed {
                ExitCode::from(0)
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
