use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use calerm::cli::{run, Command, Invocation};

/// Loss-calibrated ERM toolkit: fitting, complexity fixed points, small-ball
/// diagnostics, and reproducible Monte Carlo experiments.
#[derive(Parser, Debug)]
#[command(name = "calerm", version, about)]
struct Args {
    #[command(subcommand)]
    command: Cmd,

    /// Path to the JSON configuration document.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for CSV (and optional SVG) files.
    #[arg(long, global = true, value_name = "DIR", default_value = "./out")]
    out: PathBuf,

    /// Master seed override (falls back to CALERM_SEED, then the config).
    #[arg(long, global = true, env = "CALERM_SEED")]
    seed: Option<u64>,

    /// Worker threads; results are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Config override of the form KEY=VALUE (dotted keys allowed); repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Also render summary.svg with median-error curves.
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Fit one dataset and write fit.csv.
    Fit,
    /// Estimate widths and fixed points; write complexity.csv.
    Complexity,
    /// Small-ball curve and certificate; write smallball.csv.
    Smallball,
    /// Run the configured Monte Carlo experiment; write results.csv.
    Experiment,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(k) = args.threads {
        // ignore the error if a pool already exists; determinism does not
        // depend on the thread count
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let Some(config) = args.config else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(2);
    };
    let command = match args.command {
        Cmd::Fit => Command::Fit,
        Cmd::Complexity => Command::Complexity,
        Cmd::Smallball => Command::Smallball,
        Cmd::Experiment => Command::Experiment,
    };
    let inv = Invocation {
        command,
        config_path: config,
        out_dir: args.out,
        seed: args.seed,
        overrides: args.overrides,
        plot: args.plot,
    };
    match run(&inv) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
