use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairdummies_cli::commands::{self, CHECKPOINT_FILE};
use fairdummies_cli::{CliResult, ExperimentConfig, Overrides};

/// Equalized-odds experiments with fair dummy attributes.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error,
/// 4 numerical divergence.
#[derive(Debug, Parser)]
#[command(name = "fairdummies", version)]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true, value_name = "DIR", env = "FAIRDUMMIES_OUT_DIR")]
    out: Option<PathBuf>,
    /// Benchmark repetitions; overrides `reps`.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Worker threads for benchmark repetitions.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic dataset as data.csv and schema.toml.
    Synth,
    /// Fit the fair model; writes checkpoint.json, trace.csv, metrics.csv.
    Train,
    /// Fair dummies test of a checkpoint; writes test_report.json.
    Test {
        /// Defaults to checkpoint.json in the output directory.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Group-conditional prediction sets from a checkpoint.
    Conformal {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Repeated splits with fair and baseline models; writes benchmark.csv,
    /// benchmark_summary.csv and benchmark_runtimes.csv.
    Benchmark,
}

fn run(cli: Cli) -> CliResult<()> {
    let overrides = Overrides {
        seed: cli.seed,
        reps: cli.reps,
        out_dir: cli.out,
    };
    let config = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    let checkpoint = |p: Option<PathBuf>| p.unwrap_or_else(|| config.out_dir.join(CHECKPOINT_FILE));
    match cli.command {
        Command::Synth => {
            for p in commands::synth(&config)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train => {
            let out = commands::train(&config)?;
            println!("test error {:.4} (group 0: {:.4}, group 1: {:.4})", out.error, out.group_error[0], out.group_error[1]);
            println!("wrote {}", out.checkpoint.display());
            println!("wrote {}", out.trace.display());
        }
        Command::Test { checkpoint: ck } => {
            let (report, path) = commands::test(&config, &checkpoint(ck))?;
            println!("p-value {}", report.p_value);
            if let Some(w) = &report.warning {
                eprintln!("warning: {w}");
            }
            println!("wrote {}", path.display());
        }
        Command::Conformal { checkpoint: ck } => {
            let out = commands::conformal(&config, &checkpoint(ck))?;
            for s in &out.summary {
                println!(
                    "group {}: coverage {:.3}, mean set size {:.3}, empty {:.3}",
                    s.group, s.coverage, s.mean_size, s.empty_fraction
                );
            }
            println!("wrote {}", out.sets.display());
            println!("wrote {}", out.summary_path.display());
        }
        Command::Benchmark => {
            let (_, paths) = commands::benchmark(&config, cli.jobs)?;
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
