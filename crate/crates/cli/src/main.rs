use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use batchmem_cli::commands::{
    cmd_lab, cmd_oracle_verify, cmd_plot, cmd_run, cmd_sweep, OracleVerifyArgs, PlotKind,
};
use batchmem_cli::config::ExperimentConfig;
use batchmem_cli::CliError;

/// Simulation and verification lab for batched, memory-bounded bandits.
#[derive(Parser)]
#[command(name = "batchmem", version, about)]
struct Cli {
    /// Worker threads for replications and sweep cells (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run; writes transcript.csv, transcript.bin, summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Grid sweep; writes sweep.csv and sweep_summary.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Lower-bound lab session; writes lab.csv and lab.json.
    Lab {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Exhaustive change-of-measure verification on tiny instances; writes
    /// oracle_report.json and slack.csv.
    OracleVerify {
        /// Arms of the tiny environment (at most 3).
        #[arg(long, default_value_t = 2)]
        arms: usize,
        /// Horizon of the tiny environment (enumeration needs K*T <= 24).
        #[arg(long, default_value_t = 4)]
        horizon: usize,
        /// Number of random decision tables.
        #[arg(long, default_value_t = 100)]
        policies: u64,
        /// Perturbation gaps.
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.25])]
        gaps: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        policy_seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Render a documented CSV to a self-contained SVG.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &std::path::Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.run.master_seed = seed;
    }
    Ok(config)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, seed, out } => {
            let config = load_config(&config, seed)?;
            let summary = cmd_run(&config, &out)?;
            eprintln!(
                "run: regret {:.3}, B = {}, peak {} bits -> {}",
                summary.regret,
                summary.batches,
                summary.peak_state_bits,
                out.display()
            );
        }
        Command::Sweep { config, seed, out } => {
            let config = load_config(&config, seed)?;
            let summary = cmd_sweep(&config, &out)?;
            eprintln!(
                "sweep: {} rows over {} cells -> {}",
                summary.rows,
                summary.cells.len(),
                out.display()
            );
        }
        Command::Lab { config, seed, out } => {
            let config = load_config(&config, seed)?;
            let summary = cmd_lab(&config, &out)?;
            eprintln!(
                "lab: P_e = {:.4}, info bound {:.3} bits, capacity {} bits -> {}",
                summary.error.p_e,
                summary.info_lower_bound_bits,
                summary.capacity_bound_bits,
                out.display()
            );
        }
        Command::OracleVerify {
            arms,
            horizon,
            policies,
            gaps,
            policy_seed,
            out,
        } => {
            let args = OracleVerifyArgs {
                arms,
                horizon,
                policies,
                gaps,
                policy_seed,
            };
            let summary = cmd_oracle_verify(&args, &out)?;
            eprintln!(
                "oracle-verify: {} checks, {} violations, max slack {:.4} -> {}",
                summary.event_checks,
                summary.violations,
                summary.max_slack_ratio,
                out.display()
            );
        }
        Command::Plot { kind, input, out } => {
            cmd_plot(kind, &input, &out)?;
            eprintln!("plot -> {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("{}", CliError::usage("Workers", e).record());
            return ExitCode::from(2);
        }
    }
    let started = Instant::now();
    match dispatch(cli.command) {
        Ok(()) => {
            eprintln!("done in {:.2?}", started.elapsed());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code as u8)
        }
    }
}
