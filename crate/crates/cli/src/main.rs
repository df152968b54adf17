//! `qpi`: run payload-identification experiments on simulated scenarios.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qpi_core::experiment::{self, EstimatorKind, ExperimentError, SweepParameter};

#[derive(Parser)]
#[command(name = "qpi", version, about = "Online mass and COM identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; writes trace.csv and report.txt.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one scenario per seed; writes compare.csv with mean and std per metric.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated list, e.g. 1,2,3.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vary one setting over a list of values; writes sweep.csv.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// noise-scale | forgetting | thresholds
        #[arg(long)]
        param: SweepParameter,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run { scenario, seed, out } => {
            let report = experiment::cmd_run(&scenario, seed, &out)?;
            let kf = report.metrics(EstimatorKind::KalmanPublished);
            let rls = report.metrics(EstimatorKind::Rls);
            println!(
                "{} seed {}: terminal mass error kf_published {:.4} kg, rls {:.4} kg, duty cycle {:.3}",
                report.scenario_name, seed, kf.terminal_error[0], rls.terminal_error[0], kf.duty_cycle
            );
            println!("wrote {}", out.display());
        }
        Command::Compare { scenario, seeds, out } => {
            let comparison = experiment::cmd_compare(&scenario, &seeds, &out)?;
            for row in comparison.rows.iter().filter(|r| r.metric == "terminal_error_m") {
                println!(
                    "{:>13} terminal_error_m {:.4} ± {:.4} (n = {})",
                    row.estimator, row.mean, row.std, row.n
                );
            }
            println!("wrote {}", out.join(experiment::COMPARE_FILE).display());
        }
        Command::Sweep {
            scenario,
            param,
            values,
            seed,
            out,
        } => {
            let runs = experiment::cmd_sweep(&scenario, param, &values, seed, &out)?;
            for (value, report) in &runs {
                let kf = report.metrics(EstimatorKind::Kalman);
                let rls = report.metrics(EstimatorKind::Rls);
                println!(
                    "{} = {value}: final-quarter mass MAE kf {:.4}, rls {:.4}",
                    param.name(),
                    kf.final_quarter_mae[0],
                    rls.final_quarter_mae[0]
                );
            }
            println!("wrote {}", out.join(experiment::SWEEP_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QPI_LOG", "error")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
