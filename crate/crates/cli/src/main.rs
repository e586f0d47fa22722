//! `rdre`: data generation, fits, grid experiments and assumption audits.
//!
//! Exit codes: 0 success, 2 input or config error, 3 fit did not converge,
//! 4 grid finished with failed cells.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use commands::{Common, DiagnoseArgs, ExperimentArgs, FitArgs, GenDataArgs, Status};
use robust_dre::experiments::Scenario;
use robust_dre::model::Method;

#[derive(Parser)]
#[command(name = "rdre", version, about = "Sparse and robust density ratio estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set solver.max_iter=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory (reports go to stdout when omitted).
    #[arg(long, short, value_name = "DIR")]
    output: Option<PathBuf>,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common {
            config: a.config,
            sets: a.sets,
            seed: a.seed,
            output: a.output,
        }
    }
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    match s {
        "robustness" => Ok(Scenario::Robustness),
        "unboundedness" => Ok(Scenario::Unboundedness),
        other => Err(format!("unknown scenario `{other}` (expected robustness or unboundedness)")),
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: robust_dre::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Write reference.csv, target.csv and truth.json for one synthetic draw.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_parser = parse_scenario)]
        scenario: Option<Scenario>,
        /// Round non-integral outlier counts instead of failing.
        #[arg(long)]
        round_contamination: bool,
    },
    /// Fit one density ratio and print a JSON report.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "CSV")]
        reference: PathBuf,
        #[arg(long, value_name = "CSV")]
        target: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        /// Fixed regularization strength, bypassing the schedule.
        #[arg(long)]
        lambda: Option<f64>,
        /// Include the Fisher information audit at the estimate.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Run a Monte-Carlo grid and write results.csv and resolved_config.json.
    Experiment {
        #[command(flatten)]
        common: CommonArgs,
        /// Built-in defaults to start from when no config file is given.
        #[arg(long, value_parser = parse_scenario)]
        scenario: Option<Scenario>,
        /// Worker threads (default: all cores). Results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        /// Comma-separated subset of `dre,wdre`.
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        methods: Option<Vec<Method>>,
        /// Dimensions 50, 100, 200 with 200 repetitions.
        #[arg(long = "paper-scale")]
        full_scale: bool,
        #[arg(long)]
        round_contamination: bool,
        /// Suppress the per-cell summary lines.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Audit leverage and Fisher information conditions on a dataset pair.
    Diagnose {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "CSV")]
        reference: PathBuf,
        #[arg(long, value_name = "CSV")]
        target: PathBuf,
        /// Fit report or truth.json supplying θ and the support.
        #[arg(long, value_name = "JSON")]
        theta: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    match cli.command {
        Command::GenData {
            common,
            scenario,
            round_contamination,
        } => commands::gen_data(&GenDataArgs {
            common: common.into(),
            scenario,
            round_contamination,
        }),
        Command::Fit {
            common,
            reference,
            target,
            method,
            lambda,
            diagnostics,
        } => commands::fit_cmd(&FitArgs {
            common: common.into(),
            reference,
            target,
            method,
            lambda,
            diagnostics,
        }),
        Command::Experiment {
            common,
            scenario,
            threads,
            methods,
            full_scale,
            round_contamination,
            quiet,
        } => commands::experiment(&ExperimentArgs {
            common: common.into(),
            scenario,
            threads,
            methods,
            full_scale,
            round_contamination,
            quiet,
        }),
        Command::Diagnose {
            common,
            reference,
            target,
            theta,
        } => commands::diagnose(&DiagnoseArgs {
            common: common.into(),
            reference,
            target,
            theta,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("warning: solver did not converge; the report holds the last iterate");
            ExitCode::from(3)
        }
        Ok(Status::Partial) => {
            eprintln!("error: some cells failed; results.csv holds the completed cells");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
