use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use depas::analysis::aggregate::aggregate_runs;
use depas::analysis::metrics::write_csv;
use depas::analysis::run_scenario;
use depas::analysis::scenario::{Scenario, ScenarioError};
use depas::analysis::theorems::{run_suite, SuiteParams};

#[derive(Parser)]
#[command(name = "depas", version, about = "Simulator of a self-scaling worker pool without a central controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its metrics as CSV.
    Run(RunArgs),
    /// Run several seeds and write per-sample mean and standard deviation.
    Aggregate {
        #[command(flatten)]
        common: RunArgs,
        /// Number of independent runs.
        #[arg(long, default_value_t = 8)]
        runs: usize,
    },
    /// Parse a scenario and print the resolved configuration.
    Validate {
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Run the expected-capacity checks and print their estimates.
    Theorems {
        /// Random seed for the Monte-Carlo checks.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file; the bundled scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Random seed; overrides the scenario's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seconds between metric samples.
    #[arg(long, allow_negative_numbers = true)]
    sample_period: Option<f64>,
}

fn load(path: Option<&PathBuf>) -> Result<Scenario, ScenarioError> {
    match path {
        Some(p) => Scenario::from_path(p),
        None => Ok(Scenario::default_scenario()),
    }
}

fn resolve(args: &RunArgs) -> Result<Scenario, ScenarioError> {
    let mut scenario = load(args.scenario.as_ref())?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(period) = args.sample_period {
        if !(period > 0.0 && period.is_finite()) {
            return Err(ScenarioError::Field {
                field: "sample_period".into(),
                message: format!("must be positive, got {period}"),
            });
        }
        scenario.sample_period = period;
    }
    Ok(scenario)
}

fn output(path: Option<&PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match cli.command {
        Command::Run(args) => {
            let scenario = match resolve(&args) {
                Ok(s) => s,
                Err(e) => return config_error(e),
            };
            let records = run_scenario(&scenario);
            let written = output(args.out.as_ref())
                .and_then(|mut out| write_csv(&mut out, &scenario.type_labels(), &records).and_then(|_| out.flush()));
            if let Err(e) = written {
                return config_error(e);
            }
        }
        Command::Aggregate { common, runs } => {
            let scenario = match resolve(&common) {
                Ok(s) => s,
                Err(e) => return config_error(e),
            };
            if runs == 0 {
                return config_error("--runs must be at least 1");
            }
            let series = aggregate_runs(&scenario, runs, scenario.seed);
            let written = output(common.out.as_ref()).and_then(|mut out| series.write_csv(&mut out).and_then(|_| out.flush()));
            if let Err(e) = written {
                return config_error(e);
            }
        }
        Command::Validate { scenario } => match load(scenario.as_ref()) {
            Ok(s) => print!("{}", s.describe()),
            Err(e) => return config_error(e),
        },
        Command::Theorems { seed } => {
            let checks = run_suite(&SuiteParams {
                seed,
                ..SuiteParams::default()
            });
            for check in &checks {
                println!("{check}");
            }
            if checks.iter().any(|c| !c.passed) {
                return ExitCode::from(2);
            }
        }
    }
    ExitCode::SUCCESS
}
