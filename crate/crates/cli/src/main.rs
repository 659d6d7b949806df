//! `pvcast`: train, predict, evaluate and report day-ahead PV power forecasts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pvcast_core::config::RunConfig;
use pvcast_core::ingest::parse_timestamp;
use pvcast_core::pipeline::{self, PipelineError};
use pvcast_core::suite::{self, SuiteOptions};
use pvcast_core::synthetic::{self, SyntheticSpec};

#[derive(Parser)]
#[command(name = "pvcast", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set knn.k=50`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every model and the ensemble weights, then write the artifacts.
    Train(RunArgs),
    /// Write predictions.csv for the test days from saved artifacts.
    Predict(RunArgs),
    /// Predict, then write nmae.csv and nmae.txt.
    Evaluate(RunArgs),
    /// Rebuild the error tables from an existing predictions file.
    Report {
        #[command(flatten)]
        run: RunArgs,
        /// Predictions file; defaults to <output_dir>/predictions.csv.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Check the solvers against brute-force reference implementations.
    Oracle {
        #[arg(value_enum, default_value_t = Family::All)]
        family: Family,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Shrink every tolerance to zero so that deviations are reported.
        #[arg(long)]
        corrupt_tolerance: bool,
    },
    /// Write a synthetic weather.csv and power.csv in the GEFCom2014 layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "2013-01-01T00:00")]
        start: String,
        /// Length in hours; defaults to the span the default split needs.
        #[arg(long)]
        hours: Option<usize>,
        /// Write radiation and precipitation as 24-hour run totals.
        #[arg(long)]
        accumulated: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    All,
    Svr,
    Qrf,
    Ensemble,
    Knn,
    Nn,
}

impl Family {
    fn prefix(self) -> &'static str {
        match self {
            Family::All => "",
            Family::Svr => "svr",
            Family::Qrf => "qrf",
            Family::Ensemble => "ensemble",
            Family::Knn => "knn",
            Family::Nn => "nn",
        }
    }
}

fn load(args: &RunArgs) -> Result<RunConfig, PipelineError> {
    let config = match &args.config {
        Some(path) => RunConfig::load(path, &args.overrides)?,
        None => RunConfig::from_toml_with_overrides("", &args.overrides)?,
    };
    config.validate()?;
    Ok(config)
}

fn fail(err: PipelineError) -> ExitCode {
    eprintln!("pvcast: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn announce(what: &str, path: &Path) {
    println!("{what}: {}", path.display());
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Train(args) => {
            let config = load(&args)?;
            pipeline::run_train(&config)?;
            announce("artifacts", &pipeline::models_dir(&config));
        }
        Command::Predict(args) => {
            let config = load(&args)?;
            pipeline::run_predict(&config)?;
            announce(
                "predictions",
                &config.output_dir.join(pipeline::PREDICTIONS_FILE),
            );
        }
        Command::Evaluate(args) => {
            let config = load(&args)?;
            let report = pipeline::run_evaluate(&config)?;
            print!("{}", report.to_text());
        }
        Command::Report { run, predictions } => {
            let config = load(&run)?;
            let report = pipeline::run_report(&config, predictions.as_deref())?;
            print!("{}", report.to_text());
        }
        Command::Oracle { .. } | Command::Synth { .. } => unreachable!("handled in main"),
    }
    Ok(())
}

fn oracle(family: Family, seed: u64, corrupt_tolerance: bool) -> ExitCode {
    let options = SuiteOptions {
        seed,
        tolerance_scale: if corrupt_tolerance { 0.0 } else { 1.0 },
    };
    let results: Vec<_> = suite::run_all(&options)
        .into_iter()
        .filter(|r| r.name.starts_with(family.prefix()))
        .collect();
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    }
}

fn synth(out: &Path, seed: u64, start: &str, hours: Option<usize>, accumulated: bool) -> ExitCode {
    let Some(start) = parse_timestamp(start) else {
        eprintln!("pvcast: `{start}` is not a timestamp");
        return ExitCode::from(2);
    };
    let default = SyntheticSpec::protocol_span(seed);
    let spec = SyntheticSpec {
        start,
        hours: hours.unwrap_or(default.hours),
        accumulated,
        ..default
    };
    match synthetic::write_files(&spec, out) {
        Ok(()) => {
            announce("data", out);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pvcast: {}: {e}", out.display());
            ExitCode::from(3)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Oracle {
            family,
            seed,
            corrupt_tolerance,
        } => oracle(family, seed, corrupt_tolerance),
        Command::Synth {
            out,
            seed,
            start,
            hours,
            accumulated,
        } => synth(&out, seed, &start, hours, accumulated),
        command => match run(command) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(e),
        },
    }
}
