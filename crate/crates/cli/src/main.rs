//! `ngt`: run, sweep and validate group testing experiments.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ngt_core::bundled::{Resolver, PROFILE_PATH_ENV};
use ngt_core::cost_model::CostProfile;
use ngt_core::harness::{sweep_prevalence, Experiment, ExperimentConfig};
use ngt_core::oracle::{load_profile, save_profile};
use ngt_core::report::{write_csv, write_json};
use ngt_core::strategies::{decode_log, read_log, write_log};
use ngt_core::validate::validate_table;
use ngt_core::Error;

#[derive(Parser)]
#[command(name = "ngt", version, about = "Neural group testing simulator and cost accountant")]
#[command(after_help = format!("Profiles and configs are looked up by path, then in ${PROFILE_PATH_ENV}, then among the bundled assets."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct Output {
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Config file path or bundled config name.
    #[arg(long)]
    config: String,
    /// Base seed of the trials; overrides the config.
    #[arg(long)]
    seed: u64,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Maximum number of trials run in parallel.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: Output,
        /// Also write the test log of trial 0 as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run an experiment at several prevalences.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: Output,
        /// Comma-separated prevalences.
        #[arg(long, value_delimiter = ',', required = true)]
        prevalences: Vec<f64>,
    },
    /// Compare engine output with every reference measurement.
    ValidateTable {
        #[arg(long, default_value_t = 100)]
        trials: u32,
        #[arg(long, default_value_t = 2021)]
        seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Decode a double-pool test log into flagged sample ids.
    Decode {
        /// JSON-lines test log.
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Load, validate and re-save a profile file.
    Profile {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "oracle")]
        kind: ProfileKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileKind {
    Oracle,
    Cost,
}

enum Failure {
    Config(Error),
    Runtime(Error),
    Validation,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation) => ExitCode::from(1),
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::from(2)
        }
    }
}

fn chain(e: &dyn std::error::Error) -> String {
    let mut s = e.to_string();
    let mut src = e.source();
    while let Some(inner) = src {
        if !s.contains(&inner.to_string()) {
            s.push_str(": ");
            s.push_str(&inner.to_string());
        }
        src = inner.source();
    }
    s
}

fn load_config(args: &ConfigArgs, resolver: &Resolver) -> Result<ExperimentConfig, Error> {
    let mut config = resolver.config(&args.config)?;
    for o in &args.overrides {
        config.apply_override(o)?;
    }
    config.base_seed = args.seed;
    Ok(config)
}

/// Writes the report and prints the summary line: to stdout when the report
/// went to a file, to stderr otherwise.
fn emit(output: &Output, summary: &str, write: impl FnOnce(&mut dyn Write, Format) -> Result<(), Error>) -> Result<(), Error> {
    match &output.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            let mut w = BufWriter::new(file);
            write(&mut w, output.format)?;
            w.flush().map_err(|e| Error::Io { path: path.clone(), source: e })?;
            println!("{summary}");
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock, output.format)?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let resolver = Resolver::from_env();
    match cli.command {
        Command::Run { config, output, log } => {
            let cfg = load_config(&config, &resolver)?;
            let exp = Experiment::new(cfg, &resolver)?;
            let report = exp.run(config.jobs)?;
            if let Some(path) = log {
                let (_, run) = exp.run_trial(0)?;
                let file = File::create(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                write_log(&run.log, BufWriter::new(file))?;
            }
            emit(&output, &report.summary_line(), |w, f| match f {
                Format::Csv => write_csv(&report.rows(), w),
                Format::Json => write_json(&report, w),
            })?;
        }
        Command::Sweep { config, output, prevalences } => {
            let cfg = load_config(&config, &resolver)?;
            let report = sweep_prevalence(&cfg, &prevalences, &resolver, config.jobs)?;
            let worst = report.rows.iter().map(|r| r.relative_computation).fold(0.0, f64::max);
            let summary = format!(
                "{}: {} prevalences, max relative computation {:.2}%",
                report.name,
                report.rows.len(),
                worst * 100.0
            );
            emit(&output, &summary, |w, f| match f {
                Format::Csv => write_csv(&report.rows, w),
                Format::Json => write_json(&report, w),
            })?;
        }
        Command::ValidateTable { trials, seed, jobs, output } => {
            let report = validate_table(&resolver, trials, seed, jobs)?;
            emit(&output, &report.summary_line(), |w, f| match f {
                Format::Csv => write_csv(&report.checks, w),
                Format::Json => write_json(&report, w),
            })?;
            for c in report.failures() {
                eprintln!("FAIL {} {}: expected {} computed {} ({})", c.row, c.quantity, c.expected, c.computed, c.tolerance);
            }
            if !report.passed() {
                return Err(Failure::Validation);
            }
        }
        Command::Decode { log, output } => {
            let file = File::open(&log).map_err(|e| Error::Io { path: log.clone(), source: e })?;
            let events = read_log(BufReader::new(file)).map_err(|e| e.context(log.display().to_string()))?;
            let flagged = decode_log(&events).map_err(Failure::Config)?;
            let summary = format!("decode: {} tests, {} flagged", events.len(), flagged.len());
            #[derive(serde::Serialize)]
            struct Flag {
                id: usize,
            }
            let rows: Vec<Flag> = flagged.iter().map(|&id| Flag { id }).collect();
            emit(&output, &summary, |w, f| match f {
                Format::Csv => write_csv(&rows, w),
                Format::Json => write_json(&flagged, w),
            })?;
        }
        Command::Profile { input, kind, out } => {
            let summary = match kind {
                ProfileKind::Oracle => {
                    let p = load_profile(&input)?;
                    if let Some(path) = &out {
                        save_profile(&p, path)?;
                    }
                    let sizes: Vec<String> = p.sizes().map(|s| s.to_string()).collect();
                    format!("{}: oracle profile `{}`, sizes {}", input.display(), p.design(), sizes.join(","))
                }
                ProfileKind::Cost => {
                    let p = CostProfile::load(&input)?;
                    if let Some(path) = &out {
                        p.save(path)?;
                    }
                    format!("{}: cost profile `{}`, {} layers, {} MACs", input.display(), p.name(), p.layers(), p.total())
                }
            };
            println!("{summary}");
        }
    }
    Ok(())
}
