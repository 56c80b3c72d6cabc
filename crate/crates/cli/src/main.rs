use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use cofigel::config::{self, validate_config, RunConfig, TraceSource};
use cofigel::experiment::{self, ExperimentError};
use cofigel::trace_io;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(
    name = "cofigel",
    version,
    about = "Trace-driven simulator for recommender-aware DTN content scheduling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scheduler x seed combination and write per-run CSVs plus a summary.
    Run(ConfigArgs),
    /// Check a configuration and print one diagnostic per problem.
    Validate(ConfigArgs),
    /// Write a synthetic contact trace.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset applied before the config file (sancab-like, rollernet-like).
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated scheduler names.
    #[arg(long)]
    scheduler: Option<String>,
    /// Seed count N (seeds 1..=N) or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Seed for the generated trace.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Destination file; stdout when omitted.
    #[arg(long = "trace-out")]
    trace_out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.preset {
        Some(name) => RunConfig::preset(name).ok_or_else(|| {
            Failure::Config(format!(
                "preset: unknown preset {name:?} (expected {})",
                config::PRESETS.join(" or ")
            ))
        })?,
        None => RunConfig::default(),
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(|diags| {
            Failure::Config(
                diags
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("\n"),
            )
        })?;
    }
    let overrides = [
        ("schedulers", args.scheduler.as_deref()),
        ("seeds", args.seeds.as_deref()),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v)
                .map_err(|d| Failure::Config(d.to_string()))?;
        }
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    match experiment::run_experiment(&cfg) {
        Ok(summary) => {
            for r in &summary.runs {
                println!(
                    "{:<18} seed {:<4} fcpp {:.4}  coverage {:.4}  precision {:.4}  liked/user {:.3}",
                    r.scheduler.name(),
                    r.seed,
                    r.report.final_fcpp(),
                    r.report.final_coverage(),
                    r.report.precision,
                    r.report.avg_positive_items_per_user
                );
            }
            println!("summary: {}", summary.summary_csv.display());
            Ok(())
        }
        Err(e @ ExperimentError::Config(_)) => Err(Failure::Config(e.to_string())),
        Err(e) => Err(Failure::Runtime(e.into())),
    }
}

fn validate(args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let diags = validate_config(&cfg);
    if diags.is_empty() {
        println!("ok");
        return Ok(());
    }
    Err(Failure::Config(
        diags
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("\n"),
    ))
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config)?;
    let TraceSource::Synthetic {
        nodes,
        mean_intercontact,
        mean_contact_duration,
    } = cfg.trace
    else {
        return Err(Failure::Config(
            "trace: synth needs synthetic trace parameters, not a trace file".into(),
        ));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let events = trace_io::synth_trace(
        nodes,
        cfg.duration,
        mean_intercontact,
        mean_contact_duration,
        &mut rng,
    );
    match &args.trace_out {
        Some(path) => {
            trace_io::write_contact_trace(&events, path)
                .with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {} contacts to {}", events.len(), path.display());
        }
        None => print!("{}", trace_io::format_contact_trace(&events)),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Validate(args) => validate(args),
        Command::Synth(args) => synth(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error:\n{msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
