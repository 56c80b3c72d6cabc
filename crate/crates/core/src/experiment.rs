//! Scenario construction and scheduler x seed sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{validate_config, Diagnostic, RatingsSource, RunConfig, TraceSource};
use crate::ids::NodeId;
use crate::metrics::{self, MetricsReport, ReportError};
use crate::sched::SchedulerKind;
use crate::sim::{self, Scenario, SimError, SimResult};
use crate::trace_io::{self, GroundTruthRatings, TraceError};

pub const FAILURE_MARKER: &str = "FAILED";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<Diagnostic>),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{failed} of {total} runs failed; see {marker}")]
    RunsFailed {
        failed: usize,
        total: usize,
        marker: PathBuf,
    },
}

impl ExperimentError {
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
    }
}

/// The full (unreduced) ratings dataset named by the config.
pub fn load_ratings(cfg: &RunConfig) -> Result<GroundTruthRatings, ExperimentError> {
    Ok(match &cfg.ratings {
        RatingsSource::File(path) => trace_io::parse_ratings(path, cfg.binarize_threshold)?,
        RatingsSource::Synthetic(shape) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.dataset_seed);
            let rows = trace_io::synth_ratings(shape, &mut rng);
            GroundTruthRatings::from_raw(&rows, cfg.binarize_threshold)?
        }
    })
}

/// Trace, dataset reduction and role assignment for one seed. Every
/// scheduler run with this seed replays the same scenario.
pub fn build_scenario(
    cfg: &RunConfig,
    dataset: &GroundTruthRatings,
    seed: u64,
) -> Result<Scenario, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (contacts, node_ids) = match &cfg.trace {
        TraceSource::File(path) => {
            let contacts = trace_io::parse_contact_trace(path)?;
            let mut ids: Vec<NodeId> = contacts.iter().flat_map(|c| [c.node_a, c.node_b]).collect();
            ids.sort();
            ids.dedup();
            (contacts, ids)
        }
        TraceSource::Synthetic {
            nodes,
            mean_intercontact,
            mean_contact_duration,
        } => {
            let contacts = trace_io::synth_trace(
                *nodes,
                cfg.duration,
                *mean_intercontact,
                *mean_contact_duration,
                &mut rng,
            );
            (contacts, (0..*nodes).map(NodeId).collect())
        }
    };
    let reduced = trace_io::reduce_dataset(dataset, cfg.reduce_users, cfg.reduce_items, &mut rng)?;
    let roles = trace_io::assign_roles(
        &node_ids,
        cfg.publishers,
        cfg.subscribers,
        &reduced,
        &contacts,
        &cfg.eligibility(),
        &mut rng,
    )?;
    let mut scenario = Scenario::new(roles, contacts, reduced);
    for id in node_ids {
        if scenario.nodes.binary_search(&id).is_err() {
            let pos = scenario.nodes.partition_point(|&n| n < id);
            scenario.nodes.insert(pos, id);
        }
    }
    Ok(scenario)
}

pub fn run_one(
    cfg: &RunConfig,
    scenario: &Scenario,
    kind: SchedulerKind,
    seed: u64,
) -> Result<(SimResult, MetricsReport), ExperimentError> {
    let result = sim::run(&cfg.sim_config(), scenario, kind, seed)?;
    let report = metrics::report(&result, &scenario.ground_truth);
    Ok((result, report))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub report: MetricsReport,
    pub csv: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub runs: Vec<RunOutcome>,
    pub summary_csv: PathBuf,
}

impl ExperimentSummary {
    pub fn mean<F: Fn(&MetricsReport) -> f64>(&self, kind: SchedulerKind, f: F) -> f64 {
        let xs: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.scheduler == kind)
            .map(|r| f(&r.report))
            .collect();
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    }
}

pub fn run_csv_name(kind: SchedulerKind, seed: u64) -> String {
    format!("{kind}-seed{seed}.csv")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Runs every scheduler against every seed, writing one CSV per run and a
/// per-scheduler mean over seeds. On any failure the successful runs' CSVs
/// are kept and a failure marker lists the errors.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentSummary, ExperimentError> {
    let diags = validate_config(cfg);
    if !diags.is_empty() {
        return Err(ExperimentError::Config(diags));
    }
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let marker = out.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(io_err(&marker))?;
    }

    let dataset = load_ratings(cfg)?;
    let scenarios: Vec<(u64, Result<Scenario, ExperimentError>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| (seed, build_scenario(cfg, &dataset, seed)))
        .collect();

    let jobs: Vec<(SchedulerKind, u64, &Result<Scenario, ExperimentError>)> = cfg
        .schedulers
        .iter()
        .flat_map(|&kind| scenarios.iter().map(move |(seed, sc)| (kind, *seed, sc)))
        .collect();

    let results: Vec<Result<RunOutcome, String>> = jobs
        .par_iter()
        .map(|&(kind, seed, scenario)| {
            let label = format!("{kind} seed {seed}");
            let scenario = scenario.as_ref().map_err(|e| format!("{label}: {e}"))?;
            let (_, report) =
                run_one(cfg, scenario, kind, seed).map_err(|e| format!("{label}: {e}"))?;
            let csv = out.join(run_csv_name(kind, seed));
            metrics::emit_report(&report, &csv).map_err(|e| format!("{label}: {e}"))?;
            Ok(RunOutcome {
                scheduler: kind,
                seed,
                report,
                csv,
            })
        })
        .collect();

    let total = results.len();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => runs.push(o),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        let mut text = failures.join("\n");
        text.push('\n');
        fs::write(&marker, text).map_err(io_err(&marker))?;
        return Err(ExperimentError::RunsFailed {
            failed: failures.len(),
            total,
            marker,
        });
    }

    let summary_csv = out.join(SUMMARY_FILE);
    let summary = ExperimentSummary { runs, summary_csv };
    fs::write(&summary.summary_csv, summary_table(cfg, &summary))
        .map_err(io_err(&summary.summary_csv))?;
    Ok(summary)
}

fn summary_table(cfg: &RunConfig, summary: &ExperimentSummary) -> String {
    let mut text = String::from(
        "scheduler,runs,fcpp,coverage,positive_ratings_discovered,precision,\
         avg_positive_items_per_user,users_with_useful_item,latency_p50,latency_p90\n",
    );
    let counts: BTreeMap<SchedulerKind, usize> =
        summary.runs.iter().fold(BTreeMap::new(), |mut m, r| {
            *m.entry(r.scheduler).or_default() += 1;
            m
        });
    for &kind in &cfg.schedulers {
        let m = |f: fn(&MetricsReport) -> f64| summary.mean(kind, f);
        let _ = writeln!(
            text,
            "{kind},{},{},{},{},{},{},{},{},{}",
            counts.get(&kind).copied().unwrap_or(0),
            m(|r| r.final_fcpp()),
            m(|r| r.final_coverage()),
            m(|r| r.final_positive_ratings() as f64),
            m(|r| r.precision),
            m(|r| r.avg_positive_items_per_user),
            m(|r| r.users_with_useful_item as f64),
            m(|r| r.latency_p50),
            m(|r| r.latency_p90),
        );
    }
    text
}
