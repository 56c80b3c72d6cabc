//! Run configuration: a `key = value` text format with two built-in presets.
//!
//! Sizes accept `B`, `KB`, `MB`, `GB` suffixes (decimal), durations accept
//! `s`, `m`/`min`, `h`, and bandwidth accepts `bps`/`Kbps`/`Mbps` (bits) or
//! `Bps`/`KBps`/`MBps` (bytes). Bare numbers are bytes, seconds and bytes per
//! second respectively. `#` starts a comment.

use std::fmt;
use std::path::PathBuf;

use crate::sched::SchedulerKind;
use crate::sim::SimConfig;
use crate::trace_io::{Eligibility, SynthRatings};
use crate::utility::ContactStats;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub key: String,
    pub message: String,
}

impl Diagnostic {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    File(PathBuf),
    Synthetic {
        nodes: u32,
        mean_intercontact: f64,
        mean_contact_duration: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RatingsSource {
    File(PathBuf),
    Synthetic(SynthRatings),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub trace: TraceSource,
    pub ratings: RatingsSource,
    /// Seed of the synthetic ratings dataset; fixed across run seeds so every
    /// seed samples from the same dataset.
    pub dataset_seed: u64,
    pub binarize_threshold: u8,
    pub reduce_users: usize,
    pub reduce_items: usize,
    pub publishers: usize,
    pub subscribers: usize,
    pub publish_rate_per_hour: f64,
    pub item_size: u64,
    pub buffer_size: u64,
    /// Bytes per second.
    pub bandwidth: f64,
    pub item_lifetime: f64,
    pub duration: f64,
    pub warmup: f64,
    pub cooldown: f64,
    pub top_k: usize,
    pub bootstrap_fraction: f64,
    pub metadata_bytes: u64,
    pub report_interval: f64,
    pub min_contacts: u64,
    /// Minimum cumulative contact capacity, in item sizes.
    pub min_contact_items: f64,
    /// Contacts per hour assumed before a node's first contact.
    pub prior_contact_rate: f64,
    /// Seconds per contact assumed before a node's first contact.
    pub prior_contact_duration: f64,
    pub schedulers: Vec<SchedulerKind>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

const HOUR: f64 = 3600.0;
const MB: u64 = 1_000_000;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            trace: TraceSource::Synthetic {
                nodes: 30,
                mean_intercontact: 3600.0,
                mean_contact_duration: 30.0,
            },
            ratings: RatingsSource::Synthetic(SynthRatings::default()),
            dataset_seed: 7,
            binarize_threshold: 4,
            reduce_users: 100,
            reduce_items: 200,
            publishers: 5,
            subscribers: 20,
            publish_rate_per_hour: 40.0,
            item_size: 10 * MB,
            buffer_size: 1000 * MB,
            bandwidth: 375_000.0,
            item_lifetime: HOUR,
            duration: 3.0 * HOUR,
            warmup: HOUR,
            cooldown: 0.5 * HOUR,
            top_k: 10,
            bootstrap_fraction: 0.01,
            metadata_bytes: 0,
            report_interval: 600.0,
            min_contacts: 10,
            min_contact_items: 10.0,
            prior_contact_rate: 6.0,
            prior_contact_duration: 30.0,
            schedulers: vec![SchedulerKind::CoFiGel],
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("out"),
        }
    }
}

pub const PRESETS: [&str; 2] = ["sancab-like", "rollernet-like"];

impl RunConfig {
    /// Simulation parameters of the vehicular (taxi) setting.
    pub fn sancab_like() -> Self {
        RunConfig {
            // ~213 contacts of ~73 s per node over 6 h among 100 nodes.
            trace: TraceSource::Synthetic {
                nodes: 100,
                mean_intercontact: 99.0 * 6.0 * HOUR / 213.0,
                mean_contact_duration: 73.0,
            },
            reduce_users: 500,
            reduce_items: 900,
            publishers: 22,
            subscribers: 56,
            publish_rate_per_hour: 20.0,
            duration: 6.0 * HOUR,
            item_size: 11 * MB,
            buffer_size: 2000 * MB,
            bandwidth: 375_000.0,
            item_lifetime: 2.0 * HOUR,
            warmup: HOUR,
            cooldown: HOUR,
            ..RunConfig::default()
        }
    }

    /// Simulation parameters of the human-mobility (rollerblading) setting.
    pub fn rollernet_like() -> Self {
        RunConfig {
            // ~501 contacts of ~22 s per node over 3 h among 60 nodes.
            trace: TraceSource::Synthetic {
                nodes: 60,
                mean_intercontact: 59.0 * 3.0 * HOUR / 501.0,
                mean_contact_duration: 22.0,
            },
            reduce_users: 500,
            reduce_items: 900,
            publishers: 10,
            subscribers: 30,
            publish_rate_per_hour: 40.0,
            duration: 3.0 * HOUR,
            item_size: 15 * MB,
            buffer_size: 1000 * MB,
            bandwidth: 375_000.0,
            item_lifetime: 1.25 * HOUR,
            warmup: HOUR,
            cooldown: 0.5 * HOUR,
            ..RunConfig::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "sancab-like" => Some(Self::sancab_like()),
            "rollernet-like" => Some(Self::rollernet_like()),
            _ => None,
        }
    }

    /// Parses `text` on top of `self`. A `preset` key, if present, must come
    /// first and replaces every value set so far.
    pub fn apply_text(&mut self, text: &str) -> Result<(), Vec<Diagnostic>> {
        let mut diags = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                diags.push(Diagnostic::new(
                    &format!("line {}", idx + 1),
                    format!("expected key = value, got {body:?}"),
                ));
                continue;
            };
            if let Err(d) = self.set(key.trim(), value.trim()) {
                diags.push(d);
            }
        }
        if diags.is_empty() {
            Ok(())
        } else {
            Err(diags)
        }
    }

    pub fn from_text(text: &str) -> Result<Self, Vec<Diagnostic>> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    fn synth_ratings_mut(&mut self) -> &mut SynthRatings {
        if !matches!(self.ratings, RatingsSource::Synthetic(_)) {
            self.ratings = RatingsSource::Synthetic(SynthRatings::default());
        }
        match &mut self.ratings {
            RatingsSource::Synthetic(s) => s,
            RatingsSource::File(_) => unreachable!(),
        }
    }

    fn synth_trace_mut(&mut self) -> (&mut u32, &mut f64, &mut f64) {
        if !matches!(self.trace, TraceSource::Synthetic { .. }) {
            self.trace = RunConfig::default().trace;
        }
        match &mut self.trace {
            TraceSource::Synthetic {
                nodes,
                mean_intercontact,
                mean_contact_duration,
            } => (nodes, mean_intercontact, mean_contact_duration),
            TraceSource::File(_) => unreachable!(),
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Diagnostic> {
        let bad = |msg: String| Diagnostic::new(key, msg);
        let num = |v: &str| -> Result<f64, Diagnostic> {
            v.parse::<f64>()
                .map_err(|_| bad(format!("expected a number, got {v:?}")))
        };
        let int = |v: &str| -> Result<u64, Diagnostic> {
            v.parse::<u64>()
                .map_err(|_| bad(format!("expected a non-negative integer, got {v:?}")))
        };
        let size = |v: &str| parse_size(v).map_err(&bad);
        let secs = |v: &str| parse_duration(v).map_err(&bad);
        match key {
            "preset" => {
                *self = RunConfig::preset(value).ok_or_else(|| {
                    bad(format!(
                        "unknown preset {value:?} (expected {})",
                        PRESETS.join(" or ")
                    ))
                })?;
            }
            "trace" => self.trace = TraceSource::File(PathBuf::from(value)),
            "synth_nodes" => *self.synth_trace_mut().0 = int(value)? as u32,
            "synth_mean_intercontact" => *self.synth_trace_mut().1 = secs(value)?,
            "synth_mean_contact_duration" => *self.synth_trace_mut().2 = secs(value)?,
            "ratings" => self.ratings = RatingsSource::File(PathBuf::from(value)),
            "synth_users" => self.synth_ratings_mut().users = int(value)? as u32,
            "synth_items" => self.synth_ratings_mut().items = int(value)? as u32,
            "synth_density" => self.synth_ratings_mut().density = num(value)?,
            "synth_groups" => self.synth_ratings_mut().groups = int(value)? as u32,
            "synth_in_group_like" => self.synth_ratings_mut().in_group_like = num(value)?,
            "synth_out_group_like" => self.synth_ratings_mut().out_group_like = num(value)?,
            "dataset_seed" => self.dataset_seed = int(value)?,
            "binarize_threshold" => {
                let t = int(value)?;
                if !(1..=5).contains(&t) {
                    return Err(bad(format!("must be within 1..=5, got {t}")));
                }
                self.binarize_threshold = t as u8;
            }
            "reduce_users" => self.reduce_users = int(value)? as usize,
            "reduce_items" => self.reduce_items = int(value)? as usize,
            "publishers" => self.publishers = int(value)? as usize,
            "subscribers" => self.subscribers = int(value)? as usize,
            "publish_rate" => {
                self.publish_rate_per_hour = num(value.trim_end_matches("/h").trim())?
            }
            "item_size" => self.item_size = size(value)?,
            "buffer_size" => self.buffer_size = size(value)?,
            "bandwidth" => self.bandwidth = parse_bandwidth(value).map_err(&bad)?,
            "item_lifetime" => self.item_lifetime = secs(value)?,
            "duration" => self.duration = secs(value)?,
            "warmup" => self.warmup = secs(value)?,
            "cooldown" => self.cooldown = secs(value)?,
            "top_k" => self.top_k = int(value)? as usize,
            "bootstrap_fraction" => self.bootstrap_fraction = num(value)?,
            "metadata_bytes" => self.metadata_bytes = size(value)?,
            "report_interval" => self.report_interval = secs(value)?,
            "min_contacts" => self.min_contacts = int(value)?,
            "min_contact_items" => self.min_contact_items = num(value)?,
            "prior_contact_rate" => self.prior_contact_rate = num(value)?,
            "prior_contact_duration" => self.prior_contact_duration = secs(value)?,
            "schedulers" => self.schedulers = parse_schedulers(value).map_err(&bad)?,
            "seeds" => self.seeds = parse_seeds(value).map_err(&bad)?,
            "out" => self.out_dir = PathBuf::from(value),
            _ => return Err(bad("unknown key".into())),
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            duration: self.duration,
            warmup: self.warmup,
            cooldown: self.cooldown,
            item_size: self.item_size,
            buffer_capacity: self.buffer_size,
            bandwidth: self.bandwidth,
            item_lifetime: self.item_lifetime,
            publish_rate_per_hour: self.publish_rate_per_hour,
            top_k: self.top_k,
            bootstrap_fraction: self.bootstrap_fraction,
            metadata_bytes: self.metadata_bytes,
            report_interval: self.report_interval,
            prior: ContactStats {
                lambda: self.prior_contact_rate / HOUR,
                bytes_per_contact: self.prior_contact_duration * self.bandwidth,
            },
        }
    }

    pub fn eligibility(&self) -> Eligibility {
        Eligibility {
            min_contacts: self.min_contacts,
            min_bytes: self.min_contact_items * self.item_size as f64,
            bandwidth: self.bandwidth,
        }
    }
}

/// Empty iff the configuration is runnable. Checks values only; file
/// existence is checked when the run starts.
pub fn validate_config(cfg: &RunConfig) -> Vec<Diagnostic> {
    let mut d = Vec::new();
    let mut positive = |key: &str, v: f64| {
        if !(v > 0.0 && v.is_finite()) {
            d.push(Diagnostic::new(key, format!("must be positive, got {v}")));
        }
    };
    positive("publish_rate", cfg.publish_rate_per_hour);
    positive("item_size", cfg.item_size as f64);
    positive("buffer_size", cfg.buffer_size as f64);
    positive("bandwidth", cfg.bandwidth);
    positive("item_lifetime", cfg.item_lifetime);
    positive("duration", cfg.duration);
    positive("top_k", cfg.top_k as f64);
    positive("report_interval", cfg.report_interval);
    positive("prior_contact_rate", cfg.prior_contact_rate);
    positive("prior_contact_duration", cfg.prior_contact_duration);
    positive("publishers", cfg.publishers as f64);
    positive("subscribers", cfg.subscribers as f64);
    positive("reduce_users", cfg.reduce_users as f64);
    positive("reduce_items", cfg.reduce_items as f64);
    if let TraceSource::Synthetic {
        nodes,
        mean_intercontact,
        mean_contact_duration,
    } = cfg.trace
    {
        positive("synth_mean_intercontact", mean_intercontact);
        positive("synth_mean_contact_duration", mean_contact_duration);
        if (nodes as usize) < cfg.publishers + cfg.subscribers {
            d.push(Diagnostic::new(
                "synth_nodes",
                format!(
                    "{nodes} nodes cannot host {} publishers and {} subscribers",
                    cfg.publishers, cfg.subscribers
                ),
            ));
        }
    }
    if let RatingsSource::Synthetic(s) = &cfg.ratings {
        if !(s.density > 0.0 && s.density <= 1.0) {
            d.push(Diagnostic::new("synth_density", "must be in (0, 1]"));
        }
        for (key, p) in [
            ("synth_in_group_like", s.in_group_like),
            ("synth_out_group_like", s.out_group_like),
        ] {
            if !(0.0..=1.0).contains(&p) {
                d.push(Diagnostic::new(key, "must be a probability"));
            }
        }
        if (s.users as usize) < cfg.reduce_users {
            d.push(Diagnostic::new(
                "reduce_users",
                format!("exceeds synth_users ({})", s.users),
            ));
        }
        if (s.items as usize) < cfg.reduce_items {
            d.push(Diagnostic::new(
                "reduce_items",
                format!("exceeds synth_items ({})", s.items),
            ));
        }
    }
    if cfg.subscribers > cfg.reduce_users {
        d.push(Diagnostic::new(
            "subscribers",
            format!("more subscribers than users ({})", cfg.reduce_users),
        ));
    }
    if cfg.warmup < 0.0 {
        d.push(Diagnostic::new("warmup", "must be >= 0"));
    }
    if cfg.cooldown < 0.0 {
        d.push(Diagnostic::new("cooldown", "must be >= 0"));
    }
    if cfg.warmup + cfg.cooldown >= cfg.duration {
        d.push(Diagnostic::new(
            "warmup",
            format!(
                "warmup ({} s) + cooldown ({} s) must be shorter than duration ({} s)",
                cfg.warmup, cfg.cooldown, cfg.duration
            ),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.bootstrap_fraction) {
        d.push(Diagnostic::new("bootstrap_fraction", "must be in [0, 1]"));
    }
    if cfg.item_size > cfg.buffer_size {
        d.push(Diagnostic::new("buffer_size", "smaller than one item"));
    }
    if cfg.schedulers.is_empty() {
        d.push(Diagnostic::new(
            "schedulers",
            "at least one scheduler is required",
        ));
    }
    if cfg.seeds.is_empty() {
        d.push(Diagnostic::new("seeds", "at least one seed is required"));
    }
    d
}

fn split_unit(v: &str) -> (&str, &str) {
    let v = v.trim();
    let cut = v
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+' || c == 'e'))
        .unwrap_or(v.len());
    (v[..cut].trim(), v[cut..].trim())
}

fn scaled(v: &str, unit_scale: impl Fn(&str) -> Option<f64>) -> Result<f64, String> {
    let (num, unit) = split_unit(v);
    let x: f64 = num
        .parse()
        .map_err(|_| format!("expected a number with optional unit, got {v:?}"))?;
    let scale = unit_scale(unit).ok_or_else(|| format!("unknown unit {unit:?} in {v:?}"))?;
    Ok(x * scale)
}

pub fn parse_size(v: &str) -> Result<u64, String> {
    let bytes = scaled(v, |u| match u.to_ascii_uppercase().as_str() {
        "" | "B" => Some(1.0),
        "KB" => Some(1e3),
        "MB" => Some(1e6),
        "GB" => Some(1e9),
        _ => None,
    })?;
    if bytes < 0.0 {
        return Err(format!("size must be >= 0, got {v:?}"));
    }
    Ok(bytes.round() as u64)
}

pub fn parse_duration(v: &str) -> Result<f64, String> {
    scaled(v, |u| match u {
        "" | "s" | "sec" => Some(1.0),
        "m" | "min" => Some(60.0),
        "h" | "hr" => Some(HOUR),
        _ => None,
    })
}

pub fn parse_bandwidth(v: &str) -> Result<f64, String> {
    scaled(v, |u| match u {
        "" | "Bps" => Some(1.0),
        "KBps" => Some(1e3),
        "MBps" => Some(1e6),
        "bps" => Some(1.0 / 8.0),
        "Kbps" | "kbps" => Some(1e3 / 8.0),
        "Mbps" => Some(1e6 / 8.0),
        _ => None,
    })
}

pub fn parse_schedulers(v: &str) -> Result<Vec<SchedulerKind>, String> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<SchedulerKind>().map_err(|e| e.to_string()))
        .collect()
}

/// `N` means seeds `1..=N`; otherwise a comma-separated list.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>, String> {
    let v = v.trim();
    if !v.contains(',') {
        let n: u64 = v
            .parse()
            .map_err(|_| format!("expected a count or a comma-separated list, got {v:?}"))?;
        return Ok((1..=n).collect());
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| format!("invalid seed {s:?}"))
        })
        .collect()
}
