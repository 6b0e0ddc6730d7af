//! Run configuration: defaults, then the TOML file named by `CPRUNE_CONFIG`,
//! then command-line flags.
//!
//! Config file keys match the long flags with `-` replaced by `_`:
//!
//! | key | type | range / values | default |
//! |---|---|---|---|
//! | `model` | path | existing file | none |
//! | `backend` | string | `lane`, `temporal`, `measured` | `lane` |
//! | `lane_width` | integer | 1..=4096 | 8 |
//! | `c0`, `c1`, `c2` | float | finite, >= 0 | 0.05, 2e-7, 1e-5 |
//! | `jitter` | float | 0..=1 (temporal backend) | 0 |
//! | `trace_csv` | path | existing file; required by `measured` | none |
//! | `probes` | integer | 1..=100000 | 64 |
//! | `seed` | integer | u64 | 0 |
//! | `delta` | float | finite, >= 0 | 0.1 |
//! | `method` | string | `filter`, `cluster` | `cluster` |
//! | `cluster_size` | string or integer | `auto`, N >= 1, or a periods JSON path | `auto` |
//! | `budget_params` | integer | >= 1 | none |
//! | `budget_latency` | float | > 0 | none |
//! | `max_pruned` | integer | >= 1 | none |
//! | `min_remaining` | integer | >= 1 | 2 |
//! | `rerank` | bool | | false |
//! | `layers`, `exclude` | list of layer names | existing layers | all prunable, none |
//! | `out` | path | directory, created if missing | `.` |

use std::path::{Path, PathBuf};

use cprune_core::hwmodel::HwError;
use cprune_core::planner::Budget;
use cprune_core::pruner::DEFAULT_MIN_REMAINING;
use cprune_core::{LaneAlignedModel, LatencyModel, MeasuredTrace, Method, TemporalModel};
use serde::Deserialize;

use crate::error::CliError;

pub const CONFIG_ENV: &str = "CPRUNE_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Lane,
    Temporal,
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Filter,
    Cluster,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Filter => Method::Filter,
            MethodArg::Cluster => Method::Cluster,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClusterSizePolicy {
    Auto,
    Fixed(usize),
    /// Per-layer sizes from a periods JSON written by `profile`.
    File(PathBuf),
}

impl std::str::FromStr for ClusterSizePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        if let Ok(n) = s.parse::<usize>() {
            return if n == 0 { Err("cluster size must be at least 1".into()) } else { Ok(Self::Fixed(n)) };
        }
        if s.is_empty() {
            return Err("expected `auto`, a positive integer or a periods file".into());
        }
        Ok(Self::File(PathBuf::from(s)))
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ClusterSizeValue {
    Int(usize),
    Text(String),
}

/// Every setting that may come from the config file or flags.
#[derive(Debug, Clone, Default, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Model file to read.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Latency backend.
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Lane width L of the lane-aligned backend (also used by the accuracy response).
    #[arg(long)]
    pub lane_width: Option<usize>,
    /// Fixed per-layer latency (ms).
    #[arg(long)]
    pub c0: Option<f64>,
    /// Per-work latency coefficient (ms).
    #[arg(long)]
    pub c1: Option<f64>,
    /// Lane misalignment penalty coefficient (ms).
    #[arg(long)]
    pub c2: Option<f64>,
    /// Relative latency jitter of the temporal backend.
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Measured latency trace CSV for the `measured` backend.
    #[arg(long)]
    pub trace_csv: Option<PathBuf>,
    /// Number of fidelity probes.
    #[arg(long)]
    pub probes: Option<usize>,
    /// Seed for probes, generated models and the temporal backend.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Agreement lost per lane-misaligned layer.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Pruning method.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// `auto`, a fixed size N, or a periods JSON file.
    #[arg(long, value_parser = parse_cluster_size)]
    #[serde(default, deserialize_with = "cluster_size_from_toml")]
    pub cluster_size: Option<ClusterSizePolicy>,
    /// Stop once the parameter count is below this.
    #[arg(long)]
    pub budget_params: Option<u64>,
    /// Stop once the latency (ms) is below this.
    #[arg(long)]
    pub budget_latency: Option<f64>,
    /// Never prune more than this many filters.
    #[arg(long)]
    pub max_pruned: Option<usize>,
    /// Filters every layer keeps.
    #[arg(long)]
    pub min_remaining: Option<usize>,
    /// Re-rank the filter baseline after every removal.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub rerank: Option<bool>,
    /// Restrict to these layers (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<String>>,
    /// Leave these layers alone (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub exclude: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_cluster_size(s: &str) -> Result<ClusterSizePolicy, String> {
    s.parse()
}

fn cluster_size_from_toml<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<ClusterSizePolicy>, D::Error> {
    let text = match ClusterSizeValue::deserialize(d)? {
        ClusterSizeValue::Int(n) => n.to_string(),
        ClusterSizeValue::Text(t) => t,
    };
    text.parse().map(Some).map_err(serde::de::Error::custom)
}

impl Settings {
    /// Parses a config file; unknown keys are errors.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {}", origin.display(), e.message())))
    }

    /// Reads the file named by `CPRUNE_CONFIG`, if set.
    pub fn from_env() -> Result<Self, CliError> {
        match std::env::var_os(CONFIG_ENV) {
            None => Ok(Self::default()),
            Some(p) => {
                let path = PathBuf::from(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("{CONFIG_ENV}={}: {e}", path.display())))?;
                Self::from_toml(&text, &path)
            }
        }
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => { Settings { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            model, backend, lane_width, c0, c1, c2, jitter, trace_csv, probes, seed, delta, method, cluster_size,
            budget_params, budget_latency, max_pruned, min_remaining, rerank, layers, exclude, out
        )
    }
}

/// Settings with defaults filled in and ranges checked.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub backend: Backend,
    pub lane_width: usize,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub jitter: f64,
    pub trace_csv: Option<PathBuf>,
    pub probes: usize,
    pub seed: u64,
    pub delta: f64,
    pub method: Method,
    pub cluster_size: ClusterSizePolicy,
    pub budget: Budget,
    pub min_remaining: usize,
    pub rerank: bool,
    pub layers: Option<Vec<String>>,
    pub exclude: Vec<String>,
    pub out: PathBuf,
}

pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_PROBES: usize = cprune_core::engine::DEFAULT_PROBE_COUNT;

fn check(ok: bool, field: &str, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("`{field}` {msg}")))
    }
}

fn existing(path: &Option<PathBuf>, field: &str) -> Result<(), CliError> {
    match path {
        Some(p) if !p.is_file() => Err(CliError::Config(format!("`{field}`: no such file {}", p.display()))),
        _ => Ok(()),
    }
}

impl RunConfig {
    pub fn resolve(s: Settings) -> Result<Self, CliError> {
        let lane = LaneAlignedModel::default();
        let cfg = RunConfig {
            model: s.model,
            backend: s.backend.unwrap_or(Backend::Lane),
            lane_width: s.lane_width.unwrap_or(lane.lane_width),
            c0: s.c0.unwrap_or(lane.c0),
            c1: s.c1.unwrap_or(lane.c1),
            c2: s.c2.unwrap_or(lane.c2),
            jitter: s.jitter.unwrap_or(0.0),
            trace_csv: s.trace_csv,
            probes: s.probes.unwrap_or(DEFAULT_PROBES),
            seed: s.seed.unwrap_or(0),
            delta: s.delta.unwrap_or(DEFAULT_DELTA),
            method: s.method.map_or(Method::Cluster, Method::from),
            cluster_size: s.cluster_size.unwrap_or(ClusterSizePolicy::Auto),
            budget: Budget {
                max_params: s.budget_params,
                max_latency_ms: s.budget_latency,
                max_filters_pruned: s.max_pruned,
            },
            min_remaining: s.min_remaining.unwrap_or(DEFAULT_MIN_REMAINING),
            rerank: s.rerank.unwrap_or(false),
            layers: s.layers,
            exclude: s.exclude.unwrap_or_default(),
            out: s.out.unwrap_or_else(|| PathBuf::from(".")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check((1..=4096).contains(&self.lane_width), "lane_width", "must be in 1..=4096")?;
        for (name, v) in [("c0", self.c0), ("c1", self.c1), ("c2", self.c2), ("delta", self.delta)] {
            check(v.is_finite() && v >= 0.0, name, "must be finite and non-negative")?;
        }
        check((0.0..=1.0).contains(&self.jitter), "jitter", "must be in [0, 1]")?;
        check((1..=100_000).contains(&self.probes), "probes", "must be in 1..=100000")?;
        check(self.min_remaining >= 1, "min_remaining", "must be at least 1")?;
        check(self.budget.max_params.map_or(true, |p| p >= 1), "budget_params", "must be at least 1")?;
        check(
            self.budget.max_latency_ms.map_or(true, |t| t.is_finite() && t > 0.0),
            "budget_latency",
            "must be finite and positive",
        )?;
        check(self.budget.max_filters_pruned.map_or(true, |n| n >= 1), "max_pruned", "must be at least 1")?;
        existing(&self.model, "model")?;
        existing(&self.trace_csv, "trace_csv")?;
        if let ClusterSizePolicy::File(p) = &self.cluster_size {
            existing(&Some(p.clone()), "cluster_size")?;
        }
        if self.backend == Backend::Measured && self.trace_csv.is_none() {
            return Err(CliError::Config("`backend` measured needs `trace_csv`".into()));
        }
        Ok(())
    }

    pub fn model_path(&self) -> Result<&Path, CliError> {
        self.model.as_deref().ok_or_else(|| CliError::Config("`model` is required".into()))
    }

    pub fn latency_model(&self) -> Result<Box<dyn LatencyModel>, CliError> {
        let invalid = |e: HwError| CliError::Config(e.to_string());
        Ok(match self.backend {
            Backend::Lane => Box::new(LaneAlignedModel::new(self.lane_width, self.c0, self.c1, self.c2).map_err(invalid)?),
            Backend::Temporal => Box::new(TemporalModel::new(self.c0, self.c1, self.jitter, self.seed).map_err(invalid)?),
            Backend::Measured => {
                let path = self.trace_csv.as_ref().expect("validated");
                let file = std::fs::File::open(path).map_err(|e| CliError::data(path, e))?;
                let trace: MeasuredTrace = crate::formats::read_measured_trace(file).map_err(|e| CliError::data(path, e))?;
                if trace.is_empty() {
                    return Err(CliError::Data(format!("{}: trace has no rows", path.display())));
                }
                Box::new(trace)
            }
        })
    }
}
