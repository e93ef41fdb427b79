//! Scenario files.
//!
//! A scenario is a JSON document:
//!
//! ```json
//! {
//!   "name": "demo",
//!   "seed": 1,
//!   "duration_s": 600,
//!   "policy": "subscribed_load",
//!   "execution_model": "fair_share",
//!   "overlay": { "k_close": 2, "k_far": 1 },
//!   "nodes": [
//!     { "node_id": "n0", "os": "linux", "arch": "x86", "memory_mb": 4096,
//!       "capacity_marks_per_s": 100, "libraries": ["blas"], "hardware_features": [] }
//!   ],
//!   "workload": {
//!     "apps": [
//!       { "name": "blast", "version": "2.0", "weight": 1,
//!         "requirements": { "os": "linux", "min_memory_mb": 512 },
//!         "declared_demand_marks": 500, "history": [450, 520],
//!         "true_demand": { "lognormal": { "median": 480, "sigma": 0.2 } },
//!         "turnaround_s": { "uniform": { "lo": 30, "hi": 90 } } }
//!     ],
//!     "arrivals": { "poisson": { "rate_per_s": 0.05 } },
//!     "jobs": [ { "time": 12, "app": "blast", "origin": "n0" } ],
//!     "ttl": 3,
//!     "min_confidence": 0.0
//!   },
//!   "config": {
//!     "demand": { "quantile": 0.9, "safety_factor": 1.5, "cold_start_confidence": 0.5 },
//!     "sord": { "ttl_max": 3, "collect_timeout_s": 2.0, "hop_latency_s": 0.01 },
//!     "monitor": { "beacon_period_s": 5, "integrity_factor": 2.0 },
//!     "sim": { "sample_period_s": 5, "latency_jitter_s": 0.0 }
//!   }
//! }
//! ```
//!
//! Distributions are `{"constant": x}`, `{"uniform": {"lo", "hi"}}` or
//! `{"lognormal": {"median", "sigma"}}`. Explicit `jobs` may leave out
//! `origin`, `true_demand_marks` and `turnaround_s`; missing values are drawn
//! from the app's distributions and a uniformly chosen origin.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::DemandConfig;
use crate::matcher::NonVolatileRequirements;
use crate::monitor::MonitorConfig;
use crate::profiles::{IpcLevel, NonVolatileFacts};
use crate::sord::SordConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Bid unsubscribed ledger capacity, admit only feasible work.
    #[default]
    SubscribedLoad,
    /// Bid idle CPU share from the last volatile sample, admit unconditionally.
    SpotLoad,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::SubscribedLoad => "subscribed_load",
            Policy::SpotLoad => "spot_load",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "subscribed_load" => Ok(Policy::SubscribedLoad),
            "spot_load" => Ok(Policy::SpotLoad),
            _ => Err(format!("unknown policy `{s}` (subscribed_load or spot_load)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionModel {
    /// Processor sharing: n running jobs each get rate / n.
    #[default]
    FairShare,
    /// Earliest due job runs at full rate.
    Edf,
}

impl ExecutionModel {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecutionModel::FairShare => "fair_share",
            ExecutionModel::Edf => "edf",
        }
    }
}

impl std::str::FromStr for ExecutionModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fair_share" => Ok(ExecutionModel::FairShare),
            "edf" => Ok(ExecutionModel::Edf),
            _ => Err(format!("unknown execution model `{s}` (fair_share or edf)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dist {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    Lognormal { median: f64, sigma: f64 },
}

impl Dist {
    fn validate(&self, what: &str) -> Result<(), ConfigError> {
        let ok = match *self {
            Dist::Constant(x) => x.is_finite() && x > 0.0,
            Dist::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi,
            Dist::Lognormal { median, sigma } => {
                median.is_finite() && median > 0.0 && sigma.is_finite() && sigma >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("{what}: bad distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Constant(x) => x,
            Dist::Uniform { lo, hi } if lo == hi => lo,
            Dist::Uniform { lo, hi } => rng.gen_range(lo..=hi),
            Dist::Lognormal { median, sigma } => LogNormal::new(median.ln(), sigma)
                .expect("validated lognormal")
                .sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: String,
    #[serde(flatten)]
    pub facts: NonVolatileFacts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlaySpec {
    pub k_close: usize,
    #[serde(default)]
    pub k_far: usize,
}

impl Default for OverlaySpec {
    fn default() -> Self {
        OverlaySpec { k_close: 2, k_far: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub name: String,
    pub version: String,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub ipc_level: IpcLevel,
    #[serde(default)]
    pub requirements: NonVolatileRequirements,
    pub declared_demand_marks: f64,
    /// Demand of earlier runs, oldest first.
    #[serde(default)]
    pub history: Vec<f64>,
    pub true_demand: Dist,
    pub turnaround_s: Dist,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrivals {
    #[default]
    None,
    Poisson { rate_per_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub time: f64,
    /// App name.
    pub app: String,
    #[serde(default)]
    pub origin: Option<String>,
    #[serde(default)]
    pub true_demand_marks: Option<f64>,
    #[serde(default)]
    pub turnaround_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    #[serde(default)]
    pub apps: Vec<AppSpec>,
    #[serde(default)]
    pub arrivals: Arrivals,
    #[serde(default)]
    pub jobs: Vec<JobSpec>,
    #[serde(default = "default_ttl")]
    pub ttl: u32,
    #[serde(default)]
    pub min_confidence: f64,
}

fn default_ttl() -> u32 {
    3
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            apps: Vec::new(),
            arrivals: Arrivals::None,
            jobs: Vec::new(),
            ttl: default_ttl(),
            min_confidence: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub sample_period_s: f64,
    /// Extra per-message latency drawn uniformly from `[0, latency_jitter_s]`.
    pub latency_jitter_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sample_period_s: 5.0,
            latency_jitter_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub demand: DemandConfig,
    pub sord: SordConfig,
    pub monitor: MonitorConfig,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub execution_model: ExecutionModel,
    #[serde(default)]
    pub overlay: OverlaySpec,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub config: Config,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid("duration_s must be positive"));
        }
        if self.nodes.is_empty() {
            return Err(invalid("at least one node is required"));
        }
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if n.node_id.trim().is_empty() || !ids.insert(n.node_id.as_str()) {
                return Err(invalid(format!("duplicate or empty node id `{}`", n.node_id)));
            }
            n.facts
                .validate()
                .map_err(|e| invalid(format!("node `{}`: {e}", n.node_id)))?;
        }
        // k_close >= node count means a fully connected overlay
        if self.overlay.k_close == 0 || self.overlay.k_close % 2 != 0 {
            return Err(invalid(format!(
                "overlay.k_close={} must be even and positive",
                self.overlay.k_close
            )));
        }

        let c = &self.config;
        if !(c.demand.quantile > 0.0 && c.demand.quantile <= 1.0) {
            return Err(invalid("config.demand.quantile must lie in (0, 1]"));
        }
        if !(c.demand.safety_factor.is_finite() && c.demand.safety_factor > 0.0) {
            return Err(invalid("config.demand.safety_factor must be positive"));
        }
        if !(0.0..=1.0).contains(&c.demand.cold_start_confidence) {
            return Err(invalid("config.demand.cold_start_confidence must lie in [0, 1]"));
        }
        if !(c.sord.collect_timeout_s >= 0.0 && c.sord.hop_latency_s >= 0.0) {
            return Err(invalid("config.sord timings must be non-negative"));
        }
        if !(c.monitor.beacon_period_s > 0.0 && c.sim.sample_period_s > 0.0) {
            return Err(invalid("beacon and sample periods must be positive"));
        }
        if !(c.monitor.integrity_factor > 0.0) {
            return Err(invalid("config.monitor.integrity_factor must be positive"));
        }
        if !(c.sim.latency_jitter_s >= 0.0) {
            return Err(invalid("config.sim.latency_jitter_s must be non-negative"));
        }

        let w = &self.workload;
        if w.ttl > c.sord.ttl_max {
            return Err(invalid(format!(
                "workload.ttl={} exceeds config.sord.ttl_max={}",
                w.ttl, c.sord.ttl_max
            )));
        }
        if !(0.0..=1.0).contains(&w.min_confidence) {
            return Err(invalid("workload.min_confidence must lie in [0, 1]"));
        }
        let mut names = BTreeSet::new();
        for app in &w.apps {
            if app.name.is_empty() || app.version.is_empty() {
                return Err(invalid("apps need a non-empty name and version"));
            }
            if !names.insert(app.name.as_str()) {
                return Err(invalid(format!("duplicate app `{}`", app.name)));
            }
            if !(app.weight.is_finite() && app.weight >= 0.0) {
                return Err(invalid(format!("app `{}`: weight must be non-negative", app.name)));
            }
            if !(app.declared_demand_marks.is_finite() && app.declared_demand_marks > 0.0) {
                return Err(invalid(format!(
                    "app `{}`: declared_demand_marks must be positive",
                    app.name
                )));
            }
            if app.history.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                return Err(invalid(format!("app `{}`: history must be positive", app.name)));
            }
            app.true_demand.validate(&format!("app `{}` true_demand", app.name))?;
            app.turnaround_s.validate(&format!("app `{}` turnaround_s", app.name))?;
        }
        if let Arrivals::Poisson { rate_per_s } = w.arrivals {
            if !(rate_per_s.is_finite() && rate_per_s > 0.0) {
                return Err(invalid("poisson rate_per_s must be positive"));
            }
            if w.apps.iter().map(|a| a.weight).sum::<f64>() <= 0.0 {
                return Err(invalid("poisson arrivals need at least one app with positive weight"));
            }
        }
        for job in &w.jobs {
            if !(job.time.is_finite() && job.time >= 0.0) {
                return Err(invalid("job times must be non-negative"));
            }
            if !names.contains(job.app.as_str()) {
                return Err(invalid(format!("job refers to unknown app `{}`", job.app)));
            }
            if let Some(origin) = &job.origin {
                if !ids.contains(origin.as_str()) {
                    return Err(invalid(format!("job origin `{origin}` is not a node")));
                }
            }
            if job.true_demand_marks.is_some_and(|m| !(m.is_finite() && m > 0.0)) {
                return Err(invalid("job true_demand_marks must be positive"));
            }
            if job.turnaround_s.is_some_and(|m| !(m.is_finite() && m > 0.0)) {
                return Err(invalid("job turnaround_s must be positive"));
            }
        }
        Ok(())
    }
}
