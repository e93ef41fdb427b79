//! Three-tier monitoring.
//!
//! * Tier 1, accounting: an append-only [`AccountingLog`] written only on job
//!   admission, completion, rejection, deadline miss, integrity alert and policy
//!   update. Persisted as JSON lines; [`sla_report`] aggregates it.
//! * Tier 2, volatile state: every node periodically sends a
//!   [`NodeStateBeacon`] to its overlay neighbours.
//! * Tier 3, integrity: [`IntegrityWatch`] flags jobs consuming far more than
//!   their profile predicts, once per job.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::demand::{estimate_demand, DemandConfig};
use crate::ledger::LoadLedger;
use crate::profiles::{ApplicationProfile, ComputerProfile};

/// Window used for the unsubscribed-capacity figure carried in beacons.
pub const BEACON_WINDOW_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("event at {timestamp} for node `{node_id}` precedes its previous event at {last}")]
    OutOfOrder {
        node_id: String,
        timestamp: f64,
        last: f64,
    },
    #[error("bad accounting log line {line}: {reason}")]
    BadLine { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub beacon_period_s: f64,
    pub integrity_factor: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            beacon_period_s: 5.0,
            integrity_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    JobAdmitted,
    JobCompleted,
    JobMissedDeadline,
    JobRejected,
    IntegrityAlert,
    PolicyUpdate,
}

/// Payload keys used by the simulator.
pub mod keys {
    pub const APP_ID: &str = "app_id";
    pub const ARRIVAL: &str = "arrival_time";
    pub const DUE: &str = "due_time";
    pub const BOOKED: &str = "booked_marks";
    pub const ACTUAL: &str = "actual_marks";
    pub const ON_TIME_PROB: &str = "on_time_prob";
    pub const OBSERVED: &str = "observed_marks";
    pub const THRESHOLD: &str = "threshold_marks";
    pub const REASON: &str = "reason";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountingEvent {
    /// Assigned on append.
    #[serde(default)]
    pub seq: u64,
    pub timestamp: f64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    pub node_id: String,
    #[serde(default)]
    pub payload: BTreeMap<String, Value>,
}

impl AccountingEvent {
    pub fn new(timestamp: f64, kind: EventKind, node_id: impl Into<String>) -> Self {
        AccountingEvent {
            seq: 0,
            timestamp,
            kind,
            job_id: None,
            node_id: node_id.into(),
            payload: BTreeMap::new(),
        }
    }

    pub fn job(mut self, job_id: impl Into<String>) -> Self {
        self.job_id = Some(job_id.into());
        self
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.payload.insert(key.to_string(), value.into());
        self
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.payload.get(key).and_then(Value::as_f64)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }
}

/// Append-only tier-1 log. Timestamps must not go backwards within a node's
/// stream; sequence numbers are global and dense.
#[derive(Debug, Clone, Default)]
pub struct AccountingLog {
    events: Vec<AccountingEvent>,
    last_by_node: HashMap<String, f64>,
}

impl AccountingLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, mut e: AccountingEvent) -> Result<u64, MonitorError> {
        if let Some(&last) = self.last_by_node.get(&e.node_id) {
            if e.timestamp < last {
                return Err(MonitorError::OutOfOrder {
                    node_id: e.node_id,
                    timestamp: e.timestamp,
                    last,
                });
            }
        }
        let seq = self.events.len() as u64;
        e.seq = seq;
        self.last_by_node.insert(e.node_id.clone(), e.timestamp);
        self.events.push(e);
        Ok(seq)
    }

    pub fn events(&self) -> &[AccountingEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// One JSON object per line, in sequence order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    /// Rebuilds a log, re-checking ordering and re-assigning sequence numbers.
    pub fn from_jsonl(text: &str) -> Result<Self, MonitorError> {
        let mut log = AccountingLog::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: AccountingEvent = serde_json::from_str(line).map_err(|err| MonitorError::BadLine {
                line: i + 1,
                reason: err.to_string(),
            })?;
            log.append(e)?;
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppSla {
    /// Jobs admitted.
    pub jobs: u64,
    pub completed: u64,
    pub on_time: u64,
    pub missed: u64,
    pub rejected: u64,
    /// On-time completions over jobs that completed or missed their due time.
    pub on_time_fraction: f64,
    pub mean_turnaround_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlaReport {
    pub horizon: Option<f64>,
    pub apps: BTreeMap<String, AppSla>,
}

impl SlaReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "app_id,jobs,completed,on_time,missed,rejected,on_time_fraction,mean_turnaround_s\n",
        );
        for (app, s) in &self.apps {
            let _ = writeln!(
                out,
                "{app},{},{},{},{},{},{:.6},{:.6}",
                s.jobs, s.completed, s.on_time, s.missed, s.rejected, s.on_time_fraction,
                s.mean_turnaround_s
            );
        }
        out
    }
}

/// Per-application SLA summary over events with `timestamp <= horizon`
/// (all events when `horizon` is `None`).
pub fn sla_report(log: &AccountingLog, horizon: Option<f64>) -> SlaReport {
    #[derive(Default)]
    struct Acc {
        sla: AppSla,
        resolved: BTreeSet<String>,
        late: BTreeSet<String>,
        on_time: BTreeSet<String>,
        turnaround_sum: f64,
    }
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    for e in log.events() {
        if horizon.is_some_and(|h| e.timestamp > h) {
            continue;
        }
        let Some(app) = e.text(keys::APP_ID) else {
            continue;
        };
        let a = acc.entry(app.to_string()).or_default();
        let job = e.job_id.clone().unwrap_or_default();
        match e.kind {
            EventKind::JobAdmitted => a.sla.jobs += 1,
            EventKind::JobRejected => a.sla.rejected += 1,
            EventKind::JobMissedDeadline => {
                a.sla.missed += 1;
                a.on_time.remove(&job);
                a.late.insert(job.clone());
                a.resolved.insert(job);
            }
            EventKind::JobCompleted => {
                a.sla.completed += 1;
                if let Some(arrival) = e.number(keys::ARRIVAL) {
                    a.turnaround_sum += e.timestamp - arrival;
                }
                let due = e.number(keys::DUE).unwrap_or(f64::INFINITY);
                if e.timestamp <= due && !a.late.contains(&job) {
                    a.on_time.insert(job.clone());
                }
                a.resolved.insert(job);
            }
            EventKind::IntegrityAlert | EventKind::PolicyUpdate => {}
        }
    }
    let apps = acc
        .into_iter()
        .map(|(app, mut a)| {
            a.sla.on_time = a.on_time.len() as u64;
            if !a.resolved.is_empty() {
                a.sla.on_time_fraction = a.on_time.len() as f64 / a.resolved.len() as f64;
            }
            if a.sla.completed > 0 {
                a.sla.mean_turnaround_s = a.turnaround_sum / a.sla.completed as f64;
            }
            (app, a.sla)
        })
        .collect();
    SlaReport { horizon, apps }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStateBeacon {
    pub node_id: String,
    pub timestamp: f64,
    pub cpu_busy_fraction: f64,
    pub subscribed_marks: f64,
    pub unsubscribed_1min_marks: f64,
}

/// Snapshot of a node's last volatile sample and its ledger at `now`.
pub fn emit_beacon(profile: &ComputerProfile, ledger: &LoadLedger, now: f64) -> NodeStateBeacon {
    NodeStateBeacon {
        node_id: profile.node_id.clone(),
        timestamp: now,
        cpu_busy_fraction: profile.volatile.cpu_busy_fraction,
        subscribed_marks: ledger.subscribed_marks(),
        unsubscribed_1min_marks: ledger
            .unsubscribed(BEACON_WINDOW_S)
            .expect("beacon window is positive"),
    }
}

/// Latest beacon per sender, as seen by one receiver.
#[derive(Debug, Clone, Default)]
pub struct BeaconTable {
    latest: BTreeMap<String, NodeStateBeacon>,
    max_staleness_s: f64,
}

impl BeaconTable {
    /// Stores the beacon. Returns how old the previous beacon from the same
    /// sender was at this arrival.
    pub fn receive(&mut self, beacon: NodeStateBeacon, now: f64) -> Option<f64> {
        let age = self
            .latest
            .get(&beacon.node_id)
            .map(|prev| now - prev.timestamp);
        if let Some(age) = age {
            self.max_staleness_s = self.max_staleness_s.max(age);
        }
        self.latest.insert(beacon.node_id.clone(), beacon);
        age
    }

    pub fn get(&self, node_id: &str) -> Option<&NodeStateBeacon> {
        self.latest.get(node_id)
    }

    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }

    /// Largest age a stored beacon reached before being replaced.
    pub fn max_staleness_s(&self) -> f64 {
        self.max_staleness_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrityAlert {
    pub node_id: String,
    pub job_id: String,
    pub observed_marks: f64,
    pub threshold_marks: f64,
    pub timestamp: f64,
}

/// What the watchdog sees of a running job.
#[derive(Debug, Clone, Copy)]
pub struct JobView<'a> {
    pub node_id: &'a str,
    pub job_id: &'a str,
    pub consumed_marks: f64,
}

/// Per-node overconsumption watchdog.
#[derive(Debug, Clone, Default)]
pub struct IntegrityWatch {
    alerted: BTreeSet<String>,
}

impl IntegrityWatch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Alerts when a job has consumed more than `integrity_factor` times the
    /// demand its profile currently books. A job alerts at most once.
    pub fn integrity_check(
        &mut self,
        job: JobView<'_>,
        profile: &ApplicationProfile,
        now: f64,
        demand: &DemandConfig,
        cfg: &MonitorConfig,
    ) -> Option<IntegrityAlert> {
        if self.alerted.contains(job.job_id) {
            return None;
        }
        let booked = estimate_demand(profile, demand.quantile, demand)
            .ok()?
            .booked_marks;
        let threshold = cfg.integrity_factor * booked;
        if job.consumed_marks <= threshold {
            return None;
        }
        self.alerted.insert(job.job_id.to_string());
        Some(IntegrityAlert {
            node_id: job.node_id.to_string(),
            job_id: job.job_id.to_string(),
            observed_marks: job.consumed_marks,
            threshold_marks: threshold,
            timestamp: now,
        })
    }

    pub fn alerted(&self, job_id: &str) -> bool {
        self.alerted.contains(job_id)
    }
}
