//! Deterministic discrete-event simulator.
//!
//! A [`Scenario`] fully determines a run: every random draw comes from one
//! `ChaCha8Rng` seeded with the scenario seed, and events with equal times are
//! processed in insertion order. [`run`] returns the [`RunReport`] together with
//! the accounting log, a JSON-lines trace and a CSV time series of volatile
//! samples.
//!
//! Trace lines are tagged by `kind`: `arrival`, `query`, `reply`, `placement`,
//! `rejection`, `completion`, `miss`, `alert`, `sample` and `beacon`. Message
//! lines (query, reply, beacon) are written when the message is sent; message
//! counts in the report count sends.

pub mod execution;
pub mod scenario;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demand::{estimate_demand, on_time_confidence, record_run};
use crate::ledger::{Bid, LedgerError};
use crate::monitor::{
    emit_beacon, keys, sla_report, AccountingEvent, AccountingLog, BeaconTable, EventKind,
    IntegrityWatch, JobView, NodeStateBeacon, SlaReport,
};
use crate::profiles::{ApplicationProfile, ComputerProfile, RunRecord, VolatileSample};
use crate::sord::{
    build_overlay, rank_replies, BidReply, BidSource, Handled, Overlay, Query, QueryMessage,
    SordNode,
};
use crate::NonVolatileFacts;

pub use execution::{Completion, NodeRuntime, RunningJob, TIME_EPS};
pub use scenario::{
    AppSpec, Arrivals, Config, ConfigError, Dist, ExecutionModel, JobSpec, NodeSpec, OverlaySpec,
    Policy, Scenario, SimConfig, WorkloadSpec,
};

/// Header of the CSV time series.
pub const SERIES_HEADER: &str =
    "time,node_id,cpu_busy_fraction,subscribed_marks,running_jobs,consumed_marks";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Arrival {
        time: f64,
        job_id: String,
        app: String,
        origin: String,
        true_demand_marks: f64,
        booked_marks: f64,
        due_time: f64,
    },
    Query {
        time: f64,
        query_id: String,
        from: String,
        to: String,
        ttl: u32,
        hop_count: u32,
    },
    Reply {
        time: f64,
        query_id: String,
        from: String,
        to: String,
        hop_count: u32,
        unsubscribed_marks: f64,
        confidence: f64,
    },
    Placement {
        time: f64,
        job_id: String,
        node_id: String,
        attempt: u32,
    },
    Rejection {
        time: f64,
        job_id: String,
        reason: String,
    },
    Completion {
        time: f64,
        job_id: String,
        node_id: String,
        consumed_marks: f64,
    },
    Miss {
        time: f64,
        job_id: String,
        node_id: String,
        remaining_marks: f64,
    },
    Alert {
        time: f64,
        job_id: String,
        node_id: String,
        observed_marks: f64,
        threshold_marks: f64,
    },
    Sample {
        time: f64,
        node_id: String,
        cpu_busy_fraction: f64,
        subscribed_marks: f64,
    },
    Beacon {
        time: f64,
        from: String,
        to: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageCounts {
    pub query: u64,
    pub reply: u64,
    pub beacon: u64,
    pub total: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Jobs whose arrival fell inside the run.
    pub jobs_arrived: u64,
    pub admitted: u64,
    pub rejected: u64,
    pub completed: u64,
    /// Completions no later than the due time.
    pub on_time: u64,
    pub deadline_misses: u64,
    /// Admitted jobs still running at the end.
    pub unfinished: u64,
    /// Arrivals whose bid collection had not closed by the end.
    pub undecided: u64,
    /// Deadline misses per admitted job.
    pub miss_rate: f64,
    /// On-time completions per arrived job; rejections count against it.
    pub on_time_fraction: f64,
    pub integrity_alerts: u64,
    /// Second admission attempts after losing a race at the first choice.
    pub retries: u64,
    pub messages: MessageCounts,
    pub beacons_sent: u64,
    pub max_beacon_staleness_s: f64,
    pub accounting_events: u64,
    pub accounting_digest: String,
    pub trace_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node_id: String,
    pub utilization: f64,
    pub consumed_marks: f64,
    pub busy_time_s: f64,
    pub jobs_admitted: u64,
    pub jobs_completed: u64,
    pub beacons_sent: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppReport {
    pub name: String,
    pub app_id: String,
    pub runs: u64,
    /// What the app would book at the end of the run.
    pub final_booked_marks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub policy: Policy,
    pub execution_model: ExecutionModel,
    pub duration_s: f64,
    pub metrics: Metrics,
    pub sla: SlaReport,
    pub per_node: Vec<NodeReport>,
    pub apps: Vec<AppReport>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub log: AccountingLog,
    pub trace: Vec<TraceEvent>,
    /// CSV with [`SERIES_HEADER`], one row per node per sample tick.
    pub series: String,
    /// Application profiles with the runs recorded during the simulation.
    pub apps: Vec<ApplicationProfile>,
}

impl RunOutput {
    pub fn trace_jsonl(&self) -> String {
        trace_jsonl(&self.trace)
    }
}

fn trace_jsonl(trace: &[TraceEvent]) -> String {
    let mut out = String::new();
    for t in trace {
        out.push_str(&serde_json::to_string(t).expect("trace serializes"));
        out.push('\n');
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunOutput, ConfigError> {
    scenario.validate()?;
    let mut kernel = Kernel::new(scenario)?;
    kernel.run();
    Ok(kernel.finish())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Event {
    Arrival(usize),
    DeliverQuery(QueryMessage),
    DeliverReply { job: usize, reply: BidReply },
    DeliverBeacon { to: usize, beacon: NodeStateBeacon },
    Collect(usize),
    CompletionCheck { node: usize, version: u64 },
    DeadlineCheck(usize),
    SampleTick,
    BeaconTick,
}

struct Scheduled {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl Ord for Scheduled {
    // reversed so the max-heap pops the earliest (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct JobState {
    id: String,
    app_idx: usize,
    origin: usize,
    arrival: f64,
    true_demand: f64,
    due: f64,
    booked: f64,
    on_time_prob: f64,
    window: f64,
    replies: Vec<BidReply>,
    collected: bool,
    node: Option<usize>,
}

/// Bids the way the configured policy tells a node to.
struct NodeBidder<'a> {
    rt: &'a NodeRuntime,
    policy: Policy,
}

impl BidSource for NodeBidder<'_> {
    fn facts(&self) -> &NonVolatileFacts {
        &self.rt.profile.nonvolatile
    }

    fn bid(&self, window_s: f64) -> Bid {
        match self.policy {
            Policy::SubscribedLoad => self
                .rt
                .ledger
                .make_bid(window_s)
                .expect("query windows are positive"),
            Policy::SpotLoad => Bid {
                node_id: self.rt.node_id().to_string(),
                window_s,
                unsubscribed_marks: (1.0 - self.rt.profile.volatile.cpu_busy_fraction)
                    * self.rt.rate()
                    * window_s,
                confidence: self.rt.ledger.confidence(),
            },
        }
    }
}

#[derive(Default, Clone)]
struct NodeStats {
    admitted: u64,
    completed: u64,
    beacons: u64,
}

struct Kernel<'s> {
    sc: &'s Scenario,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    nodes: Vec<NodeRuntime>,
    sord: Vec<SordNode>,
    neighbors: Vec<Vec<usize>>,
    tables: Vec<BeaconTable>,
    versions: Vec<u64>,
    stats: Vec<NodeStats>,
    index: HashMap<String, usize>,
    apps: Vec<ApplicationProfile>,
    jobs: Vec<JobState>,
    watch: IntegrityWatch,
    log: AccountingLog,
    trace: Vec<TraceEvent>,
    series: String,
    m: Metrics,
}

impl<'s> Kernel<'s> {
    fn new(sc: &'s Scenario) -> Result<Self, ConfigError> {
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        let ids: Vec<String> = sc.nodes.iter().map(|n| n.node_id.clone()).collect();
        let overlay_seed: u64 = rng.gen();
        let overlay = if sc.overlay.k_close >= ids.len() {
            Overlay::complete(&ids)
        } else {
            build_overlay(&ids, sc.overlay.k_close, sc.overlay.k_far, overlay_seed)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?
        };

        let nodes: Vec<NodeRuntime> = sc
            .nodes
            .iter()
            .map(|n| NodeRuntime::new(ComputerProfile::new(n.node_id.clone(), n.facts.clone())))
            .collect();
        let neighbors: Vec<Vec<usize>> = (0..ids.len()).map(|i| overlay.neighbors(i)).collect();
        let sord = (0..ids.len())
            .map(|i| SordNode::new(ids[i].clone(), overlay.neighbor_ids(i)))
            .collect();
        let index = ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();

        let apps = sc
            .workload
            .apps
            .iter()
            .map(|a| {
                let mut p = ApplicationProfile::new(
                    &a.name,
                    &a.version,
                    a.requirements.clone(),
                    a.declared_demand_marks,
                )
                .map_err(|e| ConfigError::Invalid(format!("app `{}`: {e}", a.name)))?;
                p.ipc_level = a.ipc_level;
                for &marks in &a.history {
                    p = record_run(
                        p,
                        RunRecord {
                            demand_marks: marks,
                            wall_time_s: 1.0,
                            node_id: "history".into(),
                            timestamp: 0.0,
                        },
                    );
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;

        let n = nodes.len();
        let mut k = Kernel {
            sc,
            rng,
            queue: BinaryHeap::new(),
            seq: 0,
            nodes,
            sord,
            neighbors,
            tables: vec![BeaconTable::default(); n],
            versions: vec![0; n],
            stats: vec![NodeStats::default(); n],
            index,
            apps,
            jobs: Vec::new(),
            watch: IntegrityWatch::new(),
            log: AccountingLog::new(),
            trace: Vec::new(),
            series: format!("{SERIES_HEADER}\n"),
            m: Metrics::default(),
        };
        k.generate_jobs();
        Ok(k)
    }

    fn generate_jobs(&mut self) {
        let sc = self.sc;
        let w = &sc.workload;
        let n = self.nodes.len();
        let app_idx: HashMap<&str, usize> = w
            .apps
            .iter()
            .enumerate()
            .map(|(i, a)| (a.name.as_str(), i))
            .collect();
        // (time, app, origin, true demand, turnaround)
        let mut specs: Vec<(f64, usize, usize, f64, f64)> = Vec::new();
        for j in &w.jobs {
            let a = app_idx[j.app.as_str()];
            let origin = match &j.origin {
                Some(o) => self.index[o],
                None => self.rng.gen_range(0..n),
            };
            let demand = match j.true_demand_marks {
                Some(d) => d,
                None => w.apps[a].true_demand.sample(&mut self.rng),
            };
            let turnaround = match j.turnaround_s {
                Some(t) => t,
                None => w.apps[a].turnaround_s.sample(&mut self.rng),
            };
            specs.push((j.time, a, origin, demand, turnaround));
        }
        if let Arrivals::Poisson { rate_per_s } = w.arrivals {
            let gap = Exp::new(rate_per_s).expect("validated rate");
            let pick =
                WeightedIndex::new(w.apps.iter().map(|a| a.weight)).expect("validated weights");
            let mut t = 0.0;
            loop {
                t += gap.sample(&mut self.rng);
                if t >= sc.duration_s {
                    break;
                }
                let a = pick.sample(&mut self.rng);
                let origin = self.rng.gen_range(0..n);
                let demand = w.apps[a].true_demand.sample(&mut self.rng);
                let turnaround = w.apps[a].turnaround_s.sample(&mut self.rng);
                specs.push((t, a, origin, demand, turnaround));
            }
        }
        specs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (i, (time, app_idx, origin, true_demand, window)) in specs.into_iter().enumerate() {
            self.jobs.push(JobState {
                id: format!("job-{i:05}"),
                app_idx,
                origin,
                arrival: time,
                true_demand,
                due: time + window,
                booked: 0.0,
                on_time_prob: 0.0,
                window,
                replies: Vec::new(),
                collected: false,
                node: None,
            });
            self.push(time, Event::Arrival(i));
        }
    }

    fn push(&mut self, time: f64, event: Event) {
        self.queue.push(Scheduled {
            time,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }

    fn latency(&mut self) -> f64 {
        let s = &self.sc.config;
        let jitter = s.sim.latency_jitter_s;
        let extra = if jitter > 0.0 {
            self.rng.gen::<f64>() * jitter
        } else {
            0.0
        };
        s.sord.hop_latency_s + extra
    }

    fn append(&mut self, e: AccountingEvent) {
        self.log
            .append(e)
            .expect("the kernel logs each node's events in time order");
    }

    fn run(&mut self) {
        let sc = self.sc;
        let period = sc.config.sim.sample_period_s;
        for k in 1..=ticks(sc.duration_s, period) {
            self.push(k as f64 * period, Event::SampleTick);
        }
        let beacon = sc.config.monitor.beacon_period_s;
        for k in 1..=ticks(sc.duration_s, beacon) {
            self.push(k as f64 * beacon, Event::BeaconTick);
        }

        while let Some(next) = self.queue.pop() {
            if next.time > sc.duration_s {
                break;
            }
            self.dispatch(next.time, next.event);
        }
        for i in 0..self.nodes.len() {
            self.advance_node(i, sc.duration_s);
        }
    }

    fn dispatch(&mut self, now: f64, event: Event) {
        match event {
            Event::Arrival(j) => self.on_arrival(now, j),
            Event::DeliverQuery(msg) => self.on_query(now, msg),
            Event::DeliverReply { job, reply } => {
                // replies after the collect deadline are dropped
                if !self.jobs[job].collected {
                    self.jobs[job].replies.push(reply);
                }
            }
            Event::DeliverBeacon { to, beacon } => {
                self.tables[to].receive(beacon, now);
            }
            Event::Collect(j) => self.on_collect(now, j),
            Event::CompletionCheck { node, version } => {
                if self.versions[node] == version {
                    self.advance_node(node, now);
                }
            }
            Event::DeadlineCheck(j) => self.on_deadline(now, j),
            Event::SampleTick => self.on_sample(now),
            Event::BeaconTick => self.on_beacon(now),
        }
    }

    /// Brings a node's execution up to `t`, logging any completions.
    fn advance_node(&mut self, i: usize, t: f64) {
        let done = self.nodes[i].advance_to(t, self.sc.execution_model);
        if done.is_empty() {
            return;
        }
        for c in done {
            self.on_completion(i, c);
        }
        self.reschedule_completion(i);
    }

    fn reschedule_completion(&mut self, i: usize) {
        self.versions[i] += 1;
        if let Some(t) = self.nodes[i].next_completion(self.sc.execution_model) {
            let version = self.versions[i];
            self.push(t, Event::CompletionCheck { node: i, version });
        }
    }

    fn on_completion(&mut self, i: usize, c: Completion) {
        let app_idx = c.job.app_idx;
        let node_id = self.nodes[i].node_id().to_string();
        self.m.completed += 1;
        self.stats[i].completed += 1;
        if c.time <= c.job.due_time {
            self.m.on_time += 1;
        }
        self.trace.push(TraceEvent::Completion {
            time: c.time,
            job_id: c.job.job_id.clone(),
            node_id: node_id.clone(),
            consumed_marks: c.job.consumed_marks,
        });
        let app_id = self.apps[app_idx].app_id.clone();
        self.append(
            AccountingEvent::new(c.time, EventKind::JobCompleted, node_id.clone())
                .job(c.job.job_id.clone())
                .with(keys::APP_ID, app_id)
                .with(keys::ARRIVAL, c.job.arrival_time)
                .with(keys::DUE, c.job.due_time)
                .with(keys::BOOKED, c.job.booked_marks)
                .with(keys::ACTUAL, c.job.consumed_marks),
        );
        self.apps[app_idx] = record_run(
            self.apps[app_idx].clone(),
            RunRecord {
                demand_marks: c.job.consumed_marks,
                wall_time_s: (c.time - c.job.admitted_at).max(TIME_EPS),
                node_id,
                timestamp: c.time,
            },
        );
    }

    fn job_index(&self, job_id: &str) -> usize {
        job_id
            .strip_prefix("job-")
            .and_then(|n| n.parse().ok())
            .expect("kernel job ids are job-NNNNN")
    }

    fn on_arrival(&mut self, now: f64, j: usize) {
        let sc = self.sc;
        let origin = self.jobs[j].origin;
        self.advance_node(origin, now);
        let dcfg = &sc.config.demand;
        let app = &self.apps[self.jobs[j].app_idx];
        let booked = estimate_demand(app, dcfg.quantile, dcfg)
            .expect("validated quantile")
            .booked_marks;
        let p = on_time_confidence(app, booked, dcfg);
        let requirements = app.requirements.clone();
        let job = &mut self.jobs[j];
        job.booked = booked;
        job.on_time_prob = p;
        self.m.jobs_arrived += 1;
        self.trace.push(TraceEvent::Arrival {
            time: now,
            job_id: job.id.clone(),
            app: sc.workload.apps[job.app_idx].name.clone(),
            origin: self.nodes[origin].node_id().to_string(),
            true_demand_marks: job.true_demand,
            booked_marks: booked,
            due_time: job.due,
        });
        let q = Query {
            query_id: job.id.clone(),
            origin: self.nodes[origin].node_id().to_string(),
            requirements,
            demand_marks: booked,
            window_s: job.window,
            ttl: sc.workload.ttl,
            min_confidence: sc.workload.min_confidence,
        };
        let bidder = NodeBidder {
            rt: &self.nodes[origin],
            policy: sc.policy,
        };
        let handled = self.sord[origin].start_query(&bidder, &q);
        // the origin's own bid needs no message
        if let Some(r) = handled.reply {
            self.jobs[j].replies.push(r);
        }
        self.send_forwards(now, handled.forwards);
        self.push(now + sc.config.sord.collect_timeout_s, Event::Collect(j));
    }

    fn send_forwards(&mut self, now: f64, forwards: Vec<QueryMessage>) {
        for f in forwards {
            self.m.messages.query += 1;
            self.trace.push(TraceEvent::Query {
                time: now,
                query_id: f.query.query_id.clone(),
                from: f.from.clone(),
                to: f.to.clone(),
                ttl: f.query.ttl,
                hop_count: f.hop_count,
            });
            let at = now + self.latency();
            self.push(at, Event::DeliverQuery(f));
        }
    }

    fn on_query(&mut self, now: f64, msg: QueryMessage) {
        let i = self.index[&msg.to];
        self.advance_node(i, now);
        let bidder = NodeBidder {
            rt: &self.nodes[i],
            policy: self.sc.policy,
        };
        let Handled { reply, forwards } = self.sord[i].handle_query(&bidder, &msg);
        if let Some(reply) = reply {
            let job = self.job_index(&reply.query_id);
            self.m.messages.reply += 1;
            self.trace.push(TraceEvent::Reply {
                time: now,
                query_id: reply.query_id.clone(),
                from: msg.to.clone(),
                to: msg.query.origin.clone(),
                hop_count: reply.hop_count,
                unsubscribed_marks: reply.bid.unsubscribed_marks,
                confidence: reply.bid.confidence,
            });
            let at = now + self.latency();
            self.push(at, Event::DeliverReply { job, reply });
        }
        self.send_forwards(now, forwards);
    }

    fn on_collect(&mut self, now: f64, j: usize) {
        self.jobs[j].collected = true;
        let candidates: Vec<usize> = rank_replies(&self.jobs[j].replies)
            .into_iter()
            .map(|r| self.index[&r.bid.node_id])
            .collect();
        let attempts = match self.sc.policy {
            Policy::SubscribedLoad => 2,
            Policy::SpotLoad => 1,
        };
        let mut reason = "no_eligible_node";
        for (attempt, &i) in candidates.iter().take(attempts).enumerate() {
            if attempt > 0 {
                self.m.retries += 1;
            }
            self.advance_node(i, now);
            let job = &self.jobs[j];
            let app_id = self.apps[job.app_idx].app_id.clone();
            let ledger = &mut self.nodes[i].ledger;
            let res = match self.sc.policy {
                Policy::SubscribedLoad => {
                    ledger.admit(&job.id, &app_id, job.booked, job.due, job.on_time_prob)
                }
                Policy::SpotLoad => {
                    ledger.admit_unchecked(&job.id, &app_id, job.booked, job.due, job.on_time_prob)
                }
            };
            match res {
                Ok(()) => {
                    self.place(now, j, i, attempt as u32 + 1);
                    return;
                }
                Err(LedgerError::PastDeadline { .. }) => {
                    reason = "past_deadline";
                    break;
                }
                Err(_) => reason = "admission_race",
            }
        }
        self.reject(now, j, reason);
    }

    fn place(&mut self, now: f64, j: usize, i: usize, attempt: u32) {
        let job = &mut self.jobs[j];
        job.node = Some(i);
        let running = RunningJob {
            job_id: job.id.clone(),
            app_idx: job.app_idx,
            true_demand_marks: job.true_demand,
            consumed_marks: 0.0,
            due_time: job.due,
            booked_marks: job.booked,
            arrival_time: job.arrival,
            admitted_at: now,
            order: 0,
            in_ledger: true,
            missed: false,
        };
        let (id, due, arrival, booked, p) =
            (job.id.clone(), job.due, job.arrival, job.booked, job.on_time_prob);
        self.nodes[i].start_job(running);
        self.m.admitted += 1;
        self.stats[i].admitted += 1;
        let node_id = self.nodes[i].node_id().to_string();
        self.trace.push(TraceEvent::Placement {
            time: now,
            job_id: id.clone(),
            node_id: node_id.clone(),
            attempt,
        });
        let app_id = self.apps[self.jobs[j].app_idx].app_id.clone();
        self.append(
            AccountingEvent::new(now, EventKind::JobAdmitted, node_id)
                .job(id)
                .with(keys::APP_ID, app_id)
                .with(keys::ARRIVAL, arrival)
                .with(keys::DUE, due)
                .with(keys::BOOKED, booked)
                .with(keys::ON_TIME_PROB, p),
        );
        self.push(due, Event::DeadlineCheck(j));
        self.reschedule_completion(i);
    }

    fn reject(&mut self, now: f64, j: usize, reason: &str) {
        let origin = self.jobs[j].origin;
        self.advance_node(origin, now);
        let job = &self.jobs[j];
        self.m.rejected += 1;
        self.trace.push(TraceEvent::Rejection {
            time: now,
            job_id: job.id.clone(),
            reason: reason.to_string(),
        });
        let e = AccountingEvent::new(now, EventKind::JobRejected, self.nodes[origin].node_id())
            .job(job.id.clone())
            .with(keys::APP_ID, self.apps[job.app_idx].app_id.clone())
            .with(keys::ARRIVAL, job.arrival)
            .with(keys::DUE, job.due)
            .with(keys::BOOKED, job.booked)
            .with(keys::REASON, reason);
        self.append(e);
    }

    fn on_deadline(&mut self, now: f64, j: usize) {
        let Some(i) = self.jobs[j].node else {
            return;
        };
        self.advance_node(i, now);
        let id = self.jobs[j].id.clone();
        let Some(rj) = self.nodes[i].jobs.iter_mut().find(|r| r.job_id == id) else {
            return;
        };
        rj.missed = true;
        let remaining = rj.remaining();
        self.m.deadline_misses += 1;
        self.trace.push(TraceEvent::Miss {
            time: now,
            job_id: id.clone(),
            node_id: self.nodes[i].node_id().to_string(),
            remaining_marks: remaining,
        });
        let job = &self.jobs[j];
        let e = AccountingEvent::new(now, EventKind::JobMissedDeadline, self.nodes[i].node_id())
            .job(id)
            .with(keys::APP_ID, self.apps[job.app_idx].app_id.clone())
            .with(keys::ARRIVAL, job.arrival)
            .with(keys::DUE, job.due)
            .with(keys::BOOKED, job.booked)
            .with("remaining_marks", remaining);
        self.append(e);
    }

    fn on_sample(&mut self, now: f64) {
        let sc = self.sc;
        let period = sc.config.sim.sample_period_s;
        for i in 0..self.nodes.len() {
            self.advance_node(i, now);
            let rt = &mut self.nodes[i];
            let busy = rt.take_busy_fraction(period);
            let sample = VolatileSample {
                timestamp: now,
                cpu_busy_fraction: busy,
                free_memory_mb: rt.profile.nonvolatile.memory_mb,
                subscribed_marks: rt.ledger.subscribed_marks(),
            };
            rt.profile = rt
                .profile
                .clone()
                .update_volatile(sample)
                .expect("samples are taken in time order");
            let _ = writeln!(
                self.series,
                "{now},{},{busy},{},{},{}",
                rt.node_id(),
                rt.ledger.subscribed_marks(),
                rt.jobs.len(),
                rt.consumed_marks
            );
            self.trace.push(TraceEvent::Sample {
                time: now,
                node_id: rt.node_id().to_string(),
                cpu_busy_fraction: busy,
                subscribed_marks: rt.ledger.subscribed_marks(),
            });

            let mut alerts = Vec::new();
            for job in &rt.jobs {
                let view = JobView {
                    node_id: rt.node_id(),
                    job_id: &job.job_id,
                    consumed_marks: job.consumed_marks,
                };
                if let Some(a) = self.watch.integrity_check(
                    view,
                    &self.apps[job.app_idx],
                    now,
                    &sc.config.demand,
                    &sc.config.monitor,
                ) {
                    alerts.push((a, job.app_idx));
                }
            }
            for (a, app_idx) in alerts {
                self.m.integrity_alerts += 1;
                self.trace.push(TraceEvent::Alert {
                    time: now,
                    job_id: a.job_id.clone(),
                    node_id: a.node_id.clone(),
                    observed_marks: a.observed_marks,
                    threshold_marks: a.threshold_marks,
                });
                let e = AccountingEvent::new(now, EventKind::IntegrityAlert, a.node_id)
                    .job(a.job_id)
                    .with(keys::APP_ID, self.apps[app_idx].app_id.clone())
                    .with(keys::OBSERVED, a.observed_marks)
                    .with(keys::THRESHOLD, a.threshold_marks);
                self.append(e);
            }
        }
    }

    fn on_beacon(&mut self, now: f64) {
        for i in 0..self.nodes.len() {
            self.advance_node(i, now);
            let beacon = emit_beacon(&self.nodes[i].profile, &self.nodes[i].ledger, now);
            self.stats[i].beacons += 1;
            self.m.beacons_sent += 1;
            for to in self.neighbors[i].clone() {
                self.m.messages.beacon += 1;
                self.trace.push(TraceEvent::Beacon {
                    time: now,
                    from: beacon.node_id.clone(),
                    to: self.nodes[to].node_id().to_string(),
                });
                let at = now + self.latency();
                self.push(
                    at,
                    Event::DeliverBeacon {
                        to,
                        beacon: beacon.clone(),
                    },
                );
            }
        }
    }

    fn finish(self) -> RunOutput {
        let sc = self.sc;
        let mut m = self.m;
        m.unfinished = self.nodes.iter().map(|n| n.jobs.len() as u64).sum();
        m.undecided = m.jobs_arrived - m.admitted - m.rejected;
        m.miss_rate = ratio(m.deadline_misses, m.admitted);
        m.on_time_fraction = ratio(m.on_time, m.jobs_arrived);
        m.messages.total = m.messages.query + m.messages.reply + m.messages.beacon;
        m.max_beacon_staleness_s = self
            .tables
            .iter()
            .map(BeaconTable::max_staleness_s)
            .fold(0.0, f64::max);
        m.accounting_events = self.log.len() as u64;
        m.accounting_digest = sha256_hex(self.log.to_jsonl().as_bytes());
        m.trace_digest = sha256_hex(trace_jsonl(&self.trace).as_bytes());

        let per_node = self
            .nodes
            .iter()
            .zip(&self.stats)
            .map(|(n, s)| NodeReport {
                node_id: n.node_id().to_string(),
                utilization: n.busy_time / sc.duration_s,
                consumed_marks: n.consumed_marks,
                busy_time_s: n.busy_time,
                jobs_admitted: s.admitted,
                jobs_completed: s.completed,
                beacons_sent: s.beacons,
            })
            .collect();
        let dcfg = &sc.config.demand;
        let apps = sc
            .workload
            .apps
            .iter()
            .zip(&self.apps)
            .map(|(spec, p)| AppReport {
                name: spec.name.clone(),
                app_id: p.app_id.clone(),
                runs: p.history.len() as u64,
                final_booked_marks: estimate_demand(p, dcfg.quantile, dcfg)
                    .expect("validated quantile")
                    .booked_marks,
            })
            .collect();
        let report = RunReport {
            name: sc.name.clone(),
            seed: sc.seed,
            policy: sc.policy,
            execution_model: sc.execution_model,
            duration_s: sc.duration_s,
            metrics: m,
            sla: sla_report(&self.log, None),
            per_node,
            apps,
        };
        RunOutput {
            report,
            log: self.log,
            trace: self.trace,
            series: self.series,
            apps: self.apps,
        }
    }
}

fn ticks(duration: f64, period: f64) -> u64 {
    // tolerate 600 / 5 landing a hair under 120
    (duration / period + 1e-9).floor() as u64
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}
