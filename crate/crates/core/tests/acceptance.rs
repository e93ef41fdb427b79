//! Acceptance criteria 1-11. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use gridsched::demand::{estimate_demand, on_time_confidence, record_run, DemandConfig};
use gridsched::ledger::{LedgerError, LoadLedger};
use gridsched::monitor::EventKind;
use gridsched::profiles::{
    compute_app_id, parse_application_profile, parse_computer_profile,
    serialize_application_profile, serialize_computer_profile, ApplicationProfile,
    ComputerProfile, IpcLevel, NonVolatileFacts, RunRecord, VolatileSample,
};
use gridsched::simkernel::{
    self, AppSpec, Arrivals, Dist, ExecutionModel, NodeSpec, OverlaySpec, Policy, RunOutput,
    Scenario, TraceEvent, WorkloadSpec,
};
use gridsched::sord::{build_overlay, discover, LedgerBidder, Query, SordConfig, TraceEntry};
use gridsched::NonVolatileRequirements;

use common::{exhaustive_winner, sha256_hex, PlainBid, SlotOracle, Z_090};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    if took > limit {
        Err(format!("took {took:.1?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

// 1 -----------------------------------------------------------------------

fn feasibility_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut feasible = 0;
    for case in 0..10_000 {
        let rate = rng.gen_range(1..=4u32);
        let now = if rng.gen_bool(0.75) { 0 } else { rng.gen_range(1..=3u32) };
        let n = rng.gen_range(1..=4usize);
        let jobs: Vec<(u32, u32)> = (0..n)
            .map(|_| (rng.gen_range(1..=20u32), rng.gen_range(1..=20u32)))
            .collect();

        let mut ledger = LoadLedger::new("n", rate as f64, 0.0).unwrap();
        for (i, &(marks, due)) in jobs.iter().enumerate() {
            ledger
                .admit_unchecked(&format!("j{i}"), "app", marks as f64, due as f64, 1.0)
                .unwrap();
        }
        ledger.advance_time(now as f64).unwrap();

        let want = SlotOracle::feasible(rate, now, &jobs);
        ensure!(
            ledger.is_feasible() == want,
            "case {case}: rate {rate} now {now} jobs {jobs:?}: ledger {} oracle {want}",
            ledger.is_feasible()
        );
        feasible += want as u32;
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!("10000 instances agree, {feasible} feasible"))
}

// 2 -----------------------------------------------------------------------

fn random_ledger(rng: &mut ChaCha8Rng) -> LoadLedger {
    let rate = rng.gen_range(1.0..100.0);
    let now = rng.gen_range(0.0..50.0);
    let mut l = LoadLedger::new("n", rate, now).unwrap();
    for i in 0..rng.gen_range(0..=6) {
        let due = now + rng.gen_range(0.5..60.0);
        let booked = rng.gen_range(1.0..rate * 20.0);
        let p = rng.gen_range(0.5..=1.0);
        match l.admit(&format!("c{i}"), "app", booked, due, p) {
            Ok(()) | Err(LedgerError::Rejected(_)) => {}
            Err(e) => panic!("unexpected {e}"),
        }
    }
    let ids: Vec<String> = l.commitments.iter().map(|c| c.job_id.clone()).collect();
    for id in ids {
        if rng.gen_bool(0.4) {
            l.consume(&id, rng.gen_range(0.0..rate * 5.0)).unwrap();
        }
    }
    let t = l.now + rng.gen_range(0.0..2.0);
    l.advance_time(t).unwrap();
    l
}

fn unsubscribed_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut zero = 0;
    for case in 0..1000 {
        let l = random_ledger(&mut rng);
        let w = rng.gen_range(0.1..80.0);
        let u = l.unsubscribed(w).unwrap();
        let due = l.now + w;
        let eps = 1e-6 * l.rate * w;
        if u > 0.0 {
            let mut fits = l.clone();
            ensure!(
                fits.admit("probe", "app", u, due, 1.0).is_ok(),
                "case {case}: admitting unsubscribed {u} at w {w} failed"
            );
        } else {
            zero += 1;
        }
        let mut over = l.clone();
        ensure!(
            matches!(over.admit("probe", "app", u + eps, due, 1.0), Err(LedgerError::Rejected(_))),
            "case {case}: admitting {u} + {eps} at w {w} was not rejected"
        );
    }
    within(Duration::from_secs(10), start)?;
    Ok(format!("1000 ledgers, {zero} with no spare capacity"))
}

// 3 -----------------------------------------------------------------------

fn node(id: String, rate: f64) -> NodeSpec {
    NodeSpec {
        node_id: id,
        facts: NonVolatileFacts {
            os: "linux".into(),
            arch: "x86_64".into(),
            memory_mb: 4096,
            capacity_marks_per_s: rate,
            libraries: BTreeSet::new(),
            hardware_features: BTreeSet::new(),
        },
    }
}

fn safety_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let nodes = (0..8)
        .map(|i| node(format!("s{i}"), rng.gen_range(20.0..120.0)))
        .collect();
    let apps = (0..rng.gen_range(1..=3))
        .map(|a| {
            let lo = rng.gen_range(100.0..1500.0);
            let hi = lo * rng.gen_range(1.0..2.5);
            let t_lo = rng.gen_range(10.0..60.0);
            AppSpec {
                name: format!("app{a}"),
                version: "1".into(),
                weight: 1.0,
                ipc_level: IpcLevel::None,
                requirements: NonVolatileRequirements::default(),
                declared_demand_marks: hi,
                // with q = 1 the booking is the largest run ever seen, so no
                // job can need more than it booked
                history: vec![hi],
                true_demand: Dist::Uniform { lo, hi },
                turnaround_s: Dist::Uniform { lo: t_lo, hi: t_lo * 3.0 },
            }
        })
        .collect();
    let mut s = Scenario {
        name: format!("safety-{seed}"),
        seed,
        duration_s: 600.0,
        policy: Policy::SubscribedLoad,
        execution_model: ExecutionModel::Edf,
        overlay: OverlaySpec { k_close: 2, k_far: 1 },
        nodes,
        workload: WorkloadSpec {
            apps,
            arrivals: Arrivals::Poisson {
                rate_per_s: rng.gen_range(0.05..0.3),
            },
            jobs: Vec::new(),
            ttl: 3,
            min_confidence: 0.0,
        },
        config: Default::default(),
    };
    s.config.demand.quantile = 1.0;
    s
}

fn ledger_safety() -> Outcome {
    let start = Instant::now();
    let (mut placed, mut rejected) = (0, 0);
    for seed in 0..100 {
        let s = safety_scenario(seed);
        let out = simkernel::run(&s).map_err(|e| e.to_string())?;
        let mut due = HashMap::new();
        let mut misses = 0;
        for t in &out.trace {
            match t {
                TraceEvent::Arrival { job_id, true_demand_marks, booked_marks, due_time, .. } => {
                    ensure!(
                        true_demand_marks <= booked_marks,
                        "seed {seed}: {job_id} needs {true_demand_marks} but booked {booked_marks}"
                    );
                    due.insert(job_id.clone(), *due_time);
                }
                TraceEvent::Completion { time, job_id, .. } => {
                    ensure!(*time <= due[job_id], "seed {seed}: {job_id} finished late at {time}");
                }
                TraceEvent::Miss { .. } => misses += 1,
                TraceEvent::Placement { .. } => placed += 1,
                TraceEvent::Rejection { .. } => rejected += 1,
                _ => {}
            }
        }
        ensure!(misses == 0, "seed {seed}: {misses} misses in trace");
        ensure!(out.report.metrics.deadline_misses == 0, "seed {seed}: misses in report");
    }
    within(Duration::from_secs(120), start)?;
    Ok(format!("100 seeds, {placed} jobs placed, {rejected} rejected, 0 misses"))
}

// 4 -----------------------------------------------------------------------

fn figure2(policy: Policy) -> Result<RunOutput, String> {
    let mut s = Scenario::from_path(&repo().join("scenarios/figure2.json")).map_err(|e| e.to_string())?;
    s.policy = policy;
    simkernel::run(&s).map_err(|e| e.to_string())
}

fn narrative() -> Outcome {
    let start = Instant::now();
    let job = "job-00001";
    let sub = figure2(Policy::SubscribedLoad)?;
    let spot = figure2(Policy::SpotLoad)?;

    let (arrival, booked, due) = sub
        .trace
        .iter()
        .find_map(|t| match t {
            TraceEvent::Arrival { job_id, time, booked_marks, due_time, .. } if job_id == job => {
                Some((*time, *booked_marks, *due_time))
            }
            _ => None,
        })
        .ok_or("urgent job never arrived")?;
    let busy_spot = sub
        .trace
        .iter()
        .filter_map(|t| match t {
            TraceEvent::Sample { time, node_id, cpu_busy_fraction, .. }
                if node_id == "busy" && *time <= arrival =>
            {
                Some(*cpu_busy_fraction)
            }
            _ => None,
        })
        .last()
        .ok_or("no sample of the busy node")?;
    ensure!(busy_spot == 1.0, "busy node spot load {busy_spot} at arrival");
    // the idle node cannot deliver the booking inside the window at any load
    let idle_rate = 10.0;
    ensure!(idle_rate * (due - arrival) < booked, "idle node would be feasible");

    let placed_on = sub.trace.iter().find_map(|t| match t {
        TraceEvent::Placement { job_id, node_id, .. } if job_id == job => Some(node_id.clone()),
        _ => None,
    });
    ensure!(placed_on.as_deref() == Some("busy"), "subscribed_load placed on {placed_on:?}");
    let done = sub.trace.iter().find_map(|t| match t {
        TraceEvent::Completion { job_id, time, .. } if job_id == job => Some(*time),
        _ => None,
    });
    ensure!(done.is_some_and(|t| t <= due), "subscribed_load finished at {done:?}, due {due}");

    let spot_ok = spot.trace.iter().any(|t| {
        matches!(t, TraceEvent::Completion { job_id, time, .. } if job_id == job && *time <= due)
    });
    ensure!(!spot_ok, "spot_load met the deadline");
    let spot_rejected = spot
        .trace
        .iter()
        .any(|t| matches!(t, TraceEvent::Rejection { job_id, .. } if job_id == job));
    ensure!(
        sub.report.metrics.on_time_fraction > spot.report.metrics.on_time_fraction,
        "on-time fractions {} vs {}",
        sub.report.metrics.on_time_fraction,
        spot.report.metrics.on_time_fraction
    );
    within(Duration::from_secs(5), start)?;
    Ok(format!(
        "busy at spot load 1.0; subscribed_load done at {:.1} (due {due}); spot_load {}",
        done.unwrap(),
        if spot_rejected { "rejected" } else { "missed" }
    ))
}

// 5 and 6 ------------------------------------------------------------------

struct Network {
    ids: Vec<String>,
    k_close: usize,
    k_far: usize,
    bidders: Vec<LedgerBidder>,
}

fn random_network(rng: &mut ChaCha8Rng) -> Network {
    let n = rng.gen_range(8..=32usize);
    let ids: Vec<String> = (0..n).map(|i| format!("node{i:02}")).collect();
    let k_close = if rng.gen_bool(0.5) { 2 } else { 4 };
    let k_far = rng.gen_range(0..=3);
    let bidders = ids
        .iter()
        .map(|id| {
            // few distinct rates and probabilities so ties actually happen
            let rate = [10.0, 20.0, 40.0][rng.gen_range(0..3)];
            let os = if rng.gen_bool(0.2) { "windows" } else { "linux" };
            let mut ledger = LoadLedger::new(id.clone(), rate, 0.0).unwrap();
            for c in 0..rng.gen_range(0..=2) {
                let p = [1.0, 0.97, 0.9, 0.8][rng.gen_range(0..4)];
                let _ = ledger.admit(&format!("c{c}"), "app", rng.gen_range(10.0..300.0), rng.gen_range(5.0..60.0), p);
            }
            LedgerBidder {
                facts: NonVolatileFacts {
                    os: os.into(),
                    arch: "x86_64".into(),
                    memory_mb: 1024,
                    capacity_marks_per_s: rate,
                    libraries: BTreeSet::new(),
                    hardware_features: BTreeSet::new(),
                },
                ledger,
            }
        })
        .collect();
    Network { ids, k_close, k_far, bidders }
}

fn linux_query(id: String, origin: &str, rng: &mut ChaCha8Rng, ttl: u32) -> Query {
    Query {
        query_id: id,
        origin: origin.to_string(),
        requirements: NonVolatileRequirements {
            os: Some("linux".into()),
            ..Default::default()
        },
        demand_marks: rng.gen_range(1.0..600.0),
        window_s: 30.0,
        ttl,
        min_confidence: if rng.gen_bool(0.5) { 0.0 } else { 0.85 },
    }
}

fn discovery_optimality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut found = 0;
    for case in 0..200 {
        let net = random_network(&mut rng);
        let overlay = build_overlay(&net.ids, net.k_close, net.k_far, rng.gen()).map_err(|e| e.to_string())?;
        let diameter = overlay.diameter() as u32;
        let origin = net.ids[rng.gen_range(0..net.ids.len())].clone();
        let q = linux_query(format!("q{case}"), &origin, &mut rng, diameter);
        let cfg = SordConfig {
            ttl_max: diameter,
            collect_timeout_s: 10.0,
            hop_latency_s: 0.01,
        };
        let d = discover(&origin, &q, &overlay, &net.bidders, &cfg).map_err(|e| e.to_string())?;

        let bids: Vec<PlainBid> = net
            .bidders
            .iter()
            .map(|b| {
                let bid = b.ledger.make_bid(q.window_s).unwrap();
                PlainBid {
                    node_id: bid.node_id.clone(),
                    eligible: b.facts.os == "linux"
                        && bid.confidence >= q.min_confidence
                        && bid.unsubscribed_marks >= q.demand_marks,
                    unsubscribed: bid.unsubscribed_marks,
                    confidence: bid.confidence,
                }
            })
            .collect();
        let want = exhaustive_winner(&bids);
        ensure!(
            d.winner == want,
            "case {case}: discover chose {:?}, exhaustive best {want:?}",
            d.winner
        );
        found += want.is_some() as u32;
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!("200 overlays of 8-32 nodes, {found} with an eligible node"))
}

fn dedupe_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut max_ratio: f64 = 0.0;
    for case in 0..100 {
        let net = random_network(&mut rng);
        let overlay = build_overlay(&net.ids, net.k_close, net.k_far, rng.gen()).map_err(|e| e.to_string())?;
        let n = net.ids.len();
        let cfg = SordConfig {
            ttl_max: 8,
            collect_timeout_s: 10.0,
            hop_latency_s: 0.01,
        };
        let origin = net.ids[rng.gen_range(0..n)].clone();
        let ttl = rng.gen_range(0..=8);
        let q = linux_query(format!("q{case}"), &origin, &mut rng, ttl);
        let d = discover(&origin, &q, &overlay, &net.bidders, &cfg).map_err(|e| e.to_string())?;

        // a node that processes a query sends all its forwards at once and at
        // most one reply; more than one send instant means it processed twice
        let mut send_times: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
        let mut replies: BTreeMap<&str, u32> = BTreeMap::new();
        let mut queries = 0;
        for e in &d.trace {
            match e {
                TraceEntry::Query { time, from, .. } => {
                    queries += 1;
                    send_times.entry(from).or_default().insert(time.to_bits());
                }
                TraceEntry::Reply { from, .. } => *replies.entry(from).or_default() += 1,
            }
        }
        for (node, times) in &send_times {
            ensure!(times.len() <= 1, "case {case}: {node} forwarded at {} instants", times.len());
        }
        for (node, count) in &replies {
            ensure!(*count <= 1, "case {case}: {node} replied {count} times");
        }
        ensure!(d.evaluations.iter().all(|&e| e <= 1), "case {case}: repeated evaluation");
        let bound = n * (net.k_close + net.k_far);
        ensure!(queries <= bound, "case {case}: {queries} messages > bound {bound}");
        ensure!(queries == d.query_messages(), "case {case}: message count mismatch");
        max_ratio = max_ratio.max(queries as f64 / bound as f64);
    }
    Ok(format!("100 queries, at most {:.0}% of the bound used", 100.0 * max_ratio))
}

// 7 and 8 ------------------------------------------------------------------

fn feedback_loop() -> Outcome {
    let (median, sigma) = (100.0_f64, 0.25_f64);
    let true_q90 = median * (sigma * Z_090).exp();
    let cfg = DemandConfig::default();
    let mut app = ApplicationProfile::new(
        "synthetic",
        "1",
        NonVolatileRequirements::default(),
        2.0 * true_q90,
    )
    .map_err(|e| e.to_string())?;
    let cold = estimate_demand(&app, 0.9, &cfg).unwrap().booked_marks;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dist = LogNormal::new(median.ln(), sigma).unwrap();
    for i in 0..50 {
        app = record_run(
            app,
            RunRecord {
                demand_marks: dist.sample(&mut rng),
                wall_time_s: 1.0,
                node_id: "n".into(),
                timestamp: i as f64,
            },
        );
    }
    let booked = estimate_demand(&app, 0.9, &cfg).unwrap().booked_marks;
    let err = (booked - true_q90).abs() / true_q90;
    ensure!(err <= 0.10, "booked {booked:.2} vs true 0.9-quantile {true_q90:.2} ({:.1}% off)", 100.0 * err);
    ensure!(booked < cold, "booked {booked} not below cold start {cold}");
    Ok(format!(
        "booked {booked:.1} vs true {true_q90:.1} ({:.1}% off), cold start {cold:.1}",
        100.0 * err
    ))
}

fn confidence_estimator() -> Outcome {
    let cfg = DemandConfig::default();
    let mut app = ApplicationProfile::new("c", "1", NonVolatileRequirements::default(), 100.0).unwrap();
    for (i, m) in [90.0, 100.0, 110.0].into_iter().enumerate() {
        app = record_run(
            app,
            RunRecord {
                demand_marks: m,
                wall_time_s: 1.0,
                node_id: "n".into(),
                timestamp: i as f64,
            },
        );
    }
    let c = on_time_confidence(&app, 100.0, &cfg);
    ensure!(c == 2.0 / 3.0, "confidence(100) = {c}");

    let mut runner = TestRunner::new_with_rng(
        PropConfig {
            cases: 1000,
            failure_persistence: None,
            ..PropConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let strategy = (
        proptest::collection::vec(1u32..500, 1..40),
        1u32..600,
        1u32..600,
    );
    runner
        .run(&strategy, |(history, a, b)| {
            let mut p = ApplicationProfile::new("m", "1", NonVolatileRequirements::default(), 10.0).unwrap();
            for (i, m) in history.iter().enumerate() {
                p = record_run(
                    p,
                    RunRecord {
                        demand_marks: *m as f64,
                        wall_time_s: 1.0,
                        node_id: "n".into(),
                        timestamp: i as f64,
                    },
                );
            }
            let (lo, hi) = (a.min(b) as f64, a.max(b) as f64);
            prop_assert!(on_time_confidence(&p, lo, &cfg) <= on_time_confidence(&p, hi, &cfg));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("confidence(100) = 2/3; monotone over 1000 random histories".into())
}

// 9 ------------------------------------------------------------------------

fn shipped_scenarios() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(repo().join("scenarios"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
}

fn determinism() -> Outcome {
    let paths = shipped_scenarios();
    ensure!(!paths.is_empty(), "no shipped scenarios");
    for p in &paths {
        let s = Scenario::from_path(p).map_err(|e| e.to_string())?;
        let a = simkernel::run(&s).map_err(|e| e.to_string())?;
        let b = simkernel::run(&s).map_err(|e| e.to_string())?;
        ensure!(a.log.to_jsonl() == b.log.to_jsonl(), "{}: accounting logs differ", p.display());
        ensure!(a.report.to_json() == b.report.to_json(), "{}: reports differ", p.display());
        ensure!(a.trace_jsonl() == b.trace_jsonl(), "{}: traces differ", p.display());
    }
    let names: Vec<String> = paths
        .iter()
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    Ok(format!("{} scenarios byte-identical: {}", paths.len(), names.join(", ")))
}

// 10 -----------------------------------------------------------------------

fn token(rng: &mut ChaCha8Rng) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-<>&\"' ";
    let len = rng.gen_range(1..10);
    let mut s: String = (0..len)
        .map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char)
        .collect();
    // surrounding whitespace is not significant in the document format
    s = s.trim().to_string();
    if s.is_empty() {
        s.push('x');
    }
    s
}

fn micro(rng: &mut ChaCha8Rng, max: u64) -> f64 {
    rng.gen_range(1..=max * 1_000_000) as f64 / 1e6
}

fn tokens(rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    (0..rng.gen_range(0..4)).map(|_| token(rng)).collect()
}

fn random_computer(rng: &mut ChaCha8Rng) -> ComputerProfile {
    let memory_mb = rng.gen_range(1..=65536);
    let mut p = ComputerProfile::new(
        token(rng),
        NonVolatileFacts {
            os: token(rng),
            arch: token(rng),
            memory_mb,
            capacity_marks_per_s: micro(rng, 500),
            libraries: tokens(rng),
            hardware_features: tokens(rng),
        },
    );
    p.volatile = VolatileSample {
        timestamp: micro(rng, 10_000),
        cpu_busy_fraction: rng.gen_range(0..=1_000_000) as f64 / 1e6,
        free_memory_mb: rng.gen_range(0..=memory_mb),
        subscribed_marks: rng.gen_range(0..=5_000_000_000u64) as f64 / 1e6,
    };
    p
}

fn random_app(rng: &mut ChaCha8Rng) -> (String, String, ApplicationProfile) {
    let (name, version) = (token(rng), token(rng));
    let req = NonVolatileRequirements {
        os: rng.gen_bool(0.5).then(|| token(rng)),
        arch: rng.gen_bool(0.5).then(|| token(rng)),
        min_memory_mb: rng.gen_range(0..=8192),
        required_libraries: tokens(rng),
        required_hardware: tokens(rng),
    };
    let mut p = ApplicationProfile::new(&name, &version, req, micro(rng, 10_000)).unwrap();
    p.ipc_level = [IpcLevel::None, IpcLevel::Light, IpcLevel::Heavy][rng.gen_range(0..3)];
    // whole microseconds, so the running sum stays exactly representable
    let mut t_us = 0u64;
    for _ in 0..rng.gen_range(0..5) {
        t_us += rng.gen_range(1..=100_000_000);
        p.history.push(RunRecord {
            demand_marks: micro(rng, 10_000),
            wall_time_s: micro(rng, 1000),
            node_id: token(rng),
            timestamp: t_us as f64 / 1e6,
        });
    }
    (name, version, p)
}

fn profile_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..50 {
        let p = random_computer(&mut rng);
        let xml = serialize_computer_profile(&p);
        let back = parse_computer_profile(&xml).map_err(|e| format!("computer {i}: {e}\n{xml}"))?;
        ensure!(back == p, "computer {i}: parse(serialize) differs");
        ensure!(serialize_computer_profile(&back) == xml, "computer {i}: bytes differ");
    }
    for i in 0..50 {
        let (name, version, p) = random_app(&mut rng);
        let want_id = sha256_hex(format!("{name}\n{version}").as_bytes());
        ensure!(p.app_id == want_id, "app {i}: id {} vs oracle {want_id}", p.app_id);
        let xml = serialize_application_profile(&p);
        let back = parse_application_profile(&xml).map_err(|e| format!("app {i}: {e}\n{xml}"))?;
        ensure!(back == p, "app {i}: parse(serialize) differs");
        ensure!(serialize_application_profile(&back) == xml, "app {i}: bytes differ");
    }

    let dir = repo().join("profiles");
    let node = std::fs::read_to_string(dir.join("node-epsilon.xml")).unwrap();
    let p = parse_computer_profile(&node).map_err(|e| e.to_string())?;
    ensure!(serialize_computer_profile(&p) == node, "node-epsilon.xml is not reproduced byte for byte");
    let app = std::fs::read_to_string(dir.join("app-blast.xml")).unwrap();
    let a = parse_application_profile(&app).map_err(|e| e.to_string())?;
    ensure!(serialize_application_profile(&a) == app, "app-blast.xml is not reproduced byte for byte");
    let id = compute_app_id("blast", "2.0").unwrap();
    ensure!(
        a.app_id == id && id == sha256_hex(b"blast\n2.0"),
        "golden app id {} does not match",
        a.app_id
    );
    Ok("100 generated profiles round-trip; 2 golden files byte-identical".into())
}

// 11 -----------------------------------------------------------------------

fn run_shipped(name: &str) -> Result<(Scenario, RunOutput), String> {
    let s = Scenario::from_path(&repo().join("scenarios").join(name)).map_err(|e| e.to_string())?;
    let out = simkernel::run(&s).map_err(|e| e.to_string())?;
    Ok((s, out))
}

fn monitoring_tiers() -> Outcome {
    let (s, out) = run_shipped("monitoring600.json")?;
    ensure!(s.duration_s == 600.0 && s.config.monitor.beacon_period_s == 5.0, "scenario drifted");
    let mut ticks: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
    for t in &out.trace {
        if let TraceEvent::Beacon { time, from, .. } = t {
            ticks.entry(from).or_default().insert(time.to_bits());
        }
    }
    for n in &s.nodes {
        let count = ticks.get(n.node_id.as_str()).map_or(0, |t| t.len());
        ensure!(count == 120, "{} sent beacons at {count} instants", n.node_id);
    }
    ensure!(
        out.report.per_node.iter().all(|n| n.beacons_sent == 120),
        "report beacon counts differ from 120"
    );

    // every accounting event mirrors a kernel action of the same kind
    let mut actions: BTreeMap<(EventKind, String), Vec<u64>> = BTreeMap::new();
    for t in &out.trace {
        let (kind, job, time) = match t {
            TraceEvent::Placement { job_id, time, .. } => (EventKind::JobAdmitted, job_id, time),
            TraceEvent::Completion { job_id, time, .. } => (EventKind::JobCompleted, job_id, time),
            TraceEvent::Rejection { job_id, time, .. } => (EventKind::JobRejected, job_id, time),
            TraceEvent::Miss { job_id, time, .. } => (EventKind::JobMissedDeadline, job_id, time),
            TraceEvent::Alert { job_id, time, .. } => (EventKind::IntegrityAlert, job_id, time),
            _ => continue,
        };
        actions.entry((kind, job.clone())).or_default().push(time.to_bits());
    }
    let total: usize = actions.values().map(Vec::len).sum();
    ensure!(out.log.len() == total, "{} accounting events vs {total} kernel actions", out.log.len());
    for e in out.log.events() {
        let key = (e.kind, e.job_id.clone().unwrap_or_default());
        let ok = actions
            .get(&key)
            .is_some_and(|times| times.contains(&e.timestamp.to_bits()));
        ensure!(ok, "accounting event {:?} for {:?} has no matching action", e.kind, e.job_id);
    }

    let (_, runaway) = run_shipped("runaway.json")?;
    let alerts: Vec<_> = runaway
        .log
        .events()
        .iter()
        .filter(|e| e.kind == EventKind::IntegrityAlert)
        .collect();
    ensure!(alerts.len() == 1, "runaway scenario raised {} alerts", alerts.len());
    let runaway_job = runaway.trace.iter().find_map(|t| match t {
        TraceEvent::Arrival { job_id, true_demand_marks, .. } if *true_demand_marks > 4000.0 => {
            Some(job_id.clone())
        }
        _ => None,
    });
    ensure!(alerts[0].job_id == runaway_job, "alert names {:?}", alerts[0].job_id);
    Ok(format!(
        "120 beacons per node over {} nodes; {} accounting events all matched; 1 runaway alert",
        s.nodes.len(),
        out.log.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    common::self_check();
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("feasibility oracle equivalence", feasibility_oracle),
        ("unsubscribed-capacity exactness", unsubscribed_exactness),
        ("ledger safety under edf", ledger_safety),
        ("spot vs subscribed load narrative", narrative),
        ("discovery optimality at full flood", discovery_optimality),
        ("dedupe bound", dedupe_bound),
        ("feedback loop", feedback_loop),
        ("confidence estimator", confidence_estimator),
        ("determinism", determinism),
        ("profile round-trip", profile_round_trip),
        ("monitoring tiers", monitoring_tiers),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Err(format!("panicked: {msg}"))
            });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
