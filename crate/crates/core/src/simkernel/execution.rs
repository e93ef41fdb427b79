//! Per-node execution of admitted jobs.
//!
//! The scheduler never sees a job's true demand; only the node runtime does.
//! Consumption is mirrored into the node's ledger so that capacity answers track
//! the work actually done.

use serde::{Deserialize, Serialize};

use super::scenario::ExecutionModel;
use crate::ledger::LoadLedger;
use crate::profiles::ComputerProfile;

/// Completions within this many seconds of an interval end happen at the end.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningJob {
    pub job_id: String,
    pub app_idx: usize,
    pub true_demand_marks: f64,
    pub consumed_marks: f64,
    pub due_time: f64,
    pub booked_marks: f64,
    pub arrival_time: f64,
    pub admitted_at: f64,
    /// Admission order on this node; breaks due-time ties under edf.
    pub order: u64,
    /// False once the ledger retired the commitment (booking used up).
    pub in_ledger: bool,
    pub missed: bool,
}

impl RunningJob {
    pub fn remaining(&self) -> f64 {
        (self.true_demand_marks - self.consumed_marks).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub job: RunningJob,
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct NodeRuntime {
    pub profile: ComputerProfile,
    pub ledger: LoadLedger,
    pub jobs: Vec<RunningJob>,
    pub clock: f64,
    pub busy_time: f64,
    pub busy_since_sample: f64,
    pub consumed_marks: f64,
    next_order: u64,
}

impl NodeRuntime {
    pub fn new(profile: ComputerProfile) -> Self {
        let ledger = LoadLedger::new(
            profile.node_id.clone(),
            profile.nonvolatile.capacity_marks_per_s,
            0.0,
        )
        .expect("validated profiles have a positive rate");
        NodeRuntime {
            profile,
            ledger,
            jobs: Vec::new(),
            clock: 0.0,
            busy_time: 0.0,
            busy_since_sample: 0.0,
            consumed_marks: 0.0,
            next_order: 0,
        }
    }

    pub fn rate(&self) -> f64 {
        self.profile.nonvolatile.capacity_marks_per_s
    }

    pub fn node_id(&self) -> &str {
        &self.profile.node_id
    }

    pub fn start_job(&mut self, mut job: RunningJob) {
        job.order = self.next_order;
        self.next_order += 1;
        self.jobs.push(job);
    }

    /// Instantaneous marks/s per running job.
    pub fn shares(&self, model: ExecutionModel) -> Vec<f64> {
        let n = self.jobs.len();
        if n == 0 {
            return Vec::new();
        }
        match model {
            ExecutionModel::FairShare => vec![self.rate() / n as f64; n],
            ExecutionModel::Edf => {
                let first = self
                    .jobs
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        a.due_time
                            .total_cmp(&b.due_time)
                            .then(a.order.cmp(&b.order))
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                let mut shares = vec![0.0; n];
                shares[first] = self.rate();
                shares
            }
        }
    }

    /// Seconds until the next completion at current shares.
    fn time_to_next_completion(&self, shares: &[f64]) -> f64 {
        self.jobs
            .iter()
            .zip(shares)
            .filter(|(_, s)| **s > 0.0)
            .map(|(j, s)| j.remaining() / s)
            .fold(f64::INFINITY, f64::min)
    }

    /// Absolute time of the next completion if nothing else changes.
    pub fn next_completion(&self, model: ExecutionModel) -> Option<f64> {
        let dt = self.time_to_next_completion(&self.shares(model));
        dt.is_finite().then_some(self.clock + dt)
    }

    /// Runs the node for `dt` seconds. Shares are recomputed at every
    /// completion instant inside the interval.
    pub fn step_execution(&mut self, dt: f64, model: ExecutionModel) -> Vec<Completion> {
        let end = self.clock + dt.max(0.0);
        let mut done = Vec::new();
        while !self.jobs.is_empty() && self.clock < end {
            let shares = self.shares(model);
            let left = end - self.clock;
            let to_completion = self.time_to_next_completion(&shares);
            let span = if to_completion <= left + TIME_EPS {
                to_completion.min(left)
            } else {
                left
            };

            for (job, share) in self.jobs.iter_mut().zip(&shares) {
                let marks = share * span;
                if marks <= 0.0 {
                    continue;
                }
                job.consumed_marks += marks;
                self.consumed_marks += marks;
                if job.in_ledger {
                    match self.ledger.consume(&job.job_id, marks) {
                        Ok(Some(_)) | Err(_) => job.in_ledger = false,
                        Ok(None) => {}
                    }
                }
            }
            self.busy_time += span;
            self.busy_since_sample += span;
            self.clock = if to_completion < left {
                self.clock + span
            } else {
                end
            };

            let finished: Vec<usize> = (0..self.jobs.len())
                .filter(|&i| {
                    let j = &self.jobs[i];
                    shares[i] > 0.0
                        && j.remaining() <= shares[i] * TIME_EPS + 1e-12 * j.true_demand_marks
                })
                .collect();
            for &i in finished.iter().rev() {
                let mut job = self.jobs.remove(i);
                self.consumed_marks += job.true_demand_marks - job.consumed_marks;
                job.consumed_marks = job.true_demand_marks;
                if job.in_ledger {
                    let _ = self.ledger.retire(&job.job_id);
                    job.in_ledger = false;
                }
                done.push(Completion {
                    job,
                    time: self.clock,
                });
            }
        }
        self.clock = end;
        // misses are tracked per job by the kernel
        let _ = self.ledger.advance_time(self.clock);
        done.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.job.order.cmp(&b.job.order)));
        done
    }

    pub fn advance_to(&mut self, t: f64, model: ExecutionModel) -> Vec<Completion> {
        if t <= self.clock {
            return Vec::new();
        }
        self.step_execution(t - self.clock, model)
    }

    /// Busy fraction since the previous call, over `period` seconds.
    pub fn take_busy_fraction(&mut self, period: f64) -> f64 {
        let f = (self.busy_since_sample / period).clamp(0.0, 1.0);
        self.busy_since_sample = 0.0;
        f
    }
}
