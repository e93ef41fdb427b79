//! Subscribed-load ledger.
//!
//! Every node keeps the marks it still owes to admitted jobs together with their
//! due times. Capacity questions are answered from this ledger rather than from
//! spot CPU load: a job is admitted only if all commitments, the new one
//! included, can still be finished by their due times when executed earliest
//! due first at the node's rate (the single-machine processor-demand
//! criterion).
//!
//! Commitments whose due time has passed stay on the ledger until their work is
//! done. Their remaining marks count against every future due time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack (in units of `rate`) tolerated by feasibility comparisons.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LedgerError {
    #[error("job `{0}` is already on the ledger")]
    DuplicateJobId(String),
    #[error("due time {due} is not after the ledger clock {now}")]
    PastDeadline { due: f64, now: f64 },
    #[error("booked marks must be positive and finite, got {0}")]
    InvalidBooking(f64),
    #[error("insufficient capacity to admit `{0}`")]
    Rejected(String),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("time regression: ledger at {now}, asked to move to {to}")]
    TimeRegression { now: f64, to: f64 },
    #[error("rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("window must be positive and finite, got {0}")]
    InvalidWindow(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commitment {
    pub job_id: String,
    pub app_id: String,
    pub remaining_marks: f64,
    /// Absolute simulation seconds.
    pub due_time: f64,
    pub booked_marks: f64,
    pub on_time_prob: f64,
    pub admitted_at: f64,
    /// Set once the due time passed with work outstanding.
    #[serde(default)]
    pub late: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub node_id: String,
    pub window_s: f64,
    pub unsubscribed_marks: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadlineMiss {
    pub job_id: String,
    pub due_time: f64,
    pub remaining_marks: f64,
}

/// Per-node log of subscribed load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadLedger {
    pub node_id: String,
    /// Marks per second.
    pub rate: f64,
    pub now: f64,
    pub commitments: Vec<Commitment>,
}

impl LoadLedger {
    pub fn new(node_id: impl Into<String>, rate: f64, now: f64) -> Result<Self, LedgerError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(LedgerError::InvalidRate(rate));
        }
        Ok(LoadLedger {
            node_id: node_id.into(),
            rate,
            now,
            commitments: Vec::new(),
        })
    }

    pub fn subscribed_marks(&self) -> f64 {
        self.commitments.iter().map(|c| c.remaining_marks).sum()
    }

    pub fn get(&self, job_id: &str) -> Option<&Commitment> {
        self.commitments.iter().find(|c| c.job_id == job_id)
    }

    fn tolerance(&self) -> f64 {
        FEASIBILITY_TOLERANCE * self.rate
    }

    /// Remaining marks of commitments that are already due.
    fn overdue_marks(&self) -> f64 {
        self.commitments
            .iter()
            .filter(|c| c.due_time <= self.now)
            .map(|c| c.remaining_marks)
            .sum()
    }

    /// (due time, cumulative demand up to and including it) for each distinct
    /// future due time, ascending. Overdue work is included in every entry.
    fn demand_curve(&self, extra: Option<(f64, f64)>) -> Vec<(f64, f64)> {
        let mut future: Vec<(f64, f64)> = self
            .commitments
            .iter()
            .filter(|c| c.due_time > self.now)
            .map(|c| (c.due_time, c.remaining_marks))
            .chain(extra)
            .collect();
        future.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut curve: Vec<(f64, f64)> = Vec::with_capacity(future.len());
        let mut cum = self.overdue_marks();
        for (due, marks) in future {
            cum += marks;
            match curve.last_mut() {
                Some(last) if last.0 == due => last.1 = cum,
                _ => curve.push((due, cum)),
            }
        }
        curve
    }

    fn curve_feasible(&self, curve: &[(f64, f64)]) -> bool {
        let tol = self.tolerance();
        curve
            .iter()
            .all(|&(due, demand)| demand <= self.rate * (due - self.now) + tol)
    }

    /// Processor-demand test: for every future due time `d`, the marks owed by
    /// `d` (overdue work included) fit into `rate * (d - now)`.
    pub fn is_feasible(&self) -> bool {
        self.curve_feasible(&self.demand_curve(None))
    }

    fn check_new(&self, job_id: &str, booked_marks: f64, due_time: f64) -> Result<(), LedgerError> {
        if !(booked_marks.is_finite() && booked_marks > 0.0) {
            return Err(LedgerError::InvalidBooking(booked_marks));
        }
        if !(due_time > self.now) {
            return Err(LedgerError::PastDeadline {
                due: due_time,
                now: self.now,
            });
        }
        if self.get(job_id).is_some() {
            return Err(LedgerError::DuplicateJobId(job_id.to_string()));
        }
        Ok(())
    }

    fn push(&mut self, job_id: &str, app_id: &str, booked: f64, due: f64, p: f64) {
        self.commitments.push(Commitment {
            job_id: job_id.to_string(),
            app_id: app_id.to_string(),
            remaining_marks: booked,
            due_time: due,
            booked_marks: booked,
            on_time_prob: p.clamp(0.0, 1.0),
            admitted_at: self.now,
            late: false,
        });
    }

    /// Adds a commitment if the ledger stays feasible with it; otherwise
    /// returns [`LedgerError::Rejected`] and leaves the ledger unchanged.
    pub fn admit(
        &mut self,
        job_id: &str,
        app_id: &str,
        booked_marks: f64,
        due_time: f64,
        on_time_prob: f64,
    ) -> Result<(), LedgerError> {
        self.check_new(job_id, booked_marks, due_time)?;
        let curve = self.demand_curve(Some((due_time, booked_marks)));
        if !self.curve_feasible(&curve) {
            return Err(LedgerError::Rejected(job_id.to_string()));
        }
        self.push(job_id, app_id, booked_marks, due_time, on_time_prob);
        Ok(())
    }

    /// Adds a commitment without any capacity test. Used by the spot-load
    /// baseline, which books work it never checked; the ledger may become
    /// infeasible.
    pub fn admit_unchecked(
        &mut self,
        job_id: &str,
        app_id: &str,
        booked_marks: f64,
        due_time: f64,
        on_time_prob: f64,
    ) -> Result<(), LedgerError> {
        self.check_new(job_id, booked_marks, due_time)?;
        self.push(job_id, app_id, booked_marks, due_time, on_time_prob);
        Ok(())
    }

    /// Largest extra commitment due at `now + window_s` that keeps the ledger
    /// feasible (zero if none fits, including when it is already infeasible).
    pub fn unsubscribed(&self, window_s: f64) -> Result<f64, LedgerError> {
        if !(window_s.is_finite() && window_s > 0.0) {
            return Err(LedgerError::InvalidWindow(window_s));
        }
        let horizon = self.now + window_s;
        let curve = self.demand_curve(None);
        if !self.curve_feasible(&curve) {
            return Ok(0.0);
        }
        // demand due by the horizon itself
        let at_horizon = curve
            .iter()
            .take_while(|(d, _)| *d <= horizon)
            .last()
            .map_or_else(|| self.overdue_marks(), |&(_, m)| m);
        let mut slack = self.rate * window_s - at_horizon;
        for &(due, demand) in curve.iter().filter(|(d, _)| *d >= horizon) {
            slack = slack.min(self.rate * (due - self.now) - demand);
        }
        Ok(slack.max(0.0))
    }

    /// Bid for a query covering `window_s`: unsubscribed marks plus the product
    /// of the on-time probabilities of everything already admitted.
    pub fn make_bid(&self, window_s: f64) -> Result<Bid, LedgerError> {
        Ok(Bid {
            node_id: self.node_id.clone(),
            window_s,
            unsubscribed_marks: self.unsubscribed(window_s)?,
            confidence: self.confidence(),
        })
    }

    pub fn confidence(&self) -> f64 {
        self.commitments.iter().map(|c| c.on_time_prob).product()
    }

    /// Records `marks` of progress on a job. Returns the retired commitment once
    /// nothing remains.
    pub fn consume(&mut self, job_id: &str, marks: f64) -> Result<Option<Commitment>, LedgerError> {
        let idx = self
            .commitments
            .iter()
            .position(|c| c.job_id == job_id)
            .ok_or_else(|| LedgerError::UnknownJob(job_id.to_string()))?;
        let c = &mut self.commitments[idx];
        c.remaining_marks = (c.remaining_marks - marks.max(0.0)).max(0.0);
        if c.remaining_marks == 0.0 {
            return Ok(Some(self.commitments.remove(idx)));
        }
        Ok(None)
    }

    /// Removes a commitment whose job finished before using its full booking.
    pub fn retire(&mut self, job_id: &str) -> Result<Commitment, LedgerError> {
        let idx = self
            .commitments
            .iter()
            .position(|c| c.job_id == job_id)
            .ok_or_else(|| LedgerError::UnknownJob(job_id.to_string()))?;
        Ok(self.commitments.remove(idx))
    }

    /// Moves the clock to `t`, flagging commitments that passed their due time
    /// with work outstanding. Each commitment is reported at most once.
    pub fn advance_time(&mut self, t: f64) -> Result<Vec<DeadlineMiss>, LedgerError> {
        if t < self.now {
            return Err(LedgerError::TimeRegression { now: self.now, to: t });
        }
        self.now = t;
        let mut misses = Vec::new();
        for c in &mut self.commitments {
            if !c.late && c.due_time < t && c.remaining_marks > 0.0 {
                c.late = true;
                misses.push(DeadlineMiss {
                    job_id: c.job_id.clone(),
                    due_time: c.due_time,
                    remaining_marks: c.remaining_marks,
                });
            }
        }
        Ok(misses)
    }

    /// JSON export: `{node_id, rate, now, commitments[]}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
