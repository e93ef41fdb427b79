//! Statistical demand model built from an application's run history.
//!
//! Until a run has been observed the declared demand is booked with a safety
//! margin. Afterwards the booking is the lower empirical quantile of observed
//! demand, and the on-time confidence of a booking is the empirical CDF at it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiles::{ApplicationProfile, RunRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DemandError {
    #[error("quantile {0} outside (0, 1]")]
    InvalidQuantile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    pub quantile: f64,
    pub safety_factor: f64,
    pub cold_start_confidence: f64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig {
            quantile: 0.9,
            safety_factor: 1.5,
            cold_start_confidence: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandSource {
    DeclaredWithMargin,
    EmpiricalQuantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandEstimate {
    /// Marks to enter into a ledger.
    pub booked_marks: f64,
    pub quantile_q: f64,
    pub source: DemandSource,
}

/// Appends a completed run to the profile's history.
pub fn record_run(mut profile: ApplicationProfile, rec: RunRecord) -> ApplicationProfile {
    profile.history.push(rec);
    profile
}

/// Smallest sample whose empirical CDF reaches `q`. `samples` must be non-empty.
fn lower_quantile(samples: &mut [f64], q: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    // smallest rank k with k/n >= q; q*n alone rounds badly (0.7 * 10 > 7)
    let nf = n as f64;
    let mut rank = ((q * nf).ceil() as usize).clamp(1, n);
    while rank > 1 && (rank - 1) as f64 / nf >= q {
        rank -= 1;
    }
    while rank < n && (rank as f64) / nf < q {
        rank += 1;
    }
    samples[rank - 1]
}

pub fn estimate_demand(
    profile: &ApplicationProfile,
    q: f64,
    cfg: &DemandConfig,
) -> Result<DemandEstimate, DemandError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(DemandError::InvalidQuantile(q));
    }
    if profile.history.is_empty() {
        return Ok(DemandEstimate {
            booked_marks: profile.declared_demand_marks * cfg.safety_factor,
            quantile_q: q,
            source: DemandSource::DeclaredWithMargin,
        });
    }
    let mut samples: Vec<f64> = profile.history.iter().map(|r| r.demand_marks).collect();
    Ok(DemandEstimate {
        booked_marks: lower_quantile(&mut samples, q),
        quantile_q: q,
        source: DemandSource::EmpiricalQuantile,
    })
}

/// Fraction of past runs that needed no more than `booked_marks`; the configured
/// prior when there is no history yet.
pub fn on_time_confidence(profile: &ApplicationProfile, booked_marks: f64, cfg: &DemandConfig) -> f64 {
    if profile.history.is_empty() {
        return cfg.cold_start_confidence;
    }
    let within = profile
        .history
        .iter()
        .filter(|r| r.demand_marks <= booked_marks)
        .count();
    within as f64 / profile.history.len() as f64
}
