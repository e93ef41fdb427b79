//! Computer and application profiles.
//!
//! A [`ComputerProfile`] splits a node into slowly changing [`NonVolatileFacts`]
//! (used for filtering) and a periodically re-sampled [`VolatileSample`]. An
//! [`ApplicationProfile`] is keyed by a digest of the application's name and
//! version and carries the history of completed runs.
//!
//! Both profiles have a canonical XML form, see [`xml`].

pub mod xml;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matcher::NonVolatileRequirements;

pub use xml::{
    parse_application_profile, parse_application_profile_with_warnings, parse_computer_profile,
    parse_computer_profile_with_warnings, serialize_application_profile,
    serialize_computer_profile,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("schema violation at <{element}>: {reason}")]
    SchemaViolation { element: String, reason: String },
    #[error("field `{0}` must not be empty")]
    EmptyField(&'static str),
    #[error("stale volatile sample: timestamp {new} precedes current {current}")]
    StaleSample { current: f64, new: f64 },
}

impl ProfileError {
    pub(crate) fn schema(element: &str, reason: impl Into<String>) -> Self {
        ProfileError::SchemaViolation {
            element: element.to_string(),
            reason: reason.into(),
        }
    }

    /// The offending element for schema violations.
    pub fn element(&self) -> Option<&str> {
        match self {
            ProfileError::SchemaViolation { element, .. } => Some(element),
            _ => None,
        }
    }
}

/// Facts about a node that do not change while it is running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonVolatileFacts {
    pub os: String,
    pub arch: String,
    pub memory_mb: u64,
    /// Computational output in marks per second.
    pub capacity_marks_per_s: f64,
    #[serde(default)]
    pub libraries: BTreeSet<String>,
    #[serde(default)]
    pub hardware_features: BTreeSet<String>,
}

impl NonVolatileFacts {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.os.trim().is_empty() {
            return Err(ProfileError::schema("os", "empty"));
        }
        if self.arch.trim().is_empty() {
            return Err(ProfileError::schema("arch", "empty"));
        }
        if self.memory_mb == 0 {
            return Err(ProfileError::schema("memoryMB", "must be positive"));
        }
        if !(self.capacity_marks_per_s.is_finite() && self.capacity_marks_per_s > 0.0) {
            return Err(ProfileError::schema(
                "capacityMarksPerS",
                "must be a positive finite number",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VolatileSample {
    /// Simulation seconds.
    pub timestamp: f64,
    pub cpu_busy_fraction: f64,
    pub free_memory_mb: u64,
    pub subscribed_marks: f64,
}

impl VolatileSample {
    pub fn validate(&self, memory_mb: u64) -> Result<(), ProfileError> {
        if !(self.timestamp.is_finite() && self.timestamp >= 0.0) {
            return Err(ProfileError::schema("timestamp", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.cpu_busy_fraction) {
            return Err(ProfileError::schema("cpuBusyFraction", "must lie in [0,1]"));
        }
        if self.free_memory_mb > memory_mb {
            return Err(ProfileError::schema(
                "freeMemoryMB",
                format!("{} exceeds physical memory {memory_mb}", self.free_memory_mb),
            ));
        }
        if !(self.subscribed_marks.is_finite() && self.subscribed_marks >= 0.0) {
            return Err(ProfileError::schema("subscribedMarks", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputerProfile {
    pub node_id: String,
    pub nonvolatile: NonVolatileFacts,
    pub volatile: VolatileSample,
}

impl ComputerProfile {
    /// An idle profile at time zero with all memory free.
    pub fn new(node_id: impl Into<String>, nonvolatile: NonVolatileFacts) -> Self {
        let volatile = VolatileSample {
            free_memory_mb: nonvolatile.memory_mb,
            ..VolatileSample::default()
        };
        ComputerProfile {
            node_id: node_id.into(),
            nonvolatile,
            volatile,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.node_id.trim().is_empty() {
            return Err(ProfileError::schema("nodeId", "empty"));
        }
        self.nonvolatile.validate()?;
        self.volatile.validate(self.nonvolatile.memory_mb)
    }

    /// Replaces the volatile sample. Samples with an equal timestamp are accepted
    /// (re-sampling is idempotent); older ones are rejected.
    pub fn update_volatile(mut self, sample: VolatileSample) -> Result<Self, ProfileError> {
        if sample.timestamp < self.volatile.timestamp {
            return Err(ProfileError::StaleSample {
                current: self.volatile.timestamp,
                new: sample.timestamp,
            });
        }
        sample.validate(self.nonvolatile.memory_mb)?;
        self.volatile = sample;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IpcLevel {
    #[default]
    None,
    Light,
    Heavy,
}

impl IpcLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            IpcLevel::None => "none",
            IpcLevel::Light => "light",
            IpcLevel::Heavy => "heavy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Some(IpcLevel::None),
            "light" => Some(IpcLevel::Light),
            "heavy" => Some(IpcLevel::Heavy),
            _ => None,
        }
    }
}

/// One completed execution of an application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Marks actually consumed.
    pub demand_marks: f64,
    pub wall_time_s: f64,
    pub node_id: String,
    pub timestamp: f64,
}

impl RunRecord {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(self.demand_marks.is_finite() && self.demand_marks > 0.0) {
            return Err(ProfileError::schema("demandMarks", "must be positive"));
        }
        if !(self.wall_time_s.is_finite() && self.wall_time_s > 0.0) {
            return Err(ProfileError::schema("wallTimeS", "must be positive"));
        }
        if self.node_id.trim().is_empty() {
            return Err(ProfileError::schema("nodeId", "empty"));
        }
        if !self.timestamp.is_finite() {
            return Err(ProfileError::schema("timestamp", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationProfile {
    pub app_id: String,
    pub ipc_level: IpcLevel,
    pub requirements: NonVolatileRequirements,
    /// User (or first-run) estimate of the total marks a run needs.
    pub declared_demand_marks: f64,
    #[serde(default)]
    pub history: Vec<RunRecord>,
}

impl ApplicationProfile {
    pub fn new(
        name: &str,
        version: &str,
        requirements: NonVolatileRequirements,
        declared_demand_marks: f64,
    ) -> Result<Self, ProfileError> {
        let profile = ApplicationProfile {
            app_id: compute_app_id(name, version)?,
            ipc_level: IpcLevel::None,
            requirements,
            declared_demand_marks,
            history: Vec::new(),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.app_id.trim().is_empty() {
            return Err(ProfileError::schema("appId", "empty"));
        }
        if !(self.declared_demand_marks.is_finite() && self.declared_demand_marks > 0.0) {
            return Err(ProfileError::schema("declaredDemandMarks", "must be positive"));
        }
        for run in &self.history {
            run.validate()?;
        }
        if self
            .history
            .windows(2)
            .any(|w| w[1].timestamp < w[0].timestamp)
        {
            return Err(ProfileError::schema("history", "runs out of timestamp order"));
        }
        Ok(())
    }
}

/// Hex SHA-256 of `name + "\n" + version`.
pub fn compute_app_id(name: &str, version: &str) -> Result<String, ProfileError> {
    if name.is_empty() {
        return Err(ProfileError::EmptyField("name"));
    }
    if version.is_empty() {
        return Err(ProfileError::EmptyField("version"));
    }
    let mut hasher = Sha256::new();
    hasher.update(name.as_bytes());
    hasher.update(b"\n");
    hasher.update(version.as_bytes());
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
