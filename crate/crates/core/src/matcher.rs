//! Non-volatile requirement filtering, the first stage of resource matching.
//!
//! Only the facts that do not change at runtime are checked here; the pruned
//! set is what gets handed to discovery.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::profiles::{ComputerProfile, NonVolatileFacts};

/// What an application needs from a node. Absent `os`/`arch` means "any".
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NonVolatileRequirements {
    #[serde(default)]
    pub os: Option<String>,
    #[serde(default)]
    pub arch: Option<String>,
    #[serde(default)]
    pub min_memory_mb: u64,
    #[serde(default)]
    pub required_libraries: BTreeSet<String>,
    #[serde(default)]
    pub required_hardware: BTreeSet<String>,
}

fn norm(s: &str) -> String {
    s.trim().to_lowercase()
}

fn same(a: &str, b: &str) -> bool {
    norm(a) == norm(b)
}

fn subset(required: &BTreeSet<String>, offered: &BTreeSet<String>) -> bool {
    if required.is_empty() {
        return true;
    }
    let offered: BTreeSet<String> = offered.iter().map(|s| norm(s)).collect();
    required.iter().all(|r| offered.contains(&norm(r)))
}

/// True iff every stated requirement is met by `facts`. Strings are compared
/// case-insensitively after trimming.
pub fn matches(req: &NonVolatileRequirements, facts: &NonVolatileFacts) -> bool {
    req.os.as_deref().map_or(true, |os| same(os, &facts.os))
        && req.arch.as_deref().map_or(true, |a| same(a, &facts.arch))
        && req.min_memory_mb <= facts.memory_mb
        && subset(&req.required_libraries, &facts.libraries)
        && subset(&req.required_hardware, &facts.hardware_features)
}

/// Stable-order subsequence of `profiles` whose facts satisfy `req`.
pub fn prune<'a, I>(req: &NonVolatileRequirements, profiles: I) -> Vec<ComputerProfile>
where
    I: IntoIterator<Item = &'a ComputerProfile>,
{
    profiles
        .into_iter()
        .filter(|p| matches(req, &p.nonvolatile))
        .cloned()
        .collect()
}
