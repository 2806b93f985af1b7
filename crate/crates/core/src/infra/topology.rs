// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::InfraError;
use crate::Resources;

/// Latency key of the reference point users attach to.
pub const USER: &str = "user";

/// One PoP as declared in a topology file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopSpec {
    pub id: String,
    pub capacity: Resources,
    #[serde(default)]
    pub latency_ms: BTreeMap<String, f64>,
}

impl PopSpec {
    pub fn new(id: impl Into<String>, capacity: Resources) -> Self {
        PopSpec { id: id.into(), capacity, latency_ms: BTreeMap::new() }
    }

    pub fn with_latency(mut self, to: impl Into<String>, ms: f64) -> Self {
        self.latency_ms.insert(to.into(), ms);
        self
    }

    /// Latency to the user reference point; 0 when undeclared.
    pub fn user_latency(&self) -> f64 {
        self.latency_ms.get(USER).copied().unwrap_or(0.0)
    }
}

pub fn parse_topology(text: &str) -> Result<Vec<PopSpec>, InfraError> {
    let pops: Vec<PopSpec> =
        serde_yaml::from_str(text).map_err(|e| InfraError::InvalidTopology(e.to_string()))?;
    check_topology(pops)
}

/// Check a topology and normalize it: latency to self is filled in as 0.
pub fn check_topology(mut pops: Vec<PopSpec>) -> Result<Vec<PopSpec>, InfraError> {
    let bad = |m: String| Err(InfraError::InvalidTopology(m));
    if pops.is_empty() {
        return bad("topology has no PoPs".into());
    }
    let mut ids = BTreeSet::new();
    for p in &pops {
        if p.id.is_empty() || p.id == USER || !p.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_./".contains(c)) {
            return bad(format!("invalid PoP id `{}`", p.id));
        }
        if !ids.insert(p.id.clone()) {
            return bad(format!("duplicate PoP id `{}`", p.id));
        }
    }
    for p in &pops {
        for (to, ms) in &p.latency_ms {
            if !ms.is_finite() || *ms < 0.0 {
                return bad(format!("{}: latency to `{to}` must be a non-negative number", p.id));
            }
            if to == &p.id && *ms != 0.0 {
                return bad(format!("{}: latency to itself must be 0", p.id));
            }
            if to != USER && !ids.contains(to) {
                return bad(format!("{}: latency to unknown PoP `{to}`", p.id));
            }
            if let Some(back) = pops.iter().find(|q| &q.id == to).and_then(|q| q.latency_ms.get(&p.id)) {
                if back != ms {
                    return bad(format!("latency between `{}` and `{to}` is not symmetric", p.id));
                }
            }
        }
    }
    for p in &mut pops {
        p.latency_ms.insert(p.id.clone(), 0.0);
    }
    Ok(pops)
}
