// SPDX-License-Identifier: Apache-2.0

//! MANO plugin registration, permission grants and liveness.

mod host;
mod manager;
mod policy;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::broker::{BrokerError, Pattern, PermissionSet};
use crate::descriptors::{ExecutiveKind, Version};

pub use host::{Plugin, PluginContext};
pub use manager::{LivenessConfig, PluginManager, Registration};
pub use policy::{Decision, Effect, PolicyRule, PolicyTable, Scope};

pub const HEARTBEAT_TOPIC: &str = "platform.management.plugin.heartbeat";

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PluginError {
    #[error("pattern `{0}` is blacklisted by the operator policy")]
    PolicyViolation(Pattern),
    #[error("unknown plugin `{0}`")]
    UnknownPlugin(PluginId),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PluginId(pub String);

impl fmt::Display for PluginId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PluginManifest {
    pub name: String,
    pub version: Version,
    #[serde(default)]
    pub wants_publish: Vec<Pattern>,
    #[serde(default)]
    pub wants_subscribe: Vec<Pattern>,
    /// Set for executive plugins that host FSMs/SSMs.
    #[serde(default)]
    pub executive: Option<ExecutiveKind>,
}

impl PluginManifest {
    pub fn new(name: impl Into<String>) -> Self {
        PluginManifest {
            name: name.into(),
            version: Version::new(0, 1, 0),
            wants_publish: Vec::new(),
            wants_subscribe: Vec::new(),
            executive: None,
        }
    }

    /// Builder helper; panics on an invalid pattern literal.
    pub fn publishes(mut self, patterns: &[&str]) -> Self {
        self.wants_publish.extend(patterns.iter().map(|p| p.parse::<Pattern>().expect("valid pattern")));
        self
    }

    /// Builder helper; panics on an invalid pattern literal.
    pub fn subscribes(mut self, patterns: &[&str]) -> Self {
        self.wants_subscribe.extend(patterns.iter().map(|p| p.parse::<Pattern>().expect("valid pattern")));
        self
    }

    pub fn executive(mut self, kind: ExecutiveKind) -> Self {
        self.executive = Some(kind);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PluginState {
    Registered,
    Running,
    Suspect,
    Deregistered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PluginRecord {
    pub id: PluginId,
    pub manifest: PluginManifest,
    pub granted: PermissionSet,
    pub state: PluginState,
    /// Registration time until the first heartbeat arrives.
    pub last_heartbeat_ms: u64,
    pub core: bool,
}
