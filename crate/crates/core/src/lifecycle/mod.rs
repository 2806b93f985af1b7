// SPDX-License-Identifier: Apache-2.0

//! Service and function lifecycle management.
//!
//! The service lifecycle manager (SLM) runs each instance's workflows as a
//! saga on a worker dedicated to that instance: every completed step pushes
//! a compensation, and a failed step unwinds them in reverse. Different
//! instances progress in parallel. The function lifecycle manager (FLM)
//! and the infrastructure adaptor own the actual allocations and chains.

mod flm;
mod repository;
mod slm;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::descriptors::Identity;
use crate::infra::{AllocationId, ChainId};
use crate::Resources;

pub use flm::{FunctionLifecycleManager, InfrastructureAdaptor};
pub use repository::Repository;
pub use slm::{LifecycleConfig, ServiceLifecycleManager};

pub const TOPIC_CREATE: &str = "service.instances.create.request";
pub const TOPIC_TERMINATE: &str = "service.instances.terminate.request";
pub const TOPIC_SCALE: &str = "service.instances.scale.request";
pub const TOPIC_EVENTS: &str = "service.instances.events";
pub const TOPIC_PLACEMENT: &str = "service.placement.request";
pub const TOPIC_DEPLOY: &str = "function.lifecycle.deploy.request";
pub const TOPIC_RELEASE: &str = "function.lifecycle.release.request";
pub const TOPIC_CHAIN_INSTALL: &str = "infrastructure.chain.install.request";
pub const TOPIC_CHAIN_UNINSTALL: &str = "infrastructure.chain.uninstall.request";
pub const TOPIC_SLICE_ADMIT: &str = "platform.slice.admit.request";
pub const TOPIC_SLICE_RELEASE: &str = "platform.slice.release.request";
pub const TOPIC_DELEGATE: &str = "platform.recursion.delegate.request";
pub const TOPIC_REMOTE_TERMINATE: &str = "platform.recursion.terminate.request";
pub const TOPIC_CHILD_CAPACITY: &str = "platform.recursion.capacity.request";

/// Prefix of pseudo-PoPs standing for child platforms in a placement.
pub const CHILD_POP_PREFIX: &str = "child/";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InstanceState {
    Requested,
    Validated,
    Placed,
    Deploying,
    Running,
    Scaling,
    Terminating,
    Terminated,
    Error,
}

impl InstanceState {
    pub const ALL: [InstanceState; 9] = [
        InstanceState::Requested,
        InstanceState::Validated,
        InstanceState::Placed,
        InstanceState::Deploying,
        InstanceState::Running,
        InstanceState::Scaling,
        InstanceState::Terminating,
        InstanceState::Terminated,
        InstanceState::Error,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, InstanceState::Terminated | InstanceState::Error)
    }

    /// The declared edge set.
    pub fn can_transition(self, to: InstanceState) -> bool {
        use InstanceState::*;
        matches!(
            (self, to),
            (Requested, Validated)
                | (Validated, Placed)
                | (Placed, Deploying)
                | (Deploying, Running)
                | (Running, Scaling)
                | (Scaling, Running)
                | (Running, Terminating)
                | (Terminating, Terminated)
        ) || (to == Error && !self.is_terminal())
    }
}

impl fmt::Display for InstanceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

/// One deployed replica of one function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionInstanceRecord {
    pub id: String,
    /// The function's id within the service.
    pub vnf_id: String,
    pub vnf: Identity,
    pub pop: String,
    pub allocation: AllocationId,
    pub resources: Resources,
    pub replica_index: u32,
}

/// Where a delegated instance lives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteHandle {
    pub child: String,
    pub instance_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceInstanceRecord {
    pub id: String,
    pub service: Identity,
    #[serde(default)]
    pub package_id: Option<String>,
    pub state: InstanceState,
    /// Function id → PoP of replica 0. Set on entering PLACED.
    #[serde(default)]
    pub placement: BTreeMap<String, String>,
    /// Live replicas, ordered by function id then replica index.
    #[serde(default)]
    pub function_instances: Vec<FunctionInstanceRecord>,
    #[serde(default)]
    pub slice_id: Option<String>,
    pub owner: String,
    #[serde(default)]
    pub error_cause: Option<String>,
    #[serde(default)]
    pub remote: Option<RemoteHandle>,
    #[serde(default)]
    pub chain: Option<ChainId>,
    /// Placement restriction, kept for scale-out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_pops: Option<Vec<String>>,
    /// Counter behind function instance ids.
    #[serde(default)]
    pub next_function_instance: u64,
}

impl ServiceInstanceRecord {
    pub fn replicas(&self, vnf_id: &str) -> u32 {
        self.function_instances.iter().filter(|f| f.vnf_id == vnf_id).count() as u32
    }

    pub fn replica_counts(&self) -> BTreeMap<String, u32> {
        let mut out: BTreeMap<String, u32> = self.placement.keys().map(|k| (k.clone(), 0)).collect();
        for f in &self.function_instances {
            *out.entry(f.vnf_id.clone()).or_default() += 1;
        }
        out
    }

    /// Resources held by the live replicas.
    pub fn held(&self) -> Resources {
        self.function_instances.iter().map(|f| f.resources).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstantiateOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_id: Option<String>,
    /// Restrict placement to these PoPs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pops: Option<Vec<String>>,
    /// Delegation path of child platform ids, outermost first. When set,
    /// even to an empty path, it overrides the descriptor's annotation;
    /// a forwarded request carries the rest of its path this way.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delegate_to: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub service: Identity,
    pub owner: String,
    #[serde(default)]
    pub package_id: Option<String>,
    #[serde(default)]
    pub options: InstantiateOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRequest {
    pub instance_id: String,
    pub vnf: String,
    pub target: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "error", content = "detail", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LifecycleError {
    #[error("unknown service `{0}`")]
    UnknownService(String),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("instance has no function `{0}`")]
    UnknownFunction(String),
    #[error("invalid replica target {0}")]
    InvalidTarget(u32),
    #[error("instance is {0}, not RUNNING")]
    NotRunning(String),
    #[error("scaling failed: {0}")]
    ScaleFailed(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// Reply envelope used on every lifecycle request topic.
pub(crate) fn reply_ok(v: impl Serialize) -> serde_json::Value {
    serde_json::json!({ "ok": v })
}

pub(crate) fn reply_err(e: impl fmt::Display) -> serde_json::Value {
    serde_json::json!({ "error": e.to_string() })
}

/// Unwrap a reply envelope.
pub(crate) fn unwrap_reply(v: serde_json::Value) -> Result<serde_json::Value, String> {
    match v {
        serde_json::Value::Object(mut m) => {
            if let Some(ok) = m.remove("ok") {
                Ok(ok)
            } else if let Some(e) = m.remove("error") {
                Err(e.as_str().map(str::to_owned).unwrap_or_else(|| e.to_string()))
            } else {
                Err("malformed reply".into())
            }
        }
        other => Err(format!("malformed reply: {other}")),
    }
}
