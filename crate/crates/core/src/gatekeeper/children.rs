// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::transport::ApiClient;
use crate::broker::Message;
use crate::catalogue::Catalogue;
use crate::descriptors::Identity;
use crate::lifecycle::{reply_err, reply_ok, InstanceState, TOPIC_CHILD_CAPACITY, TOPIC_DELEGATE, TOPIC_REMOTE_TERMINATE};
use crate::plugin::{Plugin, PluginContext, PluginManifest};
use crate::Resources;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildPlatformRecord {
    /// The child's own platform id.
    pub id: String,
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub credentials: String,
    /// Parent instance ids delegated to this child.
    pub delegated: BTreeSet<String>,
    pub live: bool,
    /// Platform ids in the child's tree, the child included.
    pub subtree: Vec<String>,
}

impl ChildPlatformRecord {
    pub fn client(&self, timeout: Duration) -> ApiClient {
        ApiClient { endpoint: self.endpoint.clone(), token: self.credentials.clone(), timeout }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ChildError {
    #[error("child platform unreachable: {0}")]
    Unreachable(String),
    #[error("registering `{0}` would create a cycle")]
    Cycle(String),
    #[error("child `{0}` is already registered")]
    Duplicate(String),
    #[error("unknown child platform `{0}`")]
    Unknown(String),
    #[error("child platform error: {0}")]
    Remote(String),
}

#[derive(Default)]
pub struct Children {
    records: RwLock<BTreeMap<String, ChildPlatformRecord>>,
}

#[derive(Deserialize)]
struct Health {
    platform_id: String,
    #[serde(default)]
    subtree: Vec<String>,
}

impl Children {
    pub fn new() -> Self {
        Self::default()
    }

    /// Probe a child and record it. `own_id` must not occur in the
    /// child's tree.
    pub fn register(&self, own_id: &str, endpoint: &str, credentials: &str, timeout: Duration) -> Result<ChildPlatformRecord, ChildError> {
        let client = ApiClient { endpoint: endpoint.into(), token: credentials.into(), timeout };
        let resp = client.get("/health", &[]).map_err(|e| ChildError::Unreachable(e.to_string()))?;
        if resp.status != 200 {
            return Err(ChildError::Unreachable(format!("health probe answered {}: {}", resp.status, resp.body)));
        }
        let h: Health = serde_json::from_value(resp.body).map_err(|e| ChildError::Unreachable(e.to_string()))?;
        let mut subtree = h.subtree;
        if !subtree.contains(&h.platform_id) {
            subtree.push(h.platform_id.clone());
        }
        if subtree.iter().any(|id| id == own_id) {
            return Err(ChildError::Cycle(h.platform_id));
        }
        let mut records = self.records.write();
        if records.contains_key(&h.platform_id) {
            return Err(ChildError::Duplicate(h.platform_id));
        }
        let rec = ChildPlatformRecord {
            id: h.platform_id.clone(),
            endpoint: endpoint.into(),
            credentials: credentials.into(),
            delegated: BTreeSet::new(),
            live: true,
            subtree,
        };
        records.insert(h.platform_id, rec.clone());
        Ok(rec)
    }

    pub fn remove(&self, id: &str) -> Option<ChildPlatformRecord> {
        self.records.write().remove(id)
    }

    pub fn get(&self, id: &str) -> Option<ChildPlatformRecord> {
        self.records.read().get(id).cloned()
    }

    pub fn all(&self) -> Vec<ChildPlatformRecord> {
        self.records.read().values().cloned().collect()
    }

    /// Every platform id below this one.
    pub fn descendants(&self) -> Vec<String> {
        let mut out: Vec<String> = self.records.read().values().flat_map(|r| r.subtree.iter().cloned()).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Re-probe every child and record its current tree. A child that
    /// does not answer keeps its last known tree and is marked not live.
    pub fn refresh(&self, timeout: Duration) {
        for rec in self.all() {
            let probed = rec
                .client(timeout)
                .get("/health", &[])
                .ok()
                .filter(|r| r.status == 200)
                .and_then(|r| serde_json::from_value::<Health>(r.body).ok());
            self.update(&rec.id, |r| match probed {
                Some(h) => {
                    r.live = true;
                    r.subtree = h.subtree;
                    if !r.subtree.contains(&h.platform_id) {
                        r.subtree.push(h.platform_id);
                    }
                }
                None => r.live = false,
            });
        }
    }

    /// Summed `(free, capacity)` advertised by the live children.
    pub fn advertised(&self, timeout: Duration) -> (Resources, Resources) {
        let mut free = Resources::ZERO;
        let mut capacity = Resources::ZERO;
        for rec in self.all().into_iter().filter(|r| r.live) {
            let Ok(resp) = rec.client(timeout).get("/capacity", &[]) else {
                self.update(&rec.id, |r| r.live = false);
                continue;
            };
            let read = |k: &str| serde_json::from_value::<Resources>(resp.body[k].clone()).ok();
            if let (Some(f), Some(c)) = (read("free"), read("capacity")) {
                free += f;
                capacity += c;
            }
        }
        (free, capacity)
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut ChildPlatformRecord)) {
        if let Some(r) = self.records.write().get_mut(id) {
            f(r);
        }
    }
}

/// Answers delegation requests from the lifecycle manager by driving a
/// child platform's API. Each request runs on its own thread, so a slow
/// child does not hold up others.
pub struct RecursionPlugin {
    pub children: Arc<Children>,
    pub catalogue: Arc<Catalogue>,
    pub timeout: Duration,
}

#[derive(Deserialize)]
struct DelegateRequest {
    instance_id: String,
    child: String,
    package_id: Option<String>,
    service: Identity,
    #[serde(default)]
    delegate_to: Vec<String>,
}

#[derive(Deserialize)]
struct RemoteTerminate {
    child: String,
    remote_id: String,
}

#[derive(Deserialize)]
struct ChildRef {
    child: String,
}

fn remote_err(r: &super::ApiResponse) -> ChildError {
    ChildError::Remote(format!("{}: {}", r.status, r.body))
}

struct Worker {
    children: Arc<Children>,
    catalogue: Arc<Catalogue>,
    timeout: Duration,
}

impl Worker {
    fn child(&self, id: &str) -> Result<(ChildPlatformRecord, ApiClient), ChildError> {
        let rec = self.children.get(id).ok_or_else(|| ChildError::Unknown(id.into()))?;
        let client = rec.client(self.timeout);
        Ok((rec, client))
    }

    fn unreachable(&self, child: &str, e: impl std::fmt::Display) -> ChildError {
        self.children.update(child, |r| r.live = false);
        ChildError::Unreachable(e.to_string())
    }

    fn delegate(&self, r: DelegateRequest) -> Result<Value, ChildError> {
        let (_, client) = self.child(&r.child)?;
        let package_id = r.package_id.ok_or_else(|| ChildError::Remote("service has no package to forward".into()))?;
        let stored = self.catalogue.package(&package_id).ok_or_else(|| ChildError::Remote(format!("unknown package {package_id}")))?;
        let up = client.post_bytes("/packages", stored.archive.to_vec()).map_err(|e| self.unreachable(&r.child, e))?;
        if !(200..300).contains(&up.status) {
            return Err(remote_err(&up));
        }
        let body = json!({
            "package_id": package_id,
            "service": r.service,
            "options": { "delegate_to": r.delegate_to },
        });
        let created = client.post_json("/instances", &body).map_err(|e| self.unreachable(&r.child, e))?;
        if !(200..300).contains(&created.status) {
            return Err(remote_err(&created));
        }
        let remote_id = created.body["instance_id"].as_str().ok_or_else(|| remote_err(&created))?.to_string();
        self.children.update(&r.child, |c| {
            c.delegated.insert(r.instance_id.clone());
        });
        // Leave headroom so the answer arrives before the requester gives up.
        let deadline = Instant::now() + self.timeout.mul_f64(0.9);
        let path = format!("/instances/{remote_id}");
        loop {
            let st = client.get(&path, &[]).map_err(|e| self.unreachable(&r.child, e))?;
            let state: Option<InstanceState> = serde_json::from_value(st.body["state"].clone()).ok();
            match state {
                Some(s @ (InstanceState::Running | InstanceState::Error | InstanceState::Terminated)) => {
                    return Ok(json!({ "remote_id": remote_id, "state": s }));
                }
                _ if Instant::now() >= deadline => {
                    return Ok(json!({ "remote_id": remote_id, "state": state.unwrap_or(InstanceState::Deploying) }));
                }
                _ => std::thread::sleep(Duration::from_millis(2)),
            }
        }
    }

    fn terminate(&self, r: RemoteTerminate) -> Result<Value, ChildError> {
        let (_, client) = self.child(&r.child)?;
        let resp = client.delete(&format!("/instances/{}", r.remote_id)).map_err(|e| self.unreachable(&r.child, e))?;
        if !(200..300).contains(&resp.status) {
            return Err(remote_err(&resp));
        }
        Ok(resp.body)
    }

    fn capacity(&self, r: ChildRef) -> Result<Value, ChildError> {
        let (_, client) = self.child(&r.child)?;
        let resp = client.get("/capacity", &[]).map_err(|e| self.unreachable(&r.child, e))?;
        if resp.status != 200 {
            return Err(remote_err(&resp));
        }
        let free: Resources = serde_json::from_value(resp.body["free"].clone()).map_err(|_| remote_err(&resp))?;
        Ok(json!(free))
    }
}

impl Plugin for RecursionPlugin {
    fn manifest(&self) -> PluginManifest {
        PluginManifest::new("recursion")
            .subscribes(&[TOPIC_DELEGATE, TOPIC_REMOTE_TERMINATE, TOPIC_CHILD_CAPACITY])
            .publishes(&["platform.recursion.*.response"])
    }

    fn handle(&mut self, ctx: &PluginContext, msg: &Message) {
        let topic = msg.topic.to_string();
        if ![TOPIC_DELEGATE, TOPIC_REMOTE_TERMINATE, TOPIC_CHILD_CAPACITY].contains(&topic.as_str()) {
            return;
        }
        let w = Worker { children: self.children.clone(), catalogue: self.catalogue.clone(), timeout: self.timeout };
        let ctx = ctx.clone();
        let msg = msg.clone();
        std::thread::spawn(move || {
            let p = msg.payload.clone();
            let result = if topic == TOPIC_DELEGATE {
                serde_json::from_value(p).map_err(|e| ChildError::Remote(e.to_string())).and_then(|r| w.delegate(r))
            } else if topic == TOPIC_REMOTE_TERMINATE {
                serde_json::from_value(p).map_err(|e| ChildError::Remote(e.to_string())).and_then(|r| w.terminate(r))
            } else {
                serde_json::from_value(p).map_err(|e| ChildError::Remote(e.to_string())).and_then(|r| w.capacity(r))
            };
            let out = match result {
                Ok(v) => reply_ok(v),
                Err(e) => reply_err(e),
            };
            let _ = ctx.reply(&msg, out);
        });
    }
}
