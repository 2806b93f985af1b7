// SPDX-License-Identifier: Apache-2.0

//! Slice manager: flat slices enforce a quota inside this platform; nested
//! slices run a child platform sized to the quota.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::broker::Message;
use crate::lifecycle::{reply_err, reply_ok, TOPIC_SLICE_ADMIT, TOPIC_SLICE_RELEASE};
use crate::plugin::{Plugin, PluginContext, PluginManifest};
use crate::Resources;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SliceMode {
    Flat,
    Nested,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub id: String,
    pub quota: Resources,
    /// Resources admitted so far. Only tracked for FLAT slices; a nested
    /// slice's child platform enforces its own bound.
    pub used: Resources,
    pub mode: SliceMode,
    pub tenant: String,
    /// Child platform id of a NESTED slice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child: Option<String>,
    /// Admitted resources per instance.
    #[serde(default)]
    pub instances: BTreeMap<String, Resources>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SliceError {
    #[error("quota exceeds the unsliced capacity by {deficit}")]
    QuotaExceedsCapacity { deficit: Resources },
    #[error("quota must include at least one core and 1 MB: {0}")]
    InvalidQuota(Resources),
    #[error("could not start the slice platform: {0}")]
    SpawnFailed(String),
    #[error("unknown slice `{0}`")]
    UnknownSlice(String),
    #[error("slice `{0}` still has live instances")]
    SliceNotEmpty(String),
    #[error("request exceeds the slice quota by {deficit} ({})", .deficit.nonzero_components().join(", "))]
    Rejected { deficit: Resources },
    #[error("`{0}` is not the tenant of this slice")]
    Forbidden(String),
}

/// Starts and stops the child platforms behind nested slices.
pub trait NestedFactory: Send + Sync {
    /// Start a child platform with `quota` capacity and register it as a
    /// child. Returns its platform id.
    fn spawn(&self, slice_id: &str, quota: Resources) -> Result<String, String>;
    /// Whether the child has no live instances.
    fn drained(&self, child: &str) -> bool;
    fn retire(&self, child: &str);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmitOutcome {
    pub mode: SliceMode,
    #[serde(default)]
    pub child: Option<String>,
}

/// Slice table. Creation, deletion and admission are serialized.
pub struct SliceManager {
    capacity: Resources,
    slices: Mutex<(u64, BTreeMap<String, Slice>)>,
    factory: Option<Arc<dyn NestedFactory>>,
}

impl SliceManager {
    pub fn new(capacity: Resources, factory: Option<Arc<dyn NestedFactory>>) -> Self {
        SliceManager { capacity, slices: Mutex::new((0, BTreeMap::new())), factory }
    }

    pub fn create_slice(&self, quota: Resources, mode: SliceMode, tenant: &str) -> Result<Slice, SliceError> {
        if !quota.is_valid_requirement() {
            return Err(SliceError::InvalidQuota(quota));
        }
        let mut guard = self.slices.lock();
        let reserved: Resources = guard.1.values().map(|s| s.quota).sum();
        let free = self.capacity.saturating_sub(&reserved);
        if let Some(deficit) = quota.deficit(&free) {
            return Err(SliceError::QuotaExceedsCapacity { deficit });
        }
        guard.0 += 1;
        let id = format!("slice-{}", guard.0);
        let child = match mode {
            SliceMode::Flat => None,
            SliceMode::Nested => {
                let f = self.factory.as_ref().ok_or_else(|| SliceError::SpawnFailed("nested slices are not enabled".into()))?;
                Some(f.spawn(&id, quota).map_err(SliceError::SpawnFailed)?)
            }
        };
        let slice = Slice { id: id.clone(), quota, used: Resources::ZERO, mode, tenant: tenant.into(), child, instances: BTreeMap::new() };
        guard.1.insert(id, slice.clone());
        Ok(slice)
    }

    pub fn get(&self, id: &str) -> Option<Slice> {
        self.slices.lock().1.get(id).cloned()
    }

    pub fn slices(&self) -> Vec<Slice> {
        self.slices.lock().1.values().cloned().collect()
    }

    /// Admit `requested` for an instance owned by `owner`. FLAT slices
    /// admit iff the total stays within quota; NESTED slices always admit
    /// and name the child platform to delegate to.
    pub fn admit(&self, slice_id: &str, instance: &str, owner: &str, requested: Resources) -> Result<AdmitOutcome, SliceError> {
        let mut guard = self.slices.lock();
        let s = guard.1.get_mut(slice_id).ok_or_else(|| SliceError::UnknownSlice(slice_id.into()))?;
        if s.tenant != owner {
            return Err(SliceError::Forbidden(owner.into()));
        }
        if s.mode == SliceMode::Flat {
            let after = s.used + requested;
            if let Some(deficit) = after.deficit(&s.quota) {
                return Err(SliceError::Rejected { deficit });
            }
            s.used = after;
            *s.instances.entry(instance.into()).or_default() += requested;
        } else {
            s.instances.entry(instance.into()).or_default();
        }
        Ok(AdmitOutcome { mode: s.mode, child: s.child.clone() })
    }

    /// Return an instance's resources, or part of them. Idempotent.
    pub fn release(&self, slice_id: &str, instance: &str, resources: Option<Resources>) -> Result<(), SliceError> {
        let mut guard = self.slices.lock();
        let s = guard.1.get_mut(slice_id).ok_or_else(|| SliceError::UnknownSlice(slice_id.into()))?;
        let Some(held) = s.instances.get_mut(instance) else { return Ok(()) };
        let give_back = match resources {
            Some(r) => r.min_componentwise(held),
            None => *held,
        };
        *held = held.saturating_sub(&give_back);
        s.used = s.used.saturating_sub(&give_back);
        if resources.is_none() || held.is_zero() {
            s.instances.remove(instance);
        }
        Ok(())
    }

    pub fn delete_slice(&self, id: &str) -> Result<Slice, SliceError> {
        let mut guard = self.slices.lock();
        let s = guard.1.get(id).ok_or_else(|| SliceError::UnknownSlice(id.into()))?;
        let busy = match (&s.child, &self.factory) {
            (Some(c), Some(f)) => !f.drained(c),
            _ => !s.instances.is_empty(),
        };
        if busy {
            return Err(SliceError::SliceNotEmpty(id.into()));
        }
        let s = guard.1.remove(id).expect("present");
        if let (Some(c), Some(f)) = (&s.child, &self.factory) {
            f.retire(c);
        }
        Ok(s)
    }

    /// Retire every nested child platform.
    pub fn shutdown(&self) {
        let guard = self.slices.lock();
        if let Some(f) = &self.factory {
            for c in guard.1.values().filter_map(|s| s.child.as_ref()) {
                f.retire(c);
            }
        }
    }
}

#[derive(Deserialize)]
struct AdmitRequest {
    slice_id: String,
    instance_id: String,
    owner: String,
    resources: Resources,
}

#[derive(Deserialize)]
struct ReleaseRequest {
    slice_id: String,
    instance_id: String,
    #[serde(default)]
    resources: Option<Resources>,
}

/// Broker front of the slice manager.
pub struct SlicePlugin {
    pub manager: Arc<SliceManager>,
}

impl Plugin for SlicePlugin {
    fn manifest(&self) -> PluginManifest {
        PluginManifest::new("slice-manager")
            .subscribes(&[TOPIC_SLICE_ADMIT, TOPIC_SLICE_RELEASE])
            .publishes(&["platform.slice.*.response"])
    }

    fn handle(&mut self, ctx: &PluginContext, msg: &Message) {
        let topic = msg.topic.to_string();
        let out: Value = if topic == TOPIC_SLICE_ADMIT {
            match serde_json::from_value::<AdmitRequest>(msg.payload.clone()) {
                Ok(r) => match self.manager.admit(&r.slice_id, &r.instance_id, &r.owner, r.resources) {
                    Ok(o) => reply_ok(o),
                    Err(e) => reply_err(e),
                },
                Err(e) => reply_err(format!("malformed admit request: {e}")),
            }
        } else if topic == TOPIC_SLICE_RELEASE {
            match serde_json::from_value::<ReleaseRequest>(msg.payload.clone()) {
                Ok(r) => match self.manager.release(&r.slice_id, &r.instance_id, r.resources) {
                    Ok(()) => reply_ok(true),
                    Err(e) => reply_err(e),
                },
                Err(e) => reply_err(format!("malformed release request: {e}")),
            }
        } else {
            return;
        };
        let _ = ctx.reply(msg, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_examples() {
        let m = SliceManager::new(Resources::new(8, 8192, 100), None);
        let s = m.create_slice(Resources::new(4, 4096, 10), SliceMode::Flat, "alice").unwrap();
        assert_eq!(s.used, Resources::ZERO);
        assert!(matches!(
            m.create_slice(Resources::new(5, 1024, 0), SliceMode::Flat, "bob"),
            Err(SliceError::QuotaExceedsCapacity { .. })
        ));
        assert!(m.admit(&s.id, "si-1", "alice", Resources::new(2, 1024, 0)).is_ok());
        let err = m.admit(&s.id, "si-2", "alice", Resources::new(1, 4000, 0)).unwrap_err();
        assert_eq!(err, SliceError::Rejected { deficit: Resources::new(0, 928, 0) });
        assert!(err.to_string().contains("memory_mb"));
        m.release(&s.id, "si-1", None).unwrap();
        m.release(&s.id, "si-1", None).unwrap();
        assert_eq!(m.get(&s.id).unwrap().used, Resources::ZERO);
        assert!(matches!(m.admit(&s.id, "si-3", "bob", Resources::new(1, 1, 0)), Err(SliceError::Forbidden(_))));
        assert!(matches!(m.create_slice(Resources::new(1, 1, 0), SliceMode::Nested, "x"), Err(SliceError::SpawnFailed(_))));
    }

    #[test]
    fn delete_requires_empty() {
        let m = SliceManager::new(Resources::new(8, 8192, 100), None);
        let s = m.create_slice(Resources::new(8, 8192, 100), SliceMode::Flat, "t").unwrap();
        m.admit(&s.id, "si-1", "t", Resources::new(1, 1, 0)).unwrap();
        assert_eq!(m.delete_slice(&s.id), Err(SliceError::SliceNotEmpty(s.id.clone())));
        m.release(&s.id, "si-1", Some(Resources::new(1, 1, 0))).unwrap();
        assert!(m.delete_slice(&s.id).is_ok());
        assert!(m.create_slice(Resources::new(8, 8192, 100), SliceMode::Flat, "t").is_ok());
    }
}
