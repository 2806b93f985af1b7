// SPDX-License-Identifier: Apache-2.0

//! Emulated multi-PoP infrastructure.
//!
//! Lock order is PoP (ascending id) before the allocation table before the
//! chain table. Admission takes only the target PoP's lock plus the table,
//! so allocations on different PoPs do not serialize on each other's
//! capacity check.

mod metrics;
mod topology;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::Resources;

pub use metrics::{MetricSample, Workload, WorkloadProfile};
pub use topology::{check_topology, parse_topology, PopSpec, USER};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum InfraError {
    #[error("unknown PoP `{0}`")]
    UnknownPop(String),
    #[error("insufficient capacity on `{pop}`, short by {deficit}")]
    InsufficientCapacity { pop: String, deficit: Resources },
    #[error("allocation must request at least one core and 1 MB: {0}")]
    InvalidResources(Resources),
    #[error("chain hop references `{0}`, which has no live allocation there")]
    DanglingHop(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AllocationId(pub u64);

impl fmt::Display for AllocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "alloc-{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChainId(pub u64);

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "chain-{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub id: AllocationId,
    pub pop: String,
    pub resources: Resources,
    /// Service instance the allocation belongs to.
    pub owner: String,
    /// Function instance running on it.
    pub label: String,
    /// Logical time of creation.
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChainHopSpec {
    pub pop: String,
    pub function_instance: String,
    pub cp: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainInstallation {
    pub id: ChainId,
    pub owner: String,
    pub hops: Vec<ChainHopSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopState {
    pub id: String,
    pub capacity: Resources,
    pub used: Resources,
    pub latency_ms: BTreeMap<String, f64>,
}

impl PopState {
    pub fn free(&self) -> Resources {
        self.capacity - self.used
    }

    pub fn user_latency(&self) -> f64 {
        self.latency_ms.get(USER).copied().unwrap_or(0.0)
    }
}

/// Consistent copy of the whole infrastructure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfraSnapshot {
    pub pops: BTreeMap<String, PopState>,
    pub allocations: BTreeMap<AllocationId, Allocation>,
    pub chains: BTreeMap<ChainId, ChainInstallation>,
}

impl InfraSnapshot {
    pub fn used(&self) -> BTreeMap<String, Resources> {
        self.pops.iter().map(|(k, p)| (k.clone(), p.used)).collect()
    }

    pub fn total_free(&self) -> Resources {
        self.pops.values().map(PopState::free).sum()
    }

    pub fn total_capacity(&self) -> Resources {
        self.pops.values().map(|p| p.capacity).sum()
    }

    /// Allocations grouped per owner, summed.
    pub fn by_owner(&self) -> BTreeMap<String, Resources> {
        let mut out: BTreeMap<String, Resources> = BTreeMap::new();
        for a in self.allocations.values() {
            *out.entry(a.owner.clone()).or_default() += a.resources;
        }
        out
    }
}

#[derive(Debug)]
struct Pop {
    capacity: Resources,
    used: Resources,
    latency_ms: BTreeMap<String, f64>,
}

#[derive(Debug)]
pub struct Infrastructure {
    pops: BTreeMap<String, Mutex<Pop>>,
    allocations: Mutex<BTreeMap<AllocationId, Allocation>>,
    chains: Mutex<BTreeMap<ChainId, ChainInstallation>>,
    next_id: AtomicU64,
    clock: AtomicU64,
}

impl Infrastructure {
    pub fn new(pops: Vec<PopSpec>) -> Result<Self, InfraError> {
        let pops = check_topology(pops)?;
        Ok(Infrastructure {
            pops: pops
                .into_iter()
                .map(|p| (p.id, Mutex::new(Pop { capacity: p.capacity, used: Resources::ZERO, latency_ms: p.latency_ms })))
                .collect(),
            allocations: Mutex::new(BTreeMap::new()),
            chains: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            clock: AtomicU64::new(0),
        })
    }

    pub fn from_yaml(text: &str) -> Result<Self, InfraError> {
        Self::new(parse_topology(text)?)
    }

    pub fn pop_ids(&self) -> Vec<String> {
        self.pops.keys().cloned().collect()
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::SeqCst)
    }

    fn pop(&self, id: &str) -> Result<&Mutex<Pop>, InfraError> {
        self.pops.get(id).ok_or_else(|| InfraError::UnknownPop(id.to_string()))
    }

    pub fn allocate(
        &self,
        pop_id: &str,
        resources: Resources,
        owner: &str,
        label: &str,
    ) -> Result<Allocation, InfraError> {
        if !resources.is_valid_requirement() {
            return Err(InfraError::InvalidResources(resources));
        }
        let mut pop = self.pop(pop_id)?.lock();
        let free = pop.capacity - pop.used;
        if let Some(deficit) = resources.deficit(&free) {
            return Err(InfraError::InsufficientCapacity { pop: pop_id.to_string(), deficit });
        }
        pop.used += resources;
        let alloc = Allocation {
            id: AllocationId(self.next_id.fetch_add(1, Ordering::SeqCst)),
            pop: pop_id.to_string(),
            resources,
            owner: owner.to_string(),
            label: label.to_string(),
            created_at: self.tick(),
        };
        self.allocations.lock().insert(alloc.id, alloc.clone());
        tracing::debug!(id = %alloc.id, pop = pop_id, %resources, owner, "allocated");
        Ok(alloc)
    }

    /// Release an allocation. Returns whether it was still live.
    pub fn release(&self, id: AllocationId) -> bool {
        let Some(pop_id) = self.allocations.lock().get(&id).map(|a| a.pop.clone()) else {
            return false;
        };
        let mut pop = self.pops[&pop_id].lock();
        let Some(alloc) = self.allocations.lock().remove(&id) else {
            return false;
        };
        pop.used -= alloc.resources;
        tracing::debug!(%id, pop = %pop_id, "released");
        true
    }

    pub fn allocation(&self, id: AllocationId) -> Option<Allocation> {
        self.allocations.lock().get(&id).cloned()
    }

    pub fn install_chain(&self, owner: &str, hops: Vec<ChainHopSpec>) -> Result<ChainInstallation, InfraError> {
        let allocs = self.allocations.lock();
        for h in &hops {
            let live = allocs.values().any(|a| a.label == h.function_instance && a.pop == h.pop);
            if !live {
                return Err(InfraError::DanglingHop(h.function_instance.clone()));
            }
        }
        let chain = ChainInstallation {
            id: ChainId(self.next_id.fetch_add(1, Ordering::SeqCst)),
            owner: owner.to_string(),
            hops,
        };
        self.chains.lock().insert(chain.id, chain.clone());
        Ok(chain)
    }

    /// Remove a chain. Returns whether it was installed.
    pub fn uninstall_chain(&self, id: ChainId) -> bool {
        self.chains.lock().remove(&id).is_some()
    }

    pub fn snapshot(&self) -> InfraSnapshot {
        let guards: Vec<_> = self.pops.iter().map(|(k, m)| (k, m.lock())).collect();
        let allocations = self.allocations.lock().clone();
        let chains = self.chains.lock().clone();
        let pops = guards
            .iter()
            .map(|(k, p)| {
                let state = PopState {
                    id: (*k).clone(),
                    capacity: p.capacity,
                    used: p.used,
                    latency_ms: p.latency_ms.clone(),
                };
                ((*k).clone(), state)
            })
            .collect();
        InfraSnapshot { pops, allocations, chains }
    }

    /// Samples for every live function instance at `tick`, in allocation order.
    pub fn emit_metrics(&self, workload: &Workload, tick: u64) -> Vec<MetricSample> {
        let allocs: Vec<Allocation> = self.allocations.lock().values().cloned().collect();
        allocs
            .into_iter()
            .filter_map(|a| {
                let p = workload.profile_for(&a.label)?;
                Some(MetricSample {
                    metric: p.metric.clone(),
                    timestamp: p.timestamp(tick),
                    value: p.value(&a.label, tick),
                    instance_id: a.label,
                    owner: a.owner,
                })
            })
            .collect()
    }
}
