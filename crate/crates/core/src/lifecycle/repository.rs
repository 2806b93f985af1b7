// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use super::{InstanceState, LifecycleError, ServiceInstanceRecord};

/// Instance records. Reads return snapshots; every write is linearizable.
/// With a directory set, each write appends the new record as one YAML
/// document to `instances/<id>.yml` below it.
pub struct Repository {
    records: Mutex<BTreeMap<String, ServiceInstanceRecord>>,
    changed: Condvar,
    dir: Option<PathBuf>,
}

impl Repository {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Repository { records: Mutex::new(BTreeMap::new()), changed: Condvar::new(), dir }
    }

    fn persist(&self, r: &ServiceInstanceRecord) {
        let Some(dir) = &self.dir else { return };
        let dir = dir.join("instances");
        let result = std::fs::create_dir_all(&dir).and_then(|_| {
            let doc = serde_yaml::to_string(r).map_err(std::io::Error::other)?;
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(dir.join(format!("{}.yml", r.id)))?;
            write!(f, "---\n{doc}")
        });
        if let Err(e) = result {
            tracing::warn!(instance = %r.id, error = %e, "could not persist record");
        }
    }

    pub fn insert(&self, r: ServiceInstanceRecord) {
        let mut m = self.records.lock();
        self.persist(&r);
        m.insert(r.id.clone(), r);
        self.changed.notify_all();
    }

    pub fn get(&self, id: &str) -> Option<ServiceInstanceRecord> {
        self.records.lock().get(id).cloned()
    }

    pub fn all(&self) -> Vec<ServiceInstanceRecord> {
        self.records.lock().values().cloned().collect()
    }

    /// Apply `f` to a record. A state change must follow the edge set.
    pub fn update<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut ServiceInstanceRecord) -> T,
    ) -> Result<T, LifecycleError> {
        let mut m = self.records.lock();
        let r = m.get_mut(id).ok_or_else(|| LifecycleError::UnknownInstance(id.to_string()))?;
        let before = r.state;
        let mut next = r.clone();
        let out = f(&mut next);
        if next.state != before && !before.can_transition(next.state) {
            return Err(LifecycleError::Internal(format!("illegal transition {before} -> {}", next.state)));
        }
        self.persist(&next);
        *r = next;
        self.changed.notify_all();
        Ok(out)
    }

    /// Block until the record satisfies `pred`, or time out.
    pub fn wait_until(
        &self,
        id: &str,
        timeout: Duration,
        pred: impl Fn(&ServiceInstanceRecord) -> bool,
    ) -> Option<ServiceInstanceRecord> {
        let deadline = Instant::now() + timeout;
        let mut m = self.records.lock();
        loop {
            if let Some(r) = m.get(id) {
                if pred(r) {
                    return Some(r.clone());
                }
            }
            if self.changed.wait_until(&mut m, deadline).timed_out() {
                return m.get(id).filter(|r| pred(r)).cloned();
            }
        }
    }

    /// Block until the record reaches one of `states`.
    pub fn wait_for_state(&self, id: &str, states: &[InstanceState], timeout: Duration) -> Option<ServiceInstanceRecord> {
        self.wait_until(id, timeout, |r| states.contains(&r.state))
    }
}
