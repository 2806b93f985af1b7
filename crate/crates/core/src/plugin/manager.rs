// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{select, Receiver, Sender};
use parking_lot::{Mutex, RwLock};

use super::host::{run_host, Plugin, PluginContext};
use super::policy::{Decision, PolicyTable};
use super::{PluginError, PluginId, PluginManifest, PluginRecord, PluginState, HEARTBEAT_TOPIC};
use crate::broker::{Broker, ClientId, Mailbox, Pattern, PermissionSet, Topic};
use crate::clock::Clock;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LivenessConfig {
    pub interval_ms: u64,
    /// Silent intervals before RUNNING becomes SUSPECT.
    pub suspect_after: u64,
    /// Silent intervals before eviction.
    pub evict_after: u64,
}

impl Default for LivenessConfig {
    fn default() -> Self {
        LivenessConfig { interval_ms: 2_000, suspect_after: 3, evict_after: 6 }
    }
}

/// Result of a registration: the broker identity and mailbox of the plugin.
#[derive(Debug)]
pub struct Registration {
    pub id: PluginId,
    pub client: ClientId,
    pub granted: PermissionSet,
    pub mailbox: Mailbox,
}

struct Inner {
    broker: Broker,
    clock: Arc<dyn Clock>,
    policy: RwLock<PolicyTable>,
    liveness: LivenessConfig,
    request_timeout: Duration,
    records: Mutex<BTreeMap<PluginId, PluginRecord>>,
    stops: Mutex<HashMap<PluginId, Sender<()>>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    next: AtomicU64,
    shutdown: Mutex<Option<Sender<()>>>,
}

/// Registration table and plugin runtime. Cheap to clone.
#[derive(Clone)]
pub struct PluginManager {
    inner: Arc<Inner>,
}

impl PluginManager {
    pub fn new(
        broker: Broker,
        clock: Arc<dyn Clock>,
        policy: PolicyTable,
        liveness: LivenessConfig,
        request_timeout: Duration,
    ) -> Self {
        PluginManager {
            inner: Arc::new(Inner {
                broker,
                clock,
                policy: RwLock::new(policy),
                liveness,
                request_timeout,
                records: Mutex::new(BTreeMap::new()),
                stops: Mutex::new(HashMap::new()),
                threads: Mutex::new(Vec::new()),
                next: AtomicU64::new(1),
                shutdown: Mutex::new(None),
            }),
        }
    }

    pub fn broker(&self) -> &Broker {
        &self.inner.broker
    }

    pub fn liveness(&self) -> LivenessConfig {
        self.inner.liveness
    }

    pub fn reload_policy(&self, policy: PolicyTable) {
        *self.inner.policy.write() = policy;
    }

    /// Register an untrusted plugin.
    pub fn register(&self, manifest: PluginManifest) -> Result<Registration, PluginError> {
        self.register_with(manifest, false)
    }

    /// Register a plugin shipped with the platform; core-scoped policy
    /// rules apply to it.
    pub fn register_core(&self, manifest: PluginManifest) -> Result<Registration, PluginError> {
        self.register_with(manifest, true)
    }

    fn grant(&self, wants: &[Pattern], core: bool) -> Result<Vec<Pattern>, PluginError> {
        let policy = self.inner.policy.read();
        let mut out = Vec::new();
        for p in wants {
            match policy.decide(p, core) {
                Decision::Grant => out.push(p.clone()),
                Decision::Deny(_) => return Err(PluginError::PolicyViolation(p.clone())),
                Decision::NoMatch => {}
            }
        }
        Ok(out)
    }

    fn register_with(&self, manifest: PluginManifest, core: bool) -> Result<Registration, PluginError> {
        let name = crate::broker::sanitize_segment(&manifest.name);
        if manifest.name.trim().is_empty() {
            return Err(PluginError::InvalidManifest("name must not be empty".into()));
        }
        let granted = PermissionSet {
            publish_allow: self.grant(&manifest.wants_publish, core)?,
            subscribe_allow: self.grant(&manifest.wants_subscribe, core)?,
        };
        let id = PluginId(format!("{name}-{}", self.inner.next.fetch_add(1, Ordering::SeqCst)));
        let client = ClientId(id.0.clone());
        let mailbox = self.inner.broker.register_client(client.clone(), granted.clone())?;
        let record = PluginRecord {
            id: id.clone(),
            manifest,
            granted: granted.clone(),
            state: PluginState::Registered,
            last_heartbeat_ms: self.inner.clock.now_ms(),
            core,
        };
        self.inner.records.lock().insert(id.clone(), record);
        tracing::info!(plugin = %id, core, "registered");
        Ok(Registration { id, client, granted, mailbox })
    }

    pub fn heartbeat(&self, id: &PluginId) -> Result<(), PluginError> {
        let mut records = self.inner.records.lock();
        let r = records.get_mut(id).ok_or_else(|| PluginError::UnknownPlugin(id.clone()))?;
        if r.state == PluginState::Deregistered {
            return Err(PluginError::UnknownPlugin(id.clone()));
        }
        r.last_heartbeat_ms = self.inner.clock.now_ms();
        r.state = PluginState::Running;
        Ok(())
    }

    /// Demote silent plugins and evict the ones silent for too long.
    /// Returns the evicted ids.
    pub fn evict_stale(&self, now_ms: u64) -> Vec<PluginId> {
        let cfg = self.inner.liveness;
        let mut evicted = Vec::new();
        {
            let mut records = self.inner.records.lock();
            for r in records.values_mut() {
                if r.state == PluginState::Deregistered {
                    continue;
                }
                let silent = now_ms.saturating_sub(r.last_heartbeat_ms);
                if silent > cfg.evict_after * cfg.interval_ms {
                    r.state = PluginState::Deregistered;
                    evicted.push(r.id.clone());
                } else if silent > cfg.suspect_after * cfg.interval_ms {
                    r.state = PluginState::Suspect;
                }
            }
        }
        for id in &evicted {
            tracing::warn!(plugin = %id, "evicted after missing heartbeats");
            self.detach(id);
        }
        evicted
    }

    /// Remove a plugin. Idempotent.
    pub fn deregister(&self, id: &PluginId) {
        if let Some(r) = self.inner.records.lock().get_mut(id) {
            r.state = PluginState::Deregistered;
        }
        self.detach(id);
    }

    fn detach(&self, id: &PluginId) {
        self.inner.broker.remove_client(&ClientId(id.0.clone()));
        if let Some(stop) = self.inner.stops.lock().remove(id) {
            let _ = stop.send(());
        }
    }

    pub fn record(&self, id: &PluginId) -> Option<PluginRecord> {
        self.inner.records.lock().get(id).cloned()
    }

    pub fn records(&self) -> Vec<PluginRecord> {
        self.inner.records.lock().values().cloned().collect()
    }

    /// Register a plugin, subscribe it to everything it was granted, and
    /// run it on its own thread with periodic heartbeats.
    pub fn spawn<P: Plugin>(&self, mut plugin: P, core: bool) -> Result<PluginContext, PluginError> {
        let mut manifest = plugin.manifest();
        let hb: Pattern = HEARTBEAT_TOPIC.parse().expect("valid pattern");
        if !manifest.wants_publish.contains(&hb) {
            manifest.wants_publish.push(hb);
        }
        let reg = self.register_with(manifest, core)?;
        for p in &reg.granted.subscribe_allow {
            self.inner.broker.subscribe(&reg.client, p.clone())?;
        }
        let ctx = PluginContext::new(self.inner.broker.clone(), reg.client.clone(), reg.id.clone(), self.inner.request_timeout);
        let (stop_tx, stop_rx) = crossbeam_channel::bounded(1);
        self.inner.stops.lock().insert(reg.id.clone(), stop_tx);
        let interval = Duration::from_millis(self.inner.liveness.interval_ms.max(1));
        let thread_ctx = ctx.clone();
        let mailbox = reg.mailbox;
        let handle = std::thread::Builder::new()
            .name(reg.id.0.clone())
            .spawn(move || run_host(&mut plugin, &thread_ctx, mailbox, stop_rx, interval))
            .expect("spawn plugin thread");
        self.inner.threads.lock().push(handle);
        Ok(ctx)
    }

    /// Start the manager's own listener: heartbeats arriving on the broker
    /// refresh liveness, and stale plugins are evicted once per interval.
    pub fn start_liveness(&self) -> Result<(), PluginError> {
        let reg = self.register_core(PluginManifest::new("plugin-manager").subscribes(&[HEARTBEAT_TOPIC]))?;
        self.inner.broker.subscribe(&reg.client, HEARTBEAT_TOPIC.parse().expect("valid pattern"))?;
        self.heartbeat(&reg.id)?;
        let (tx, rx): (Sender<()>, Receiver<()>) = crossbeam_channel::bounded(1);
        *self.inner.shutdown.lock() = Some(tx);
        let me = self.clone();
        let own = reg.id.clone();
        let ticker = crossbeam_channel::tick(Duration::from_millis(self.inner.liveness.interval_ms.max(1)));
        let handle = std::thread::Builder::new()
            .name("plugin-manager".into())
            .spawn(move || loop {
                select! {
                    recv(reg.mailbox) -> d => match d {
                        Ok(d) => {
                            let id = PluginId(d.message.sender.0.clone());
                            if let Err(e) = me.heartbeat(&id) {
                                tracing::debug!(error = %e, "heartbeat from unknown plugin");
                            }
                        }
                        Err(_) => return,
                    },
                    recv(ticker) -> _ => {
                        let _ = me.heartbeat(&own);
                        me.evict_stale(me.inner.clock.now_ms());
                    }
                    recv(rx) -> _ => return,
                }
            })
            .expect("spawn manager thread");
        self.inner.threads.lock().push(handle);
        Ok(())
    }

    /// Deregister every plugin and join their threads.
    pub fn shutdown(&self) {
        if let Some(tx) = self.inner.shutdown.lock().take() {
            let _ = tx.send(());
        }
        let ids: Vec<PluginId> = self.inner.records.lock().keys().cloned().collect();
        for id in ids {
            self.deregister(&id);
        }
        let threads: Vec<_> = self.inner.threads.lock().drain(..).collect();
        for t in threads {
            if t.thread().id() != std::thread::current().id() {
                let _ = t.join();
            }
        }
    }

    /// Topic a plugin heartbeats on.
    pub fn heartbeat_topic() -> Topic {
        HEARTBEAT_TOPIC.parse().expect("valid topic")
    }
}
