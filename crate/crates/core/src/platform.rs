// SPDX-License-Identifier: Apache-2.0

//! One service platform: broker, plugin manager, the MANO plugins, and the
//! gatekeeper, wired together in-process.
//!
//! Nested slices are served by further `Platform` values started by the
//! parent and reached through `local://` endpoints, so a parent drives its
//! nested children exactly as it would a remote one.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::broker::{Broker, ClientId, Mailbox, Pattern, PermissionSet};
use crate::catalogue::Catalogue;
use crate::clock::SystemClock;
use crate::executive::{
    EvaluateRequest, FaultConfig, FaultInjector, PlacementExecutive, ScalingExecutive, ScalingVerdict, SsmRuntime,
    ViewPolicy, TOPIC_SCALING_EVALUATE,
};
use crate::gatekeeper::{
    register_local, unregister_local, ApiClient, Children, Gatekeeper, GatekeeperDeps, GatekeeperPlugin, HttpServer,
    Principal, RecursionPlugin, Role, LOCAL_SCHEME,
};
use crate::infra::{InfraError, Infrastructure, PopSpec, Workload};
use crate::lifecycle::{
    unwrap_reply, FunctionLifecycleManager, InfrastructureAdaptor, InstanceState, LifecycleConfig, Repository,
    ServiceInstanceRecord, ServiceLifecycleManager,
};
use crate::monitoring::{metric_payload, metric_topic, MetricPoint, MonitoringPlugin, MonitoringStore, MONITORING_PREFIX};
use crate::plugin::{LivenessConfig, PluginError, PluginManager, PolicyTable};
use crate::slicing::{NestedFactory, SliceManager, SlicePlugin};
use crate::Resources;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub id: String,
    pub topology: Vec<PopSpec>,
    #[serde(default)]
    pub principals: Vec<Principal>,
    #[serde(default = "default_heartbeat")]
    pub heartbeat_interval_ms: u64,
    /// Bound on each workflow step.
    #[serde(default = "default_step_timeout")]
    pub step_timeout_ms: u64,
    /// Operator permission table; the built-in table when absent.
    #[serde(default)]
    pub policy: Option<PolicyTable>,
    /// Where instance records are logged; memory only when absent.
    #[serde(default)]
    pub repo_dir: Option<PathBuf>,
    #[serde(default)]
    pub faults: FaultConfig,
    #[serde(default = "default_max_replicas")]
    pub max_replicas: u32,
    #[serde(default)]
    pub view_policy: ViewPolicy,
    /// Name under `local://`; the platform id when absent.
    #[serde(default)]
    pub local_name: Option<String>,
    /// Serve the API over HTTP on this address as well.
    #[serde(default)]
    pub http_bind: Option<String>,
    /// Evaluate scaling for every running instance at this period.
    #[serde(default)]
    pub autoscale_interval_ms: Option<u64>,
}

fn default_heartbeat() -> u64 {
    2000
}

fn default_step_timeout() -> u64 {
    10_000
}

fn default_max_replicas() -> u32 {
    4
}

impl PlatformConfig {
    pub fn new(id: impl Into<String>, topology: Vec<PopSpec>) -> Self {
        PlatformConfig {
            id: id.into(),
            topology,
            principals: Vec::new(),
            heartbeat_interval_ms: default_heartbeat(),
            step_timeout_ms: default_step_timeout(),
            policy: None,
            repo_dir: None,
            faults: FaultConfig::default(),
            max_replicas: default_max_replicas(),
            view_policy: ViewPolicy::default(),
            local_name: None,
            http_bind: None,
            autoscale_interval_ms: None,
        }
    }

    pub fn with_principal(mut self, id: &str, role: Role, token: &str) -> Self {
        self.principals.push(Principal::new(id, role, token));
        self
    }

    pub fn from_yaml(text: &str) -> Result<Self, String> {
        serde_yaml::from_str(text).map_err(|e| e.to_string())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlatformError {
    #[error(transparent)]
    Infra(#[from] InfraError),
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error("{0}")]
    Config(String),
}

/// Child platforms started for nested slices.
struct NestedPlatforms {
    parent_id: String,
    children: Arc<Children>,
    template: PlatformConfig,
    running: Mutex<BTreeMap<String, Arc<Platform>>>,
}

impl NestedPlatforms {
    fn all(&self) -> Vec<Arc<Platform>> {
        self.running.lock().values().cloned().collect()
    }

    fn stop_all(&self) {
        let all: Vec<(String, Arc<Platform>)> = std::mem::take(&mut *self.running.lock()).into_iter().collect();
        for (id, p) in all {
            self.children.remove(&id);
            p.shutdown();
        }
    }
}

impl NestedFactory for NestedPlatforms {
    fn spawn(&self, slice_id: &str, quota: Resources) -> Result<String, String> {
        let id = format!("{}.{slice_id}", self.parent_id);
        let token = format!("{id}-parent-link");
        let mut config = PlatformConfig::new(&id, vec![PopSpec::new(format!("{slice_id}-pop"), quota)]);
        config.principals.push(Principal::new(format!("{}-platform", self.parent_id), Role::Platform, &token));
        config.heartbeat_interval_ms = self.template.heartbeat_interval_ms;
        config.step_timeout_ms = self.template.step_timeout_ms;
        config.max_replicas = self.template.max_replicas;
        config.view_policy = self.template.view_policy.clone();
        config.policy = self.template.policy.clone();
        config.repo_dir = self.template.repo_dir.as_ref().map(|d| d.join(&id));
        let child = Platform::start(config).map_err(|e| e.to_string())?;
        let endpoint = child.endpoint();
        let timeout = Duration::from_millis(self.template.step_timeout_ms);
        if let Err(e) = self.children.register(&self.parent_id, &endpoint, &token, timeout) {
            child.shutdown();
            return Err(e.to_string());
        }
        self.running.lock().insert(id.clone(), Arc::new(child));
        Ok(id)
    }

    fn drained(&self, child: &str) -> bool {
        self.running.lock().get(child).is_none_or(|p| p.repo.all().iter().all(|r| r.state.is_terminal()))
    }

    fn retire(&self, child: &str) {
        self.children.remove(child);
        let p = self.running.lock().remove(child);
        if let Some(p) = p {
            p.shutdown();
        }
    }
}

/// A running platform. Dropping it does not stop it; call [`Platform::shutdown`].
pub struct Platform {
    config: PlatformConfig,
    broker: Broker,
    manager: PluginManager,
    infra: Arc<Infrastructure>,
    catalogue: Arc<Catalogue>,
    repo: Arc<Repository>,
    monitoring: Arc<MonitoringStore>,
    runtime: Arc<SsmRuntime>,
    slices: Arc<SliceManager>,
    children: Arc<Children>,
    gatekeeper: Arc<Gatekeeper>,
    nested: Arc<NestedPlatforms>,
    driver: ClientId,
    _driver_mailbox: Mailbox,
    http: Mutex<Option<HttpServer>>,
    autoscaler: Mutex<Option<(Arc<AtomicBool>, JoinHandle<()>)>>,
    stopped: AtomicBool,
}

fn pattern(s: &str) -> Pattern {
    s.parse().expect("valid pattern")
}

impl Platform {
    pub fn start(config: PlatformConfig) -> Result<Platform, PlatformError> {
        let infra = Arc::new(Infrastructure::new(config.topology.clone())?);
        let broker = Broker::new();
        let step = Duration::from_millis(config.step_timeout_ms);
        let liveness = LivenessConfig { interval_ms: config.heartbeat_interval_ms, ..LivenessConfig::default() };
        let policy = config.policy.clone().unwrap_or_default();
        let manager = PluginManager::new(broker.clone(), Arc::new(SystemClock), policy, liveness, step);
        manager.start_liveness()?;

        let catalogue = Arc::new(Catalogue::new());
        let repo = Arc::new(Repository::new(config.repo_dir.clone()));
        let monitoring = Arc::new(MonitoringStore::new());
        let runtime = Arc::new(SsmRuntime::new(broker.clone()));
        let faults = Arc::new(FaultInjector::new(config.faults));
        let children = Arc::new(Children::new());
        let nested = Arc::new(NestedPlatforms {
            parent_id: config.id.clone(),
            children: children.clone(),
            template: config.clone(),
            running: Mutex::new(BTreeMap::new()),
        });
        let capacity = infra.snapshot().total_capacity();
        let slices = Arc::new(SliceManager::new(capacity, Some(nested.clone() as Arc<dyn NestedFactory>)));

        let core = true;
        manager.spawn(MonitoringPlugin { store: monitoring.clone() }, core)?;
        manager.spawn(InfrastructureAdaptor { infra: infra.clone() }, core)?;
        manager.spawn(FunctionLifecycleManager { infra: infra.clone(), faults: faults.clone() }, core)?;
        manager.spawn(
            PlacementExecutive {
                infra: infra.clone(),
                ssm: runtime.clone(),
                faults: faults.clone(),
                view_policy: config.view_policy.clone(),
            },
            core,
        )?;
        manager.spawn(
            ScalingExecutive {
                infra: infra.clone(),
                ssm: runtime.clone(),
                repo: repo.clone(),
                monitoring: monitoring.clone(),
                max_replicas: config.max_replicas,
            },
            core,
        )?;
        manager.spawn(SlicePlugin { manager: slices.clone() }, core)?;
        manager.spawn(RecursionPlugin { children: children.clone(), catalogue: catalogue.clone(), timeout: step }, core)?;
        manager.spawn(
            ServiceLifecycleManager::new(LifecycleConfig::new(&config.id), repo.clone(), catalogue.clone()),
            core,
        )?;
        let gk_ctx = manager.spawn(GatekeeperPlugin, core)?;

        let gatekeeper = Arc::new(
            Gatekeeper::new(GatekeeperDeps {
                platform_id: config.id.clone(),
                principals: config.principals.clone(),
                catalogue: catalogue.clone(),
                runtime: runtime.clone(),
                repo: repo.clone(),
                monitoring: monitoring.clone(),
                infra: infra.clone(),
                slices: slices.clone(),
                children: children.clone(),
                ctx: gk_ctx,
                step_timeout: step,
            })
            .map_err(PlatformError::Config)?,
        );

        // Publishes samples and drives scaling evaluation.
        let driver = ClientId::new(format!("{}-driver", config.id));
        let perms = PermissionSet {
            publish_allow: vec![pattern(&format!("{MONITORING_PREFIX}.#")), pattern(TOPIC_SCALING_EVALUATE)],
            subscribe_allow: vec![pattern("service.scaling.evaluate.response")],
        };
        let driver_mailbox = broker.register_client(driver.clone(), perms).map_err(|e| PlatformError::Config(e.to_string()))?;

        let local_name = config.local_name.clone().unwrap_or_else(|| config.id.clone());
        register_local(&local_name, &gatekeeper).map_err(PlatformError::Config)?;
        let http = match &config.http_bind {
            Some(bind) => Some(HttpServer::start(bind, gatekeeper.clone(), 4).map_err(PlatformError::Config)?),
            None => None,
        };

        let platform = Platform {
            config,
            broker,
            manager,
            infra,
            catalogue,
            repo,
            monitoring,
            runtime,
            slices,
            children,
            gatekeeper,
            nested,
            driver,
            _driver_mailbox: driver_mailbox,
            http: Mutex::new(http),
            autoscaler: Mutex::new(None),
            stopped: AtomicBool::new(false),
        };
        tracing::info!(platform = %platform.config.id, endpoint = %platform.endpoint(), "platform started");
        Ok(platform)
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn plugins(&self) -> &PluginManager {
        &self.manager
    }

    pub fn infra(&self) -> &Arc<Infrastructure> {
        &self.infra
    }

    pub fn catalogue(&self) -> &Arc<Catalogue> {
        &self.catalogue
    }

    pub fn repo(&self) -> &Arc<Repository> {
        &self.repo
    }

    pub fn monitoring(&self) -> &Arc<MonitoringStore> {
        &self.monitoring
    }

    pub fn ssm_runtime(&self) -> &Arc<SsmRuntime> {
        &self.runtime
    }

    pub fn slices(&self) -> &Arc<SliceManager> {
        &self.slices
    }

    pub fn children(&self) -> &Arc<Children> {
        &self.children
    }

    pub fn gatekeeper(&self) -> &Arc<Gatekeeper> {
        &self.gatekeeper
    }

    /// The in-process endpoint, or the HTTP one when serving HTTP.
    pub fn endpoint(&self) -> String {
        if let Some(h) = self.http.lock().as_ref() {
            return h.endpoint();
        }
        format!("{LOCAL_SCHEME}{}", self.config.local_name.as_deref().unwrap_or(&self.config.id))
    }

    pub fn local_endpoint(&self) -> String {
        format!("{LOCAL_SCHEME}{}", self.config.local_name.as_deref().unwrap_or(&self.config.id))
    }

    pub fn client(&self, token: &str) -> ApiClient {
        let mut c = ApiClient::new(self.local_endpoint(), token);
        c.timeout = Duration::from_millis(self.config.step_timeout_ms * 4);
        c
    }

    /// Nested child platforms, by platform id.
    pub fn nested(&self) -> Vec<Arc<Platform>> {
        self.nested.all()
    }

    pub fn nested_child(&self, id: &str) -> Option<Arc<Platform>> {
        self.nested.running.lock().get(id).cloned()
    }

    pub fn wait_for_state(&self, instance: &str, states: &[InstanceState], timeout: Duration) -> Option<ServiceInstanceRecord> {
        self.repo.wait_for_state(instance, states, timeout)
    }

    /// Emit one tick of synthetic metrics here and in every nested child,
    /// and wait until the monitoring store has recorded them. Returns the
    /// number of samples published on this platform.
    pub fn tick(&self, workload: &Workload, tick: u64) -> usize {
        let before = self.monitoring.total();
        let mut sent = 0u64;
        for s in self.infra.emit_metrics(workload, tick) {
            let Some(record) = self.repo.get(&s.owner) else { continue };
            let Some(fi) = record.function_instances.iter().find(|f| f.id == s.instance_id) else { continue };
            let point = MetricPoint {
                timestamp: s.timestamp,
                value: s.value,
                instance_id: s.owner.clone(),
                vnf: fi.vnf_id.clone(),
                function_instance: s.instance_id.clone(),
                metric: s.metric.clone(),
            };
            let topic = match metric_topic(&s.instance_id, &s.metric).parse() {
                Ok(t) => t,
                Err(e) => {
                    tracing::warn!(error = %e, "unusable metric topic");
                    continue;
                }
            };
            match self.broker.publish(&self.driver, topic, metric_payload(&point)) {
                Ok(_) => sent += 1,
                Err(e) => tracing::warn!(error = %e, "metric sample not published"),
            }
        }
        if !self.monitoring.wait_for_total(before + sent, Duration::from_millis(self.config.step_timeout_ms)) {
            tracing::warn!(platform = %self.config.id, "monitoring store fell behind");
        }
        for child in self.nested.all() {
            child.tick(workload, tick);
        }
        sent as usize
    }

    /// Run the scaling executive once for an instance.
    pub fn evaluate_scaling(&self, instance: &str) -> Result<Vec<ScalingVerdict>, String> {
        let timeout = Duration::from_millis(self.config.step_timeout_ms * 3);
        let reply = self
            .broker
            .request(&self.driver, TOPIC_SCALING_EVALUATE.parse().expect("valid topic"), json!(EvaluateRequest { instance_id: instance.into() }), timeout)
            .map_err(|e| e.to_string())?;
        let v = unwrap_reply(reply)?;
        serde_json::from_value(v).map_err(|e| e.to_string())
    }

    /// Evaluate scaling for every running local instance.
    pub fn autoscale_once(&self) -> BTreeMap<String, Result<Vec<ScalingVerdict>, String>> {
        self.repo
            .all()
            .into_iter()
            .filter(|r| r.state == InstanceState::Running && r.remote.is_none())
            .map(|r| {
                let v = self.evaluate_scaling(&r.id);
                (r.id, v)
            })
            .collect()
    }

    /// Start periodic scaling evaluation when configured.
    pub fn start_autoscaler(self: &Arc<Self>) {
        let Some(ms) = self.config.autoscale_interval_ms else { return };
        let stop = Arc::new(AtomicBool::new(false));
        let weak: Weak<Platform> = Arc::downgrade(self);
        let flag = stop.clone();
        let handle = std::thread::Builder::new()
            .name(format!("autoscale-{}", self.config.id))
            .spawn(move || {
                while !flag.load(Ordering::SeqCst) {
                    std::thread::sleep(Duration::from_millis(ms));
                    match weak.upgrade() {
                        Some(p) => {
                            p.autoscale_once();
                        }
                        None => return,
                    }
                }
            })
            .expect("spawn autoscaler");
        *self.autoscaler.lock() = Some((stop, handle));
    }

    /// Stop plugins, nested children and servers. Idempotent.
    pub fn shutdown(&self) {
        if self.stopped.swap(true, Ordering::SeqCst) {
            return;
        }
        if let Some((stop, handle)) = self.autoscaler.lock().take() {
            stop.store(true, Ordering::SeqCst);
            if handle.thread().id() != std::thread::current().id() {
                let _ = handle.join();
            }
        }
        if let Some(h) = self.http.lock().take() {
            h.stop();
        }
        unregister_local(self.config.local_name.as_deref().unwrap_or(&self.config.id));
        self.nested.stop_all();
        self.manager.shutdown();
        self.runtime.shutdown();
        self.broker.remove_client(&self.driver);
        tracing::info!(platform = %self.config.id, "platform stopped");
    }
}
