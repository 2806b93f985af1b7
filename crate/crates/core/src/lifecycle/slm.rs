// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use crossbeam_channel::{Receiver, Sender};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::flm::{ChainInstallRequest, ChainUninstallRequest, DeployRequest, ReleaseRequest};
use super::*;
use crate::broker::Message;
use crate::catalogue::{Catalogue, ResolvedService};
use crate::descriptors::{resolve_chain, validate_service, ChainHop, FunctionDescriptor};
use crate::executive::{PlacementItem, PlacementReply, PlacementRequest, ViewPop};
use crate::infra::{AllocationId, ChainHopSpec};
use crate::plugin::{Plugin, PluginContext, PluginManifest};

#[derive(Clone, Debug)]
pub struct LifecycleConfig {
    pub platform_id: String,
    /// Attempts per compensation before giving up on it.
    pub compensation_attempts: u32,
}

impl LifecycleConfig {
    pub fn new(platform_id: impl Into<String>) -> Self {
        LifecycleConfig { platform_id: platform_id.into(), compensation_attempts: 3 }
    }
}

enum Command {
    Instantiate(CreateRequest),
    Terminate(Message),
    Scale(ScaleRequest, Message),
}

/// A completed step's undo action.
#[derive(Debug)]
enum Compensation {
    SliceRelease { slice_id: String, resources: Option<Resources> },
    Release { function_instance: String },
    ChainUninstall(ChainId),
    RemoteTerminate(RemoteHandle),
}

#[derive(Deserialize)]
struct AdmitReply {
    mode: String,
    #[serde(default)]
    child: Option<String>,
}

#[derive(Deserialize)]
struct DelegateReply {
    remote_id: String,
    state: InstanceState,
}

struct Shared {
    config: LifecycleConfig,
    repo: Arc<Repository>,
    catalogue: Arc<Catalogue>,
    workers: Mutex<HashMap<String, Sender<Command>>>,
    next_instance: AtomicU64,
    ctx: OnceLock<PluginContext>,
}

/// The service lifecycle manager plugin.
pub struct ServiceLifecycleManager {
    shared: Arc<Shared>,
}

impl ServiceLifecycleManager {
    pub fn new(config: LifecycleConfig, repo: Arc<Repository>, catalogue: Arc<Catalogue>) -> Self {
        ServiceLifecycleManager {
            shared: Arc::new(Shared {
                config,
                repo,
                catalogue,
                workers: Mutex::new(HashMap::new()),
                next_instance: AtomicU64::new(1),
                ctx: OnceLock::new(),
            }),
        }
    }
}

fn parse<T: DeserializeOwned>(v: Value) -> Result<T, String> {
    serde_json::from_value(v).map_err(|e| format!("malformed reply: {e}"))
}

impl Shared {
    fn ctx(&self) -> &PluginContext {
        self.ctx.get().expect("started")
    }

    fn call<T: DeserializeOwned>(&self, topic: &str, payload: Value) -> Result<T, String> {
        let v = self.ctx().request(topic, payload).map_err(|e| e.to_string())?;
        parse(unwrap_reply(v)?)
    }

    fn event(&self, r: &ServiceInstanceRecord) {
        let payload = json!({
            "instance_id": r.id,
            "state": r.state,
            "error_cause": r.error_cause,
        });
        if let Err(e) = self.ctx().publish(TOPIC_EVENTS, payload) {
            tracing::warn!(error = %e, "could not publish lifecycle event");
        }
    }

    fn transition(
        &self,
        id: &str,
        to: InstanceState,
        f: impl FnOnce(&mut ServiceInstanceRecord),
    ) -> Result<(), String> {
        let r = self
            .repo
            .update(id, |r| {
                f(r);
                r.state = to;
                r.clone()
            })
            .map_err(|e| e.to_string())?;
        self.event(&r);
        Ok(())
    }

    fn compensate(&self, instance: &str, c: &Compensation) {
        for attempt in 1..=self.config.compensation_attempts {
            let result = match c {
                Compensation::SliceRelease { slice_id, resources } => self.call::<Value>(
                    TOPIC_SLICE_RELEASE,
                    json!({ "slice_id": slice_id, "instance_id": instance, "resources": resources }),
                ),
                Compensation::Release { function_instance } => self.call::<Value>(
                    TOPIC_RELEASE,
                    json!(ReleaseRequest { instance_id: instance.into(), function_instance: function_instance.clone() }),
                ),
                Compensation::ChainUninstall(chain) => {
                    self.call::<Value>(TOPIC_CHAIN_UNINSTALL, json!(ChainUninstallRequest { chain: *chain }))
                }
                Compensation::RemoteTerminate(h) => self.call::<Value>(
                    TOPIC_REMOTE_TERMINATE,
                    json!({ "child": h.child, "remote_id": h.instance_id }),
                ),
            };
            match result {
                Ok(_) => return,
                Err(e) => tracing::warn!(instance, attempt, compensation = ?c, error = %e, "compensation failed"),
            }
        }
        tracing::error!(instance, compensation = ?c, "compensation abandoned");
    }

    fn rollback(&self, instance: &str, done: &mut Vec<Compensation>) {
        while let Some(c) = done.pop() {
            self.compensate(instance, &c);
        }
    }

    /// Reserve the next function instance id; ids are never reused.
    fn fi_id(&self, instance: &str) -> Result<String, String> {
        let n = self
            .repo
            .update(instance, |r| {
                r.next_function_instance += 1;
                r.next_function_instance
            })
            .map_err(|e| e.to_string())?;
        Ok(format!("{instance}-fi-{n}"))
    }

    fn deploy(
        &self,
        instance: &str,
        vnf_id: &str,
        vnfd: &FunctionDescriptor,
        pop: &str,
        replica_index: u32,
        done: &mut Vec<Compensation>,
    ) -> Result<(), String> {
        let fi = self.fi_id(instance)?;
        let resources = vnfd.resources();
        // Registered before the call: a deploy that times out may still
        // have allocated, and release by label is harmless otherwise.
        done.push(Compensation::Release { function_instance: fi.clone() });
        let allocation: AllocationId = self.call(
            TOPIC_DEPLOY,
            json!(DeployRequest {
                instance_id: instance.into(),
                function_instance: fi.clone(),
                pop: pop.into(),
                resources,
            }),
        )?;
        let record = FunctionInstanceRecord {
            id: fi,
            vnf_id: vnf_id.into(),
            vnf: vnfd.identity.clone(),
            pop: pop.into(),
            allocation,
            resources,
            replica_index,
        };
        self.repo
            .update(instance, |r| {
                r.function_instances.push(record);
                r.function_instances.sort_by(|a, b| (&a.vnf_id, a.replica_index).cmp(&(&b.vnf_id, b.replica_index)));
            })
            .map_err(|e| e.to_string())
    }

    fn place(&self, req: PlacementRequest) -> Result<PlacementReply, String> {
        self.call(TOPIC_PLACEMENT, json!(req))
    }

    fn run_instantiate(&self, id: &str, req: &CreateRequest, done: &mut Vec<Compensation>) -> Result<(), String> {
        let resolved: ResolvedService = self.catalogue.resolve(&req.service).map_err(|e| format!("validation failed: {e}"))?;
        let nsd = resolved.nsd.clone();
        let vnfds: Vec<FunctionDescriptor> = resolved.functions.values().map(|f| (**f).clone()).collect();
        let report = validate_service(&nsd, &vnfds);
        if report.has_errors() {
            let lines: Vec<String> = report.errors().map(|f| f.to_string()).collect();
            return Err(format!("validation failed: {}", lines.join("; ")));
        }
        self.transition(id, InstanceState::Validated, |r| r.package_id = resolved.package_id.clone())?;

        let items: Vec<PlacementItem> = nsd
            .function_refs
            .iter()
            .map(|f| PlacementItem {
                key: f.id.clone(),
                function: f.identity.clone(),
                resources: resolved.functions[&f.id].resources(),
            })
            .collect();
        let total: Resources = items.iter().map(|i| i.resources).sum();

        let mut nested_child = None;
        if let Some(slice_id) = &req.options.slice_id {
            let admit: AdmitReply = self
                .call(
                    TOPIC_SLICE_ADMIT,
                    json!({ "slice_id": slice_id, "instance_id": id, "owner": req.owner, "resources": total }),
                )
                .map_err(|e| format!("slice admission failed: {e}"))?;
            done.push(Compensation::SliceRelease { slice_id: slice_id.clone(), resources: None });
            if admit.mode == "NESTED" {
                nested_child = Some(admit.child.ok_or("slice admission failed: nested slice has no platform")?);
            }
        }

        let path: Vec<String> = match &nested_child {
            Some(c) => std::iter::once(c.clone()).chain(req.options.delegate_to.iter().flatten().cloned()).collect(),
            None => req.options.delegate_to.clone().unwrap_or_else(|| nsd.delegate_to.clone()),
        };
        if let Some((child, rest)) = path.split_first() {
            return self.run_delegation(id, req, &resolved, items, child, rest, nested_child.is_some(), done);
        }

        let allow = match (&req.options.pops, &nsd.placement_requirements) {
            (None, None) => None,
            (a, b) => {
                let mut set: Option<BTreeSet<String>> = a.as_ref().map(|v| v.iter().cloned().collect());
                if let Some(b) = b {
                    let bs: BTreeSet<String> = b.pops.iter().cloned().collect();
                    set = Some(match set {
                        Some(s) => s.intersection(&bs).cloned().collect(),
                        None => bs,
                    });
                }
                set
            }
        };
        let placement = self
            .place(PlacementRequest {
                instance_id: id.into(),
                service: req.service.clone(),
                items,
                allow: allow.clone(),
                pseudo_pops: Vec::new(),
            })
            .map_err(|e| format!("placement failed: {e}"))?
            .placement;
        self.transition(id, InstanceState::Placed, |r| {
            r.placement = placement.clone();
            r.allowed_pops = allow.map(|s| s.into_iter().collect());
        })?;
        self.transition(id, InstanceState::Deploying, |_| {})?;
        for f in &nsd.function_refs {
            self.deploy(id, &f.id, &resolved.functions[&f.id], &placement[&f.id], 0, done)
                .map_err(|e| format!("deploy failed: {e}"))?;
        }

        let hops = resolve_chain(&nsd, &vnfds).map_err(|e| format!("chain installation failed: {e}"))?;
        let record = self.repo.get(id).ok_or("record vanished")?;
        let specs: Vec<ChainHopSpec> = hops
            .iter()
            .filter_map(|h| match h {
                ChainHop::Function { vnf, cp, .. } => record
                    .function_instances
                    .iter()
                    .find(|f| &f.vnf_id == vnf && f.replica_index == 0)
                    .map(|f| ChainHopSpec { pop: f.pop.clone(), function_instance: f.id.clone(), cp: cp.clone() }),
                ChainHop::Boundary { .. } => None,
            })
            .collect();
        let mut chain = None;
        if !specs.is_empty() {
            let c: ChainId = self
                .call(TOPIC_CHAIN_INSTALL, json!(ChainInstallRequest { instance_id: id.into(), hops: specs }))
                .map_err(|e| format!("chain installation failed: {e}"))?;
            done.push(Compensation::ChainUninstall(c));
            chain = Some(c);
        }
        self.transition(id, InstanceState::Running, |r| r.chain = chain)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_delegation(
        &self,
        id: &str,
        req: &CreateRequest,
        resolved: &ResolvedService,
        items: Vec<PlacementItem>,
        child: &str,
        rest: &[String],
        nested: bool,
        done: &mut Vec<Compensation>,
    ) -> Result<(), String> {
        let pseudo = format!("{CHILD_POP_PREFIX}{child}");
        // A nested slice's child is bound by the slice itself; other
        // children are placed on as a pseudo-PoP of their advertised size.
        let placement = if nested {
            items.iter().map(|i| (i.key.clone(), pseudo.clone())).collect()
        } else {
            let free: Resources = self
                .call(TOPIC_CHILD_CAPACITY, json!({ "child": child }))
                .map_err(|e| format!("delegation failed: {e}"))?;
            self.place(PlacementRequest {
                instance_id: id.into(),
                service: req.service.clone(),
                items,
                allow: None,
                pseudo_pops: vec![ViewPop { id: pseudo, free, latency_ms: Default::default() }],
            })
            .map_err(|e| format!("placement failed: {e}"))?
            .placement
        };
        self.transition(id, InstanceState::Placed, |r| r.placement = placement)?;
        self.transition(id, InstanceState::Deploying, |_| {})?;
        let reply: DelegateReply = self
            .call(
                TOPIC_DELEGATE,
                json!({
                    "instance_id": id,
                    "child": child,
                    "package_id": resolved.package_id,
                    "service": req.service,
                    "delegate_to": rest,
                }),
            )
            .map_err(|e| format!("delegation failed: {e}"))?;
        let handle = RemoteHandle { child: child.to_string(), instance_id: reply.remote_id };
        done.push(Compensation::RemoteTerminate(handle.clone()));
        self.repo.update(id, |r| r.remote = Some(handle.clone())).map_err(|e| e.to_string())?;
        if reply.state != InstanceState::Running {
            return Err(format!("delegation failed: remote instance is {}", reply.state));
        }
        self.transition(id, InstanceState::Running, |_| {})
    }

    fn instantiate(&self, id: &str, req: CreateRequest) {
        let mut done = Vec::new();
        if let Err(cause) = self.run_instantiate(id, &req, &mut done) {
            tracing::info!(instance = id, %cause, "instantiation failed, rolling back");
            self.rollback(id, &mut done);
            let _ = self.transition(id, InstanceState::Error, |r| {
                r.error_cause = Some(cause);
                r.function_instances.clear();
                r.chain = None;
                r.remote = None;
            });
        }
    }

    fn terminate(&self, id: &str) -> Result<InstanceState, LifecycleError> {
        let r = self.repo.get(id).ok_or_else(|| LifecycleError::UnknownInstance(id.into()))?;
        if r.state.is_terminal() {
            return Ok(r.state);
        }
        if r.state != InstanceState::Running {
            return Err(LifecycleError::NotRunning(r.state.to_string()));
        }
        self.transition(id, InstanceState::Terminating, |_| {}).map_err(LifecycleError::Internal)?;
        let mut undo = Vec::new();
        if let Some(slice_id) = &r.slice_id {
            undo.push(Compensation::SliceRelease { slice_id: slice_id.clone(), resources: None });
        }
        for f in &r.function_instances {
            undo.push(Compensation::Release { function_instance: f.id.clone() });
        }
        if let Some(c) = r.chain {
            undo.push(Compensation::ChainUninstall(c));
        }
        if let Some(h) = &r.remote {
            // A remote that cannot be reached leaves the instance in ERROR,
            // so that a later terminate does not pretend success.
            let res = self.call::<Value>(TOPIC_REMOTE_TERMINATE, json!({ "child": h.child, "remote_id": h.instance_id }));
            if let Err(e) = res {
                let cause = format!("remote termination failed: {e}");
                let _ = self.transition(id, InstanceState::Error, |r| r.error_cause = Some(cause.clone()));
                return Err(LifecycleError::Internal(cause));
            }
        }
        self.rollback(id, &mut undo);
        self.transition(id, InstanceState::Terminated, |r| {
            r.function_instances.clear();
            r.chain = None;
        })
        .map_err(LifecycleError::Internal)?;
        Ok(InstanceState::Terminated)
    }

    fn scale(&self, req: &ScaleRequest) -> Result<u32, LifecycleError> {
        let id = req.instance_id.as_str();
        let r = self.repo.get(id).ok_or_else(|| LifecycleError::UnknownInstance(id.into()))?;
        if req.target < 1 {
            return Err(LifecycleError::InvalidTarget(req.target));
        }
        if r.state != InstanceState::Running {
            return Err(LifecycleError::NotRunning(r.state.to_string()));
        }
        if r.remote.is_some() {
            return Err(LifecycleError::Unsupported("delegated instances are scaled by their child platform".into()));
        }
        let Some(template) = r.function_instances.iter().find(|f| f.vnf_id == req.vnf).cloned() else {
            return Err(LifecycleError::UnknownFunction(req.vnf.clone()));
        };
        let current = r.replicas(&req.vnf);
        if req.target == current {
            return Ok(current);
        }
        self.transition(id, InstanceState::Scaling, |_| {}).map_err(LifecycleError::Internal)?;
        let result = if req.target > current {
            self.scale_out(&r, &template, current, req.target)
        } else {
            self.scale_in(&r, &req.vnf, req.target);
            Ok(())
        };
        self.transition(id, InstanceState::Running, |_| {}).map_err(LifecycleError::Internal)?;
        result.map(|_| req.target).map_err(LifecycleError::ScaleFailed)
    }

    fn scale_out(
        &self,
        r: &ServiceInstanceRecord,
        template: &FunctionInstanceRecord,
        current: u32,
        target: u32,
    ) -> Result<(), String> {
        let vnfd = self.catalogue.function(&template.vnf).ok_or("function descriptor vanished")?;
        let before: BTreeSet<String> = r.function_instances.iter().map(|f| f.id.clone()).collect();
        let mut done = Vec::new();
        let mut step = || -> Result<(), String> {
            for k in current..target {
                if let Some(slice_id) = &r.slice_id {
                    self.call::<Value>(
                        TOPIC_SLICE_ADMIT,
                        json!({ "slice_id": slice_id, "instance_id": r.id, "owner": r.owner, "resources": template.resources }),
                    )
                    .map_err(|e| format!("slice admission failed: {e}"))?;
                    done.push(Compensation::SliceRelease { slice_id: slice_id.clone(), resources: Some(template.resources) });
                }
                let key = format!("{}#{k}", template.vnf_id);
                let placement = self.place(PlacementRequest {
                    instance_id: r.id.clone(),
                    service: r.service.clone(),
                    items: vec![PlacementItem { key: key.clone(), function: template.vnf.clone(), resources: template.resources }],
                    allow: r.allowed_pops.as_ref().map(|v| v.iter().cloned().collect()),
                    pseudo_pops: Vec::new(),
                })?;
                self.deploy(&r.id, &template.vnf_id, &vnfd, &placement.placement[&key], k, &mut done)?;
            }
            Ok(())
        };
        let result = step();
        if result.is_err() {
            self.rollback(&r.id, &mut done);
            let _ = self.repo.update(&r.id, |rec| rec.function_instances.retain(|f| before.contains(&f.id)));
        }
        result
    }

    fn scale_in(&self, r: &ServiceInstanceRecord, vnf: &str, target: u32) {
        let mut victims: Vec<&FunctionInstanceRecord> =
            r.function_instances.iter().filter(|f| f.vnf_id == vnf && f.replica_index >= target).collect();
        victims.sort_by_key(|f| std::cmp::Reverse(f.replica_index));
        for f in victims {
            self.compensate(&r.id, &Compensation::Release { function_instance: f.id.clone() });
            if let Some(slice_id) = &r.slice_id {
                self.compensate(&r.id, &Compensation::SliceRelease { slice_id: slice_id.clone(), resources: Some(f.resources) });
            }
            let _ = self.repo.update(&r.id, |rec| rec.function_instances.retain(|x| x.id != f.id));
        }
    }

    fn run_worker(self: Arc<Self>, id: String, rx: Receiver<Command>) {
        for cmd in rx.iter() {
            match cmd {
                Command::Instantiate(req) => self.instantiate(&id, req),
                Command::Terminate(msg) => {
                    let out = match self.terminate(&id) {
                        Ok(s) => reply_ok(s),
                        Err(e) => reply_err(e),
                    };
                    let _ = self.ctx().reply(&msg, out);
                }
                Command::Scale(req, msg) => {
                    let out = match self.scale(&req) {
                        Ok(n) => reply_ok(n),
                        Err(e) => reply_err(e),
                    };
                    let _ = self.ctx().reply(&msg, out);
                }
            }
        }
    }

    fn create(self: &Arc<Self>, req: CreateRequest) -> Result<String, LifecycleError> {
        if self.catalogue.service(&req.service).is_none() {
            return Err(LifecycleError::UnknownService(req.service.to_string()));
        }
        let id = format!("{}-si-{}", self.config.platform_id, self.next_instance.fetch_add(1, Ordering::SeqCst));
        let record = ServiceInstanceRecord {
            id: id.clone(),
            service: req.service.clone(),
            package_id: req.package_id.clone(),
            state: InstanceState::Requested,
            placement: Default::default(),
            function_instances: Vec::new(),
            slice_id: req.options.slice_id.clone(),
            owner: req.owner.clone(),
            error_cause: None,
            remote: None,
            chain: None,
            allowed_pops: None,
            next_function_instance: 0,
        };
        self.repo.insert(record.clone());
        self.event(&record);
        let (tx, rx) = crossbeam_channel::unbounded();
        tx.send(Command::Instantiate(req)).expect("receiver alive");
        self.workers.lock().insert(id.clone(), tx);
        let me = self.clone();
        let worker_id = id.clone();
        std::thread::Builder::new()
            .name(format!("saga-{id}"))
            .spawn(move || me.run_worker(worker_id, rx))
            .map_err(|e| LifecycleError::Internal(e.to_string()))?;
        Ok(id)
    }

    fn dispatch(self: &Arc<Self>, id: &str, cmd: Command) -> Result<(), LifecycleError> {
        let workers = self.workers.lock();
        let tx = workers.get(id).ok_or_else(|| LifecycleError::UnknownInstance(id.into()))?;
        tx.send(cmd).map_err(|_| LifecycleError::Internal("instance worker stopped".into()))
    }
}

#[derive(Deserialize)]
struct InstanceRef {
    instance_id: String,
}

impl Plugin for ServiceLifecycleManager {
    fn manifest(&self) -> PluginManifest {
        PluginManifest::new("slm")
            .subscribes(&[
                TOPIC_CREATE,
                TOPIC_TERMINATE,
                TOPIC_SCALE,
                "service.placement.response",
                "function.lifecycle.*.response",
                "infrastructure.chain.*.response",
                "platform.slice.*.response",
                "platform.recursion.*.response",
            ])
            .publishes(&[
                "service.instances.*.response",
                TOPIC_EVENTS,
                TOPIC_PLACEMENT,
                TOPIC_DEPLOY,
                TOPIC_RELEASE,
                TOPIC_CHAIN_INSTALL,
                TOPIC_CHAIN_UNINSTALL,
                TOPIC_SLICE_ADMIT,
                TOPIC_SLICE_RELEASE,
                TOPIC_DELEGATE,
                TOPIC_REMOTE_TERMINATE,
                TOPIC_CHILD_CAPACITY,
            ])
    }

    fn on_start(&mut self, ctx: &PluginContext) {
        let _ = self.shared.ctx.set(ctx.clone());
    }

    fn handle(&mut self, ctx: &PluginContext, msg: &Message) {
        let topic = msg.topic.to_string();
        let reply = |v: Value| {
            let _ = ctx.reply(msg, v);
        };
        if topic == TOPIC_CREATE {
            match serde_json::from_value::<CreateRequest>(msg.payload.clone()) {
                Ok(req) => match self.shared.create(req) {
                    Ok(id) => reply(reply_ok(id)),
                    Err(e) => reply(reply_err(e)),
                },
                Err(e) => reply(reply_err(format!("malformed create request: {e}"))),
            }
        } else if topic == TOPIC_TERMINATE {
            match serde_json::from_value::<InstanceRef>(msg.payload.clone()) {
                Ok(r) => {
                    if let Err(e) = self.shared.dispatch(&r.instance_id, Command::Terminate(msg.clone())) {
                        reply(reply_err(e));
                    }
                }
                Err(e) => reply(reply_err(format!("malformed terminate request: {e}"))),
            }
        } else if topic == TOPIC_SCALE {
            match serde_json::from_value::<ScaleRequest>(msg.payload.clone()) {
                Ok(r) => {
                    let id = r.instance_id.clone();
                    if let Err(e) = self.shared.dispatch(&id, Command::Scale(r, msg.clone())) {
                        reply(reply_err(e));
                    }
                }
                Err(e) => reply(reply_err(format!("malformed scale request: {e}"))),
            }
        }
    }

    fn on_stop(&mut self, _ctx: &PluginContext) {
        // Dropping the senders ends each worker after its current command.
        self.shared.workers.lock().clear();
    }
}
