// SPDX-License-Identifier: Apache-2.0

//! The platform's authenticated entry point.
//!
//! Every platform serves the same request/response API, which is what lets
//! one platform act as a client of another: a parent registers a child by
//! endpoint and drives it through this API when it delegates a service.
//! Authentication runs before routing, so no request with a missing or
//! unknown token has any effect.

mod children;
mod transport;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use children::{ChildError, ChildPlatformRecord, Children, RecursionPlugin};
pub use transport::{register_local, unregister_local, ApiClient, HttpServer, TransportError, LOCAL_SCHEME};

use crate::broker::{BrokerError, Message};
use crate::catalogue::{Catalogue, PackageStatus, StoredPackage};
use crate::descriptors::{validate_service, Descriptor, FunctionDescriptor, Identity, ManagerRef};
use crate::executive::{onboard_source, SsmRuntime};
use crate::infra::Infrastructure;
use crate::lifecycle::{
    unwrap_reply, CreateRequest, InstantiateOptions, Repository, ServiceInstanceRecord, TOPIC_CREATE,
    TOPIC_SCALE, TOPIC_TERMINATE,
};
use crate::monitoring::MonitoringStore;
use crate::package::{open_package, package_id, PackageError};
use crate::plugin::{Plugin, PluginContext, PluginManifest};
use crate::slicing::{SliceError, SliceManager, SliceMode};
use crate::ssm::SsmProgram;
use crate::Resources;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Developer,
    Operator,
    /// Reserved for parent/child platform links.
    Platform,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub id: String,
    pub role: Role,
    pub token: String,
    /// Package ids this principal may instantiate besides its own uploads.
    #[serde(default)]
    pub owned: BTreeSet<String>,
}

impl Principal {
    pub fn new(id: impl Into<String>, role: Role, token: impl Into<String>) -> Self {
        Principal { id: id.into(), role, token: token.into(), owned: BTreeSet::new() }
    }

    fn privileged(&self) -> bool {
        matches!(self.role, Role::Operator | Role::Platform)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApiRequest {
    pub method: String,
    pub path: String,
    pub query: BTreeMap<String, String>,
    pub token: Option<String>,
    pub body: Vec<u8>,
}

impl ApiRequest {
    pub fn new(method: &str, path: &str, token: Option<&str>) -> Self {
        ApiRequest { method: method.into(), path: path.into(), token: token.map(str::to_owned), ..Default::default() }
    }

    pub fn with_json(mut self, body: &Value) -> Self {
        self.body = serde_json::to_vec(body).expect("json");
        self
    }

    pub fn with_body(mut self, body: Vec<u8>) -> Self {
        self.body = body;
        self
    }

    pub fn with_query(mut self, k: &str, v: impl Into<String>) -> Self {
        self.query.insert(k.into(), v.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// The `error` code of a failure body.
    pub fn error_code(&self) -> Option<&str> {
        self.body.get("error").and_then(Value::as_str)
    }
}

/// A failed request. `code` is stable and machine-readable.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn bad_request(m: impl Into<String>) -> Self {
        Self::new(400, "BAD_REQUEST", m)
    }

    fn forbidden(m: impl Into<String>) -> Self {
        Self::new(403, "FORBIDDEN", m)
    }

    fn internal(m: impl Into<String>) -> Self {
        Self::new(500, "INTERNAL", m)
    }

    fn into_response(self) -> ApiResponse {
        ApiResponse { status: self.status, body: json!({ "error": self.code, "message": self.message }) }
    }
}

impl From<PackageError> for ApiError {
    fn from(e: PackageError) -> Self {
        match &e {
            PackageError::ValidationFailed(r) => {
                let findings: Vec<String> = r.errors().map(ToString::to_string).collect();
                ApiError::new(422, "VALIDATION_FAILED", findings.join("; "))
            }
            PackageError::Io(_) => ApiError::internal(e.to_string()),
            _ => ApiError::new(422, "INVALID_PACKAGE", e.to_string()),
        }
    }
}

impl From<SliceError> for ApiError {
    fn from(e: SliceError) -> Self {
        let (status, code) = match &e {
            SliceError::QuotaExceedsCapacity { .. } => (409, "QUOTA_EXCEEDS_CAPACITY"),
            SliceError::InvalidQuota(_) => (400, "BAD_REQUEST"),
            SliceError::SpawnFailed(_) => (500, "SPAWN_FAILED"),
            SliceError::UnknownSlice(_) => (404, "UNKNOWN_SLICE"),
            SliceError::SliceNotEmpty(_) => (409, "SLICE_NOT_EMPTY"),
            SliceError::Rejected { .. } => (409, "QUOTA_EXCEEDED"),
            SliceError::Forbidden(_) => (403, "FORBIDDEN"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<ChildError> for ApiError {
    fn from(e: ChildError) -> Self {
        let (status, code) = match &e {
            ChildError::Unreachable(_) => (502, "CHILD_UNREACHABLE"),
            ChildError::Cycle(_) => (409, "CYCLE"),
            ChildError::Duplicate(_) => (409, "CONFLICT"),
            ChildError::Unknown(_) => (404, "UNKNOWN_CHILD"),
            ChildError::Remote(_) => (502, "REMOTE_ERROR"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

fn broker_err(e: BrokerError) -> ApiError {
    match e {
        BrokerError::Timeout(t) => ApiError::new(504, "TIMEOUT", format!("no answer on `{t}`")),
        e => ApiError::internal(e.to_string()),
    }
}

/// Map a lifecycle failure message to an API error.
fn lifecycle_err(message: String) -> ApiError {
    let (status, code) = if message.starts_with("unknown service") {
        (404, "UNKNOWN_SERVICE")
    } else if message.starts_with("unknown instance") {
        (404, "UNKNOWN_INSTANCE")
    } else if message.starts_with("instance has no function") || message.starts_with("invalid replica target") {
        (400, "BAD_REQUEST")
    } else if message.starts_with("scaling failed") {
        (409, "SCALE_FAILED")
    } else if message.starts_with("instance is") {
        (409, "NOT_RUNNING")
    } else {
        (500, "LIFECYCLE_ERROR")
    };
    ApiError::new(status, code, message)
}

type ApiResult = Result<(u16, Value), ApiError>;

/// Everything the gatekeeper reads or drives.
pub struct GatekeeperDeps {
    pub platform_id: String,
    pub principals: Vec<Principal>,
    pub catalogue: Arc<Catalogue>,
    pub runtime: Arc<SsmRuntime>,
    pub repo: Arc<Repository>,
    pub monitoring: Arc<MonitoringStore>,
    pub infra: Arc<Infrastructure>,
    pub slices: Arc<SliceManager>,
    pub children: Arc<Children>,
    /// Broker identity of the gatekeeper plugin.
    pub ctx: PluginContext,
    pub step_timeout: Duration,
}

pub struct Gatekeeper {
    deps: GatekeeperDeps,
    tokens: HashMap<String, Principal>,
}

#[derive(Deserialize)]
struct InstantiateBody {
    package_id: String,
    #[serde(default)]
    service: Option<Identity>,
    #[serde(default)]
    options: InstantiateOptions,
}

#[derive(Deserialize)]
struct ChildBody {
    endpoint: String,
    #[serde(default)]
    credentials: String,
}

#[derive(Deserialize)]
struct SliceBody {
    quota: Resources,
    mode: SliceMode,
    tenant: String,
}

#[derive(Deserialize)]
struct ScaleBody {
    vnf: String,
    target: u32,
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn package_view(p: &StoredPackage) -> Value {
    json!({
        "package_id": p.id,
        "status": p.status,
        "rejections": p.rejections,
        "services": p.services,
        "functions": p.functions,
    })
}

impl Gatekeeper {
    /// Fails when two principals share a token.
    pub fn new(deps: GatekeeperDeps) -> Result<Self, String> {
        let mut tokens = HashMap::new();
        for p in &deps.principals {
            if tokens.insert(p.token.clone(), p.clone()).is_some() {
                return Err(format!("token of principal `{}` is not unique", p.id));
            }
        }
        Ok(Gatekeeper { deps, tokens })
    }

    pub fn platform_id(&self) -> &str {
        &self.deps.platform_id
    }

    pub fn children(&self) -> &Arc<Children> {
        &self.deps.children
    }

    pub fn handle(&self, req: &ApiRequest) -> ApiResponse {
        let Some(principal) = req.token.as_deref().and_then(|t| self.tokens.get(t)) else {
            return ApiError::new(401, "AUTH_FAILED", "missing or invalid bearer token").into_response();
        };
        match self.route(principal, req) {
            Ok((status, body)) => ApiResponse { status, body },
            Err(e) => e.into_response(),
        }
    }

    fn route(&self, who: &Principal, req: &ApiRequest) -> ApiResult {
        let segments: Vec<&str> = req.path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
        match (req.method.as_str(), segments.as_slice()) {
            ("GET", ["health"]) => {
                self.deps.children.refresh(self.deps.step_timeout);
                Ok((200, json!({ "platform_id": self.deps.platform_id, "subtree": self.deps.children.descendants() })))
            }
            ("GET", ["capacity"]) => {
                // Aggregated over the subtree: a parent places on this
                // platform as a whole.
                let snap = self.deps.infra.snapshot();
                let (free, capacity) = self.deps.children.advertised(self.deps.step_timeout);
                Ok((
                    200,
                    json!({
                        "free": snap.total_free() + free,
                        "capacity": snap.total_capacity() + capacity,
                        "local_free": snap.total_free(),
                    }),
                ))
            }
            ("POST", ["packages"]) => self.upload_package(who, &req.body),
            ("GET", ["packages", id]) => {
                let p = self.deps.catalogue.package(id).ok_or_else(|| unknown_package(id))?;
                Ok((200, package_view(&p)))
            }
            ("POST", ["instances"]) => self.instantiate(who, parse_body(&req.body)?),
            ("GET", ["instances", id]) => self.status(who, id),
            ("DELETE", ["instances", id]) => self.terminate(who, id),
            ("POST", ["instances", id, "scale"]) => self.scale(who, id, parse_body(&req.body)?),
            ("GET", ["instances", id, "metrics"]) => self.metrics(who, id, &req.query),
            ("GET", ["children"]) => {
                self.require_operator(who)?;
                Ok((200, json!(self.deps.children.all())))
            }
            ("POST", ["children"]) => {
                self.require_operator(who)?;
                let b: ChildBody = parse_body(&req.body)?;
                let rec = self.deps.children.register(&self.deps.platform_id, &b.endpoint, &b.credentials, self.deps.step_timeout)?;
                Ok((201, json!(rec)))
            }
            ("GET", ["slices"]) => {
                self.require_operator(who)?;
                Ok((200, json!(self.deps.slices.slices())))
            }
            ("POST", ["slices"]) => {
                self.require_operator(who)?;
                let b: SliceBody = parse_body(&req.body)?;
                let s = self.deps.slices.create_slice(b.quota, b.mode, &b.tenant)?;
                Ok((201, json!(s)))
            }
            ("DELETE", ["slices", id]) => {
                self.require_operator(who)?;
                let s = self.deps.slices.delete_slice(id)?;
                Ok((200, json!(s)))
            }
            _ => Err(ApiError::new(404, "UNKNOWN_ROUTE", format!("no route for {} {}", req.method, req.path))),
        }
    }

    fn require_operator(&self, who: &Principal) -> Result<(), ApiError> {
        if who.role == Role::Operator {
            Ok(())
        } else {
            Err(ApiError::forbidden(format!("`{}` is not an operator", who.id)))
        }
    }

    fn upload_package(&self, who: &Principal, bytes: &[u8]) -> ApiResult {
        let id = package_id(bytes);
        if let Some(existing) = self.deps.catalogue.package(&id) {
            return Ok((200, package_view(&existing)));
        }
        let package = open_package(bytes)?;
        let descriptors: Vec<Descriptor> = package.descriptors()?.into_iter().map(|(_, d)| d).collect();
        let functions: Vec<FunctionDescriptor> = descriptors
            .iter()
            .filter_map(|d| match d {
                Descriptor::Function(f) => Some(f.clone()),
                _ => None,
            })
            .collect();

        let mut programs: Vec<(SsmProgram, Identity, Option<Identity>)> = Vec::new();
        let mut rejections = Vec::new();
        for d in &descriptors {
            let Descriptor::Service(nsd) = d else { continue };
            let mut vnfds = functions.clone();
            for r in &nsd.function_refs {
                if !vnfds.iter().any(|f| f.identity == r.identity) {
                    if let Some(f) = self.deps.catalogue.function(&r.identity) {
                        vnfds.push((*f).clone());
                    }
                }
            }
            let report = validate_service(nsd, &vnfds);
            if report.has_errors() {
                return Err(PackageError::ValidationFailed(report).into());
            }
            let mut onboard = |m: &ManagerRef, function: Option<&Identity>| {
                let source = package.files.get(&m.program_artifact).and_then(|b| std::str::from_utf8(b).ok());
                let result = match source {
                    Some(src) => onboard_source(src, m.executive).map_err(|e| e.to_string()),
                    None => Err("program is not embedded in the package".to_string()),
                };
                match result {
                    Ok(p) => programs.push((p, nsd.identity.clone(), function.cloned())),
                    Err(e) => rejections.push(format!("{} ({}): {e}", m.program_artifact, nsd.identity)),
                }
            };
            for m in &nsd.ssm_refs {
                onboard(m, None);
            }
            for r in &nsd.function_refs {
                if let Some(f) = vnfds.iter().find(|f| f.identity == r.identity) {
                    for m in &f.fsm_refs {
                        onboard(m, Some(&f.identity));
                    }
                }
            }
        }

        let status = if rejections.is_empty() { PackageStatus::Ok } else { PackageStatus::Degraded };
        let stored = self
            .deps
            .catalogue
            .add_package(&id, package, bytes.to_vec(), descriptors, &who.id, status, rejections)
            .map_err(|e| ApiError::new(409, "CONFLICT", e.to_string()))?;
        for (program, service, function) in programs {
            if let Err(e) = self.deps.runtime.install(program, &service, function.as_ref()) {
                // Already probed above, so this only fires on a changed budget.
                tracing::error!(package = %id, error = %e, "onboarded program failed to install");
            }
        }
        tracing::info!(package = %id, uploader = %who.id, status = ?stored.status, "package stored");
        Ok((201, package_view(&stored)))
    }

    fn instantiate(&self, who: &Principal, body: InstantiateBody) -> ApiResult {
        let pkg = self.deps.catalogue.package(&body.package_id).ok_or_else(|| unknown_package(&body.package_id))?;
        if !(who.privileged() || pkg.uploader == who.id || who.owned.contains(&pkg.id)) {
            return Err(ApiError::forbidden(format!("`{}` may not instantiate package {}", who.id, pkg.id)));
        }
        let service = match body.service {
            Some(s) if pkg.services.contains(&s) => s,
            Some(s) => return Err(ApiError::new(404, "UNKNOWN_SERVICE", format!("package has no service {s}"))),
            None => match pkg.services.as_slice() {
                [only] => only.clone(),
                [] => return Err(ApiError::bad_request("package contains no service")),
                _ => return Err(ApiError::bad_request("package has several services; name one")),
            },
        };
        if let Some(slice_id) = &body.options.slice_id {
            let slice = self
                .deps
                .slices
                .get(slice_id)
                .ok_or_else(|| ApiError::new(404, "UNKNOWN_SLICE", format!("unknown slice `{slice_id}`")))?;
            if slice.tenant != who.id {
                return Err(ApiError::forbidden(format!("slice {slice_id} belongs to another tenant")));
            }
        }
        let req = CreateRequest { service, owner: who.id.clone(), package_id: Some(pkg.id.clone()), options: body.options };
        let id = self.lifecycle(TOPIC_CREATE, json!(req), self.deps.step_timeout)?;
        Ok((202, json!({ "instance_id": id })))
    }

    fn lifecycle(&self, topic: &str, payload: Value, timeout: Duration) -> Result<Value, ApiError> {
        let reply = self.deps.ctx.request_with(topic, payload, timeout).map_err(broker_err)?;
        unwrap_reply(reply).map_err(lifecycle_err)
    }

    /// The record, provided `who` may see it.
    fn visible(&self, who: &Principal, id: &str) -> Result<ServiceInstanceRecord, ApiError> {
        let r = self.deps.repo.get(id).ok_or_else(|| ApiError::new(404, "UNKNOWN_INSTANCE", format!("unknown instance `{id}`")))?;
        if who.privileged() || r.owner == who.id {
            Ok(r)
        } else {
            Err(ApiError::forbidden(format!("instance {id} belongs to another principal")))
        }
    }

    fn child_client(&self, child: &str) -> Result<ApiClient, ApiError> {
        let rec = self.deps.children.get(child).ok_or_else(|| ChildError::Unknown(child.into()))?;
        Ok(rec.client(self.deps.step_timeout))
    }

    fn status(&self, who: &Principal, id: &str) -> ApiResult {
        let r = self.visible(who, id)?;
        let remote = r.remote.as_ref().map(|h| {
            let state = self
                .child_client(&h.child)
                .ok()
                .and_then(|c| c.get(&format!("/instances/{}", h.instance_id), &[]).ok())
                .filter(ApiResponse::is_success)
                .map(|resp| resp.body["state"].clone())
                .unwrap_or(Value::Null);
            json!({ "child": h.child, "instance_id": h.instance_id, "state": state })
        });
        let functions: Vec<Value> = r
            .function_instances
            .iter()
            .map(|f| json!({ "id": f.id, "vnf_id": f.vnf_id, "pop": f.pop, "replica_index": f.replica_index, "resources": f.resources }))
            .collect();
        Ok((
            200,
            json!({
                "instance_id": r.id,
                "service": r.service,
                "package_id": r.package_id,
                "state": r.state,
                "placement": r.placement,
                "replicas": r.replica_counts(),
                "function_instances": functions,
                "slice_id": r.slice_id,
                "owner": r.owner,
                "error_cause": r.error_cause,
                "remote": remote,
            }),
        ))
    }

    fn terminate(&self, who: &Principal, id: &str) -> ApiResult {
        let r = self.visible(who, id)?;
        if r.state.is_terminal() {
            return Ok((200, json!({ "instance_id": id, "state": r.state })));
        }
        // A delegated terminate waits on the whole subtree below.
        let state = self.lifecycle(TOPIC_TERMINATE, json!({ "instance_id": id }), self.deps.step_timeout * 3)?;
        Ok((200, json!({ "instance_id": id, "state": state })))
    }

    fn scale(&self, who: &Principal, id: &str, body: ScaleBody) -> ApiResult {
        self.visible(who, id)?;
        let replicas = self.lifecycle(
            TOPIC_SCALE,
            json!({ "instance_id": id, "vnf": body.vnf, "target": body.target }),
            self.deps.step_timeout * 3,
        )?;
        Ok((200, json!({ "instance_id": id, "vnf": body.vnf, "replicas": replicas })))
    }

    fn metrics(&self, who: &Principal, id: &str, query: &BTreeMap<String, String>) -> ApiResult {
        let r = self.visible(who, id)?;
        let name = query.get("name").filter(|n| !n.is_empty()).ok_or_else(|| ApiError::bad_request("query parameter `name` is required"))?;
        let bound = |k: &str, default: f64| -> Result<f64, ApiError> {
            match query.get(k).filter(|v| !v.is_empty()) {
                Some(v) => v.parse().map_err(|_| ApiError::bad_request(format!("`{k}` is not a number"))),
                None => Ok(default),
            }
        };
        let from = bound("from", f64::NEG_INFINITY)?;
        let to = bound("to", f64::INFINITY)?;
        if let Some(h) = &r.remote {
            let client = self.child_client(&h.child)?;
            let q: Vec<(&str, String)> = query.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
            let resp = client
                .get(&format!("/instances/{}/metrics", h.instance_id), &q)
                .map_err(|e| ApiError::from(ChildError::Unreachable(e.to_string())))?;
            if !resp.is_success() {
                return Err(ChildError::Remote(format!("{}: {}", resp.status, resp.body)).into());
            }
            let mut body = resp.body;
            body["instance_id"] = json!(id);
            return Ok((200, body));
        }
        let samples: Vec<Value> = self
            .deps
            .monitoring
            .query(id, name, from, to)
            .into_iter()
            .map(|p| json!({ "timestamp": p.timestamp, "value": p.value, "vnf": p.vnf, "function_instance": p.function_instance }))
            .collect();
        Ok((200, json!({ "instance_id": id, "metric": name, "samples": samples })))
    }
}

fn unknown_package(id: &str) -> ApiError {
    ApiError::new(404, "UNKNOWN_PACKAGE", format!("unknown package `{id}`"))
}

/// Broker identity of the gatekeeper. It only sends requests, so its
/// handler ignores deliveries.
pub struct GatekeeperPlugin;

impl Plugin for GatekeeperPlugin {
    fn manifest(&self) -> PluginManifest {
        PluginManifest::new("gatekeeper")
            .publishes(&[TOPIC_CREATE, TOPIC_TERMINATE, TOPIC_SCALE])
            .subscribes(&["service.instances.*.response"])
    }

    fn handle(&mut self, _ctx: &PluginContext, _msg: &Message) {}
}
