// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::conflict::{resolve_conflict, Proposal, Tier};
use super::placement::{filter_topology, pick_pop, PlacementStrategy, TopologyView, ViewPolicy, ViewPop};
use super::sandbox::{call_sandbox, SandboxAnswer, SandboxCall, SsmRuntime};
use super::scaling::{evaluate_scaling, ScalingStrategy, DEFAULT_SCALING_METRIC};
use super::{FaultInjector, FaultPoint};
use crate::broker::Message;
use crate::descriptors::{ExecutiveKind, Identity};
use crate::infra::Infrastructure;
use crate::lifecycle::{reply_err, reply_ok, unwrap_reply, InstanceState, Repository, ScaleRequest, TOPIC_PLACEMENT, TOPIC_SCALE};
use crate::monitoring::MonitoringStore;
use crate::plugin::{Plugin, PluginContext, PluginManifest};
use crate::ssm::{ScalingDecision, ScalingEnvironment};
use crate::Resources;

pub const TOPIC_SCALING_EVALUATE: &str = "service.scaling.evaluate.request";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementItem {
    /// Key in the resulting map, usually the function id.
    pub key: String,
    pub function: Identity,
    pub resources: Resources,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRequest {
    pub instance_id: String,
    pub service: Identity,
    pub items: Vec<PlacementItem>,
    /// Only these PoPs may be chosen.
    #[serde(default)]
    pub allow: Option<BTreeSet<String>>,
    /// When non-empty, place on these pseudo-PoPs instead of the local
    /// infrastructure.
    #[serde(default)]
    pub pseudo_pops: Vec<ViewPop>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementReply {
    pub placement: BTreeMap<String, String>,
    /// Which tier decided each item.
    pub sources: BTreeMap<String, Tier>,
}

/// Answers placement requests. Managers see a filtered view; every choice
/// is re-checked against the unfiltered remaining capacity.
pub struct PlacementExecutive {
    pub infra: Arc<Infrastructure>,
    pub ssm: Arc<SsmRuntime>,
    pub faults: Arc<FaultInjector>,
    pub view_policy: ViewPolicy,
}

impl PlacementExecutive {
    pub fn place(&self, ctx: &PluginContext, req: &PlacementRequest) -> Result<PlacementReply, String> {
        if self.faults.should_fail(FaultPoint::Placement) {
            return Err(format!("injected placement fault for {}", req.instance_id));
        }
        let mut remaining = if req.pseudo_pops.is_empty() {
            TopologyView::from_snapshot(&self.infra.snapshot())
        } else {
            TopologyView::new(req.pseudo_pops.clone())
        };
        if let Some(allow) = &req.allow {
            remaining.pops.retain(|p| allow.contains(&p.id));
        }
        if remaining.is_empty() {
            return Err("no PoP is eligible".into());
        }
        let handles = self.ssm.registry.for_service(&req.service, ExecutiveKind::Placement);
        let mut out = PlacementReply { placement: BTreeMap::new(), sources: BTreeMap::new() };
        for item in &req.items {
            let view = filter_topology(&remaining, &self.view_policy);
            let mut proposals = Vec::new();
            for h in handles.iter().filter(|h| h.function.as_ref().map_or(true, |f| *f == item.function)) {
                let call = SandboxCall::Pick { view: view.clone(), request: item.resources };
                match call_sandbox(ctx.broker(), ctx.client(), h, &call, ctx.timeout()) {
                    SandboxAnswer::Pop { pop: Some(pop) } => {
                        proposals.push(Proposal { tier: h.tier(), onboarded: h.id, decision: pop })
                    }
                    SandboxAnswer::Error { message } => tracing::warn!(handle = h.id, %message, "placement manager failed"),
                    _ => {}
                }
            }
            if let Ok(Some(pop)) = pick_pop(PlacementStrategy::Default, &item.resources, &view) {
                proposals.push(Proposal { tier: Tier::Default, onboarded: 0, decision: pop });
            }
            let chosen = resolve_conflict(&proposals, |pop: &String| {
                remaining.pop(pop).is_some_and(|p| item.resources.fits_within(&p.free))
            })
            .map_err(|_| format!("no PoP can host `{}`", item.key))?
            .clone();
            if let Some(p) = remaining.pops.iter_mut().find(|p| p.id == chosen.decision) {
                p.free = p.free.saturating_sub(&item.resources);
            }
            out.sources.insert(item.key.clone(), chosen.tier);
            out.placement.insert(item.key.clone(), chosen.decision);
        }
        Ok(out)
    }
}

impl Plugin for PlacementExecutive {
    fn manifest(&self) -> PluginManifest {
        PluginManifest::new("placement-executive")
            .subscribes(&[TOPIC_PLACEMENT, "*.placement.ssm.#"])
            .publishes(&["service.placement.response", "*.placement.ssm.#"])
            .executive(ExecutiveKind::Placement)
    }

    fn handle(&mut self, ctx: &PluginContext, msg: &Message) {
        if msg.topic.to_string() != TOPIC_PLACEMENT {
            return;
        }
        let out = match serde_json::from_value::<PlacementRequest>(msg.payload.clone()) {
            Ok(req) => match self.place(ctx, &req) {
                Ok(r) => reply_ok(r),
                Err(e) => reply_err(e),
            },
            Err(e) => reply_err(format!("malformed placement request: {e}")),
        };
        let _ = ctx.reply(msg, out);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub instance_id: String,
}

/// One function's scaling verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingVerdict {
    pub vnf: String,
    pub replicas: u32,
    pub decision: ScalingDecision,
    /// Deciding tier, absent when no rule fired anywhere.
    pub tier: Option<Tier>,
    /// Index of the rule that fired.
    pub rule: Option<usize>,
    /// Whether the lifecycle manager carried the decision out.
    pub applied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Evaluates scaling rules for running instances and asks the lifecycle
/// manager to apply the winning decision.
pub struct ScalingExecutive {
    pub infra: Arc<Infrastructure>,
    pub ssm: Arc<SsmRuntime>,
    pub repo: Arc<Repository>,
    pub monitoring: Arc<MonitoringStore>,
    pub max_replicas: u32,
}

impl ScalingExecutive {
    fn environment(&self, instance: &str, vnf: &str, vnfs: &[String], replicas: u32) -> ScalingEnvironment {
        let mut windows = BTreeMap::new();
        let mut now: f64 = 0.0;
        for other in vnfs {
            for metric in self.monitoring.metrics(instance, other) {
                let w = self.monitoring.window(instance, other, &metric);
                if let Some(last) = w.last() {
                    now = now.max(last.0);
                }
                let key = if other == vnf { metric } else { format!("{metric}[{other}]") };
                windows.insert(key, w);
            }
        }
        windows.entry(DEFAULT_SCALING_METRIC.to_string()).or_default();
        ScalingEnvironment { now, windows, replicas, max_replicas: self.max_replicas }
    }

    /// Whether `extra` more replicas of `res` fit, placed first-fit.
    fn capacity_for(&self, res: Resources, extra: u32) -> bool {
        let mut view = TopologyView::from_snapshot(&self.infra.snapshot());
        for _ in 0..extra {
            match pick_pop(PlacementStrategy::Default, &res, &view) {
                Ok(Some(pop)) => {
                    if let Some(p) = view.pops.iter_mut().find(|p| p.id == pop) {
                        p.free = p.free.saturating_sub(&res);
                    }
                }
                _ => return false,
            }
        }
        true
    }

    pub fn evaluate(&self, ctx: &PluginContext, instance: &str) -> Result<Vec<ScalingVerdict>, String> {
        let record = self.repo.get(instance).ok_or_else(|| format!("unknown instance `{instance}`"))?;
        if record.state != InstanceState::Running || record.remote.is_some() {
            return Ok(Vec::new());
        }
        let vnfs: Vec<String> = record.placement.keys().cloned().collect();
        let handles = self.ssm.registry.for_service(&record.service, ExecutiveKind::Scaling);
        let mut out = Vec::new();
        for vnf in &vnfs {
            let Some(first) = record.function_instances.iter().find(|f| &f.vnf_id == vnf) else { continue };
            let replicas = record.replicas(vnf);
            let env = self.environment(instance, vnf, &vnfs, replicas);
            let mut proposals = Vec::new();
            for h in handles.iter().filter(|h| h.function.as_ref().map_or(true, |f| *f == first.vnf)) {
                match call_sandbox(ctx.broker(), ctx.client(), h, &SandboxCall::Decide { env: env.clone() }, ctx.timeout()) {
                    SandboxAnswer::Scale { decision, fired } => {
                        proposals.push(Proposal { tier: h.tier(), onboarded: h.id, decision: (decision, fired) })
                    }
                    SandboxAnswer::Error { message } => tracing::warn!(handle = h.id, %message, "scaling manager failed"),
                    _ => {}
                }
            }
            match evaluate_scaling(ScalingStrategy::Default, &env) {
                Ok(o) => {
                    if let Some(fired) = o.fired {
                        proposals.push(Proposal { tier: Tier::Default, onboarded: 0, decision: (o.decision, fired) });
                    }
                }
                Err(e) => tracing::warn!(error = %e, "default scaling rules failed"),
            }
            let chosen = resolve_conflict(&proposals, |(d, _)| match d {
                ScalingDecision::SetReplicas(n) if *n > replicas => self.capacity_for(first.resources, n - replicas),
                _ => true,
            });
            let mut verdict = ScalingVerdict {
                vnf: vnf.clone(),
                replicas,
                decision: ScalingDecision::NoOp,
                tier: None,
                rule: None,
                applied: false,
                error: None,
            };
            if let Ok(p) = chosen {
                verdict.decision = p.decision.0;
                verdict.tier = Some(p.tier);
                verdict.rule = Some(p.decision.1);
            }
            if let ScalingDecision::SetReplicas(target) = verdict.decision {
                let req = ScaleRequest { instance_id: instance.to_string(), vnf: vnf.clone(), target };
                match ctx.request(TOPIC_SCALE, serde_json::json!(req)).map_err(|e| e.to_string()).and_then(unwrap_reply) {
                    Ok(_) => verdict.applied = true,
                    Err(e) => verdict.error = Some(e),
                }
            }
            out.push(verdict);
        }
        Ok(out)
    }
}

impl Plugin for ScalingExecutive {
    fn manifest(&self) -> PluginManifest {
        PluginManifest::new("scaling-executive")
            .subscribes(&[TOPIC_SCALING_EVALUATE, "service.scaling.evaluate.response", "service.instances.scale.response", "*.scaling.ssm.#"])
            .publishes(&["service.scaling.evaluate.response", TOPIC_SCALE, "*.scaling.ssm.#"])
            .executive(ExecutiveKind::Scaling)
    }

    fn handle(&mut self, ctx: &PluginContext, msg: &Message) {
        if msg.topic.to_string() != TOPIC_SCALING_EVALUATE {
            return;
        }
        let out: Value = match serde_json::from_value::<EvaluateRequest>(msg.payload.clone()) {
            Ok(req) => match self.evaluate(ctx, &req.instance_id) {
                Ok(v) => reply_ok(v),
                Err(e) => reply_err(e),
            },
            Err(e) => reply_err(format!("malformed evaluate request: {e}")),
        };
        let _ = ctx.reply(msg, out);
    }
}
