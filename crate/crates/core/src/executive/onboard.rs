// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use serde::Serialize;

use super::conflict::Tier;
use crate::descriptors::{ExecutiveKind, Identity};
use crate::ssm::{parse_ssm, PlacementEnvironment, PopAttributes, ProgramAst, ScalingEnvironment, SsmError, SsmProgram, SCALING_ATTRS, STEP_BUDGET};
use crate::Resources;

/// Wall-clock allowance for the onboarding probe.
pub const PROBE_DEADLINE: Duration = Duration::from_millis(100);

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum OnboardError {
    #[error("program does not parse: {0}")]
    Parse(SsmError),
    #[error("probe failed: {0}")]
    ProbeFailed(SsmError),
    #[error("evaluation budget exceeded: {0}")]
    BudgetExceeded(SsmError),
    #[error("type mismatch: {0}")]
    TypeMismatch(SsmError),
}

impl OnboardError {
    pub fn error(&self) -> &SsmError {
        match self {
            OnboardError::Parse(e)
            | OnboardError::ProbeFailed(e)
            | OnboardError::BudgetExceeded(e)
            | OnboardError::TypeMismatch(e) => e,
        }
    }

    fn classify(e: SsmError) -> Self {
        match e {
            SsmError::BudgetExceeded { .. } | SsmError::TooDeep { .. } => OnboardError::BudgetExceeded(e),
            SsmError::TypeMismatch { .. } => OnboardError::TypeMismatch(e),
            _ => OnboardError::ProbeFailed(e),
        }
    }
}

const PROBE_POPS: [(&str, u64, u64, u64, f64); 2] = [("probe-a", 8, 8192, 100, 10.0), ("probe-b", 4, 4096, 50, 20.0)];

fn probe_pop(id: &str, cpu: u64, mem: u64, storage: u64, user: f64) -> PopAttributes {
    PopAttributes {
        id: id.to_string(),
        cpu_free: cpu as f64,
        mem_free: mem as f64,
        storage_free: storage as f64,
        latency_ms: [(crate::infra::USER.to_string(), user)].into(),
    }
}

/// Two PoPs, plus one PoP per id the program names in an index so that
/// programs written against a concrete topology can be probed.
fn placement_probe(score: &crate::ssm::Expr) -> PlacementEnvironment {
    let mut named = BTreeSet::new();
    score.visit_refs(&mut |a, _, _| {
        if let Some(k) = &a.index {
            named.insert((a.name == "latency_ms", k.clone()));
        }
    });
    let mut pops: Vec<PopAttributes> = PROBE_POPS.iter().map(|&(id, c, m, s, l)| probe_pop(id, c, m, s, l)).collect();
    for (is_latency, k) in &named {
        if !is_latency && !pops.iter().any(|p| &p.id == k) {
            pops.push(probe_pop(k, 2, 2048, 10, 15.0));
        }
    }
    let ids: Vec<String> = pops.iter().map(|p| p.id.clone()).collect();
    for p in &mut pops {
        for other in ids.iter().chain(named.iter().filter(|(l, _)| *l).map(|(_, k)| k)) {
            p.latency_ms.entry(other.clone()).or_insert(if *other == p.id { 0.0 } else { 5.0 });
        }
    }
    PlacementEnvironment { pops, request: Resources::new(1, 512, 1) }
}

/// One window per metric the program reads.
fn scaling_probe(program: &SsmProgram) -> ScalingEnvironment {
    let mut windows = BTreeMap::new();
    if let ProgramAst::Scaling { rules } = &program.ast {
        for r in rules {
            let mut add = |e: &crate::ssm::Expr| {
                e.visit_refs(&mut |a, _, _| {
                    if a.index.is_some() || !SCALING_ATTRS.contains(&a.name.as_str()) {
                        windows
                            .entry(a.to_string())
                            .or_insert_with(|| (0..6).map(|i| (1000.0 - 10.0 * (5 - i) as f64, 0.5)).collect());
                    }
                });
            };
            add(&r.when);
            if let crate::ssm::Action::Set(e) = &r.action {
                add(e);
            }
        }
    }
    ScalingEnvironment { now: 1000.0, windows, replicas: 2, max_replicas: 4 }
}

/// Accept a program only if it type-checks, fits the step budget
/// statically, and evaluates cleanly on a synthetic environment in time.
pub fn onboard_ssm(program: &SsmProgram) -> Result<(), OnboardError> {
    program.check().map_err(OnboardError::classify)?;
    let nodes = program.node_count();
    if nodes > STEP_BUDGET {
        return Err(OnboardError::BudgetExceeded(SsmError::BudgetExceeded {
            at: crate::ssm::Pos::START,
            reason: format!("{nodes} nodes exceed the budget of {STEP_BUDGET}"),
        }));
    }
    let deadline = Some((Instant::now(), PROBE_DEADLINE));
    match &program.ast {
        ProgramAst::Placement { score } => {
            let env = placement_probe(score);
            for i in 0..env.pops.len() {
                program.score_limited(&env, i, STEP_BUDGET, deadline).map_err(OnboardError::classify)?;
            }
        }
        ProgramAst::Scaling { .. } => {
            let env = scaling_probe(program);
            program.decide_limited(&env, STEP_BUDGET, deadline).map_err(OnboardError::classify)?;
        }
    }
    Ok(())
}

/// Parse and onboard in one step.
pub fn onboard_source(source: &str, kind: ExecutiveKind) -> Result<SsmProgram, OnboardError> {
    let program = parse_ssm(source, kind).map_err(|e| match e {
        SsmError::TooDeep { .. } => OnboardError::BudgetExceeded(e),
        e => OnboardError::Parse(e),
    })?;
    onboard_ssm(&program)?;
    Ok(program)
}

/// An onboarded program and where it applies.
#[derive(Clone, Debug, Serialize)]
pub struct SsmHandle {
    /// Onboarding sequence number, unique per registry.
    pub id: u64,
    pub service: Identity,
    /// The function an FSM manages; `None` for an SSM.
    pub function: Option<Identity>,
    pub kind: ExecutiveKind,
    #[serde(skip)]
    pub program: Arc<SsmProgram>,
}

impl SsmHandle {
    pub fn tier(&self) -> Tier {
        if self.function.is_some() {
            Tier::FunctionFsm
        } else {
            Tier::ServiceSsm
        }
    }

    /// Topic prefix reserved for this program's traffic.
    pub fn namespace(&self) -> String {
        match &self.function {
            None => format!("service.{}.ssm.{}", self.kind, self.service.slug()),
            Some(f) => format!("function.{}.ssm.{}.{}", self.kind, self.service.slug(), f.slug()),
        }
    }
}

/// Pattern covering every namespace of a service's managers.
pub fn service_namespace_pattern(service: &Identity) -> String {
    format!("*.*.ssm.{}.#", service.slug())
}

/// Onboarded programs. Writes are linearizable; reads are snapshots.
#[derive(Debug, Default)]
pub struct SsmRegistry {
    handles: RwLock<Vec<SsmHandle>>,
}

impl SsmRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn onboard(
        &self,
        program: SsmProgram,
        service: &Identity,
        function: Option<&Identity>,
    ) -> Result<SsmHandle, OnboardError> {
        onboard_ssm(&program)?;
        let mut handles = self.handles.write();
        let id = handles.last().map_or(1, |h| h.id + 1);
        let h = SsmHandle {
            id,
            service: service.clone(),
            function: function.cloned(),
            kind: program.kind,
            program: Arc::new(program),
        };
        handles.push(h.clone());
        Ok(h)
    }

    /// Handles of one kind that apply to a service, in onboarding order.
    pub fn for_service(&self, service: &Identity, kind: ExecutiveKind) -> Vec<SsmHandle> {
        self.handles.read().iter().filter(|h| &h.service == service && h.kind == kind).cloned().collect()
    }

    pub fn get(&self, id: u64) -> Option<SsmHandle> {
        self.handles.read().iter().find(|h| h.id == id).cloned()
    }

    pub fn all(&self) -> Vec<SsmHandle> {
        self.handles.read().clone()
    }
}
