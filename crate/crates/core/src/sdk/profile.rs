// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{PlatformClient, SdkError};
use crate::descriptors::FunctionDescriptor;
use crate::executive::Tier;
use crate::gatekeeper::Role;
use crate::infra::{PopSpec, Workload, WorkloadProfile};
use crate::lifecycle::InstantiateOptions;
use crate::package::{build_package, package_id, workspace_descriptors, PackageMode, WorkspaceSnapshot};
use crate::ssm::ScalingDecision;
use crate::{Platform, PlatformConfig, Resources};

const PROFILE_TOKEN: &str = "profile-token";
const PROFILE_POP: &str = "local";

static RUNS: AtomicU64 = AtomicU64::new(0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub workload: WorkloadProfile,
    pub duration_ticks: u64,
    /// Replica ceiling of the embedded platform.
    pub max_replicas: u32,
}

impl ProfileOptions {
    pub fn new(workload: WorkloadProfile, duration_ticks: u64) -> Self {
        ProfileOptions { workload, duration_ticks, max_replicas: 4 }
    }
}

/// Summary over every sample of one metric. Only present for metrics with
/// at least one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub samples: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Nearest-rank: the `ceil(0.95 n)`-th smallest sample.
    pub p95: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<MetricSummary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Some(MetricSummary {
            samples: n,
            min: sorted[0],
            max: sorted[n - 1],
            mean: values.iter().sum::<f64>() / n as f64,
            p95: sorted[rank - 1],
        })
    }
}

/// Replica counts per function after the scaling step of one tick.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub tick: u64,
    pub replicas: BTreeMap<String, u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleFiring {
    pub tick: u64,
    pub vnf: String,
    pub tier: Tier,
    /// Index of the rule within its program.
    pub rule: usize,
    pub from: u32,
    pub to: u32,
    pub applied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilingReport {
    pub service: String,
    pub instance_id: String,
    pub ticks: u64,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub timeline: Vec<TimelinePoint>,
    pub firings: Vec<RuleFiring>,
    pub wall_clock_ms: u64,
}

impl ProfilingReport {
    /// The report minus wall-clock time, which is the only field that
    /// differs between runs with the same inputs.
    pub fn without_timing(&self) -> ProfilingReport {
        ProfilingReport { wall_clock_ms: 0, ..self.clone() }
    }

    pub fn scale_ups(&self) -> usize {
        self.firings.iter().filter(|f| f.to > f.from).count()
    }

    pub fn scale_downs(&self) -> usize {
        self.firings.iter().filter(|f| f.to < f.from).count()
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "service   {}", self.service);
        let _ = writeln!(s, "ticks     {}", self.ticks);
        let _ = writeln!(s, "duration  {} ms", self.wall_clock_ms);
        let _ = writeln!(s, "\n{:<16} {:>8} {:>8} {:>8} {:>8} {:>8}", "METRIC", "SAMPLES", "MIN", "MAX", "MEAN", "P95");
        for (m, x) in &self.metrics {
            let _ = writeln!(s, "{m:<16} {:>8} {:>8.3} {:>8.3} {:>8.3} {:>8.3}", x.samples, x.min, x.max, x.mean, x.p95);
        }
        let _ = writeln!(s, "\n{:<6} {:<20} {:<12} {:>4} {:>9} {:>7}", "TICK", "FUNCTION", "TIER", "RULE", "REPLICAS", "APPLIED");
        for f in &self.firings {
            let tier = serde_json::to_value(f.tier).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            let _ = writeln!(s, "{:<6} {:<20} {:<12} {:>4} {:>4}->{:<3} {:>7}", f.tick, f.vnf, tier, f.rule, f.from, f.to, f.applied);
        }
        let _ = writeln!(s, "\nreplica changes");
        let mut last: Option<&BTreeMap<String, u32>> = None;
        for p in &self.timeline {
            if last != Some(&p.replicas) {
                let counts: Vec<String> = p.replicas.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let _ = writeln!(s, "  tick {:<6} {}", p.tick, counts.join(" "));
                last = Some(&p.replicas);
            }
        }
        s
    }
}

/// Shuts the embedded platform down on every exit path.
struct Embedded(Platform);

impl Drop for Embedded {
    fn drop(&mut self) {
        self.0.shutdown();
    }
}

/// A single PoP large enough for every function at its replica ceiling.
fn local_topology(functions: &[FunctionDescriptor], max_replicas: u32) -> Vec<PopSpec> {
    let need: Resources = functions.iter().map(|f| f.resources() * max_replicas as u64).sum();
    let cap = Resources::new(need.cpu_cores.max(1), need.memory_mb.max(1), need.storage_gb);
    vec![PopSpec::new(PROFILE_POP, cap)]
}

/// Deploy the workspace's service on an embedded platform, drive it with
/// `opts.workload` for `opts.duration_ticks`, and run the scaling step
/// after every tick. Identical inputs give identical reports up to
/// `wall_clock_ms`. With zero ticks the report has an empty timeline.
pub fn profile(ws: &WorkspaceSnapshot, opts: &ProfileOptions) -> Result<ProfilingReport, SdkError> {
    let started = Instant::now();
    let descs = workspace_descriptors(ws)?;
    let service = match descs.services.first() {
        Some((_, s)) => s.identity.slug(),
        None => return Err(SdkError::Input("workspace has no service descriptor".into())),
    };
    let archive = build_package(ws, PackageMode::Fat)?;
    let functions: Vec<FunctionDescriptor> = descs.functions.iter().map(|(_, f)| f.clone()).collect();

    let mut cfg = PlatformConfig::new("profile", local_topology(&functions, opts.max_replicas))
        .with_principal("developer", Role::Developer, PROFILE_TOKEN);
    cfg.local_name = Some(format!("profile-{}-{}", std::process::id(), RUNS.fetch_add(1, Ordering::SeqCst)));
    cfg.max_replicas = opts.max_replicas;
    let step = Duration::from_millis(cfg.step_timeout_ms);
    let platform = Embedded(Platform::start(cfg).map_err(|e| SdkError::Profile(e.to_string()))?);
    let p = &platform.0;

    let client = PlatformClient { api: p.client(PROFILE_TOKEN), poll: Duration::from_millis(2) };
    let pushed = client.push_bytes(archive.clone())?;
    debug_assert_eq!(pushed.package_id, package_id(&archive));
    let status = client.deploy(&pushed.package_id, &InstantiateOptions::default(), Some(step * 4))?;
    let instance = status["instance_id"].as_str().unwrap_or_default().to_string();

    let workload = Workload::uniform(opts.workload.clone());
    let mut timeline = Vec::new();
    let mut firings = Vec::new();
    for tick in 0..opts.duration_ticks {
        p.tick(&workload, tick);
        for v in p.evaluate_scaling(&instance).map_err(SdkError::Profile)? {
            if let (Some(tier), Some(rule), ScalingDecision::SetReplicas(to)) = (v.tier, v.rule, v.decision) {
                firings.push(RuleFiring { tick, vnf: v.vnf.clone(), tier, rule, from: v.replicas, to, applied: v.applied });
            }
        }
        let record = p.repo().get(&instance).ok_or_else(|| SdkError::Profile(format!("instance `{instance}` vanished")))?;
        timeline.push(TimelinePoint { tick, replicas: record.replica_counts() });
    }

    let values: Vec<f64> = p
        .monitoring()
        .query(&instance, &opts.workload.metric, f64::NEG_INFINITY, f64::INFINITY)
        .into_iter()
        .map(|s| s.value)
        .collect();
    let metrics = MetricSummary::of(&values).map(|m| (opts.workload.metric.clone(), m)).into_iter().collect();
    client.terminate(&instance)?;
    drop(platform);

    Ok(ProfilingReport {
        service,
        instance_id: instance,
        ticks: opts.duration_ticks,
        metrics,
        timeline,
        firings,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    })
}

/// Parse a workload profile from YAML.
pub fn parse_profile(text: &str) -> Result<WorkloadProfile, SdkError> {
    serde_yaml::from_str(text).map_err(|e| SdkError::Input(format!("profile: {e}")))
}
