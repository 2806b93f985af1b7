// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::AttrRef;
use super::{Pos, SsmError};
use crate::Resources;

/// Attribute source for one evaluation.
pub trait Env {
    fn attr(&self, a: &AttrRef, at: Pos) -> Result<f64, SsmError>;
    fn avg(&self, metric: &AttrRef, window_s: u64, at: Pos) -> Result<f64, SsmError>;
}

/// Attribute names a placement program may read.
pub const PLACEMENT_ATTRS: [&str; 7] =
    ["cpu_free", "mem_free", "storage_free", "latency_ms", "req_cpu", "req_mem", "req_storage"];

/// Attribute names a scaling program reads that are not metrics.
pub const SCALING_ATTRS: [&str; 2] = ["replicas", "max_replicas"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopAttributes {
    pub id: String,
    pub cpu_free: f64,
    pub mem_free: f64,
    pub storage_free: f64,
    /// Latency to other PoPs and to `user`.
    pub latency_ms: BTreeMap<String, f64>,
}

impl PopAttributes {
    pub fn user_latency(&self) -> f64 {
        self.latency_ms.get(crate::infra::USER).copied().unwrap_or(0.0)
    }

    fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "cpu_free" => self.cpu_free,
            "mem_free" => self.mem_free,
            "storage_free" => self.storage_free,
            "latency_ms" => self.user_latency(),
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementEnvironment {
    pub pops: Vec<PopAttributes>,
    pub request: Resources,
}

/// A placement environment seen from one candidate PoP.
pub struct Candidate<'a> {
    pub env: &'a PlacementEnvironment,
    pub pop: usize,
}

impl Env for Candidate<'_> {
    fn attr(&self, a: &AttrRef, at: Pos) -> Result<f64, SsmError> {
        let unknown = || SsmError::UnknownAttribute { at, name: a.to_string() };
        let me = &self.env.pops[self.pop];
        let r = &self.env.request;
        match (a.name.as_str(), a.index.as_deref()) {
            ("req_cpu", None) => Ok(r.cpu_cores as f64),
            ("req_mem", None) => Ok(r.memory_mb as f64),
            ("req_storage", None) => Ok(r.storage_gb as f64),
            ("latency_ms", Some(k)) => me.latency_ms.get(k).copied().ok_or_else(unknown),
            (name, None) => me.get(name).ok_or_else(unknown),
            (name, Some(k)) => self.env.pops.iter().find(|p| p.id == k).and_then(|p| p.get(name)).ok_or_else(unknown),
        }
    }

    fn avg(&self, metric: &AttrRef, _window_s: u64, at: Pos) -> Result<f64, SsmError> {
        Err(SsmError::UnknownMetric { at, name: metric.to_string() })
    }
}

/// Metric windows and replica state for one scaled function.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingEnvironment {
    /// Evaluation time, seconds. Windows end here.
    pub now: f64,
    /// Samples `(timestamp, value)` per metric key, time-ordered. Keys are
    /// metric names, or `metric[function-id]` for another function's metric.
    pub windows: BTreeMap<String, Vec<(f64, f64)>>,
    pub replicas: u32,
    pub max_replicas: u32,
}

impl ScalingEnvironment {
    fn window(&self, metric: &AttrRef, at: Pos) -> Result<&[(f64, f64)], SsmError> {
        self.windows
            .get(&metric.to_string())
            .map(Vec::as_slice)
            .ok_or_else(|| SsmError::UnknownMetric { at, name: metric.to_string() })
    }
}

impl Env for ScalingEnvironment {
    fn attr(&self, a: &AttrRef, at: Pos) -> Result<f64, SsmError> {
        match (a.name.as_str(), &a.index) {
            ("replicas", None) => Ok(self.replicas as f64),
            ("max_replicas", None) => Ok(self.max_replicas as f64),
            _ => {
                let w = self.window(a, at)?;
                w.last().map(|s| s.1).ok_or_else(|| SsmError::NoData { at, name: a.to_string() })
            }
        }
    }

    fn avg(&self, metric: &AttrRef, window_s: u64, at: Pos) -> Result<f64, SsmError> {
        let w = self.window(metric, at)?;
        let from = self.now - window_s as f64;
        let (sum, n) = w
            .iter()
            .filter(|(t, _)| *t > from && *t <= self.now)
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        if n == 0 {
            return Err(SsmError::NoData { at, name: metric.to_string() });
        }
        Ok(sum / n as f64)
    }
}
