// SPDX-License-Identifier: Apache-2.0

//! Monitoring repository: metric samples per service instance.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::broker::Message;
use crate::plugin::{Plugin, PluginContext, PluginManifest};

/// Topic prefix for metric samples: `function.monitoring.<function-instance>.<metric>`.
pub const MONITORING_PREFIX: &str = "function.monitoring";

/// Payload of a metric message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub timestamp: f64,
    pub value: f64,
    /// Service instance the sample belongs to.
    pub instance_id: String,
    pub vnf: String,
    pub function_instance: String,
    pub metric: String,
}

#[derive(Default)]
struct State {
    /// Keyed by (service instance, vnf, metric); each series time-ordered.
    series: BTreeMap<(String, String, String), Vec<MetricPoint>>,
    total: u64,
}

#[derive(Default)]
pub struct MonitoringStore {
    state: Mutex<State>,
    grew: Condvar,
}

impl MonitoringStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, p: MetricPoint) {
        let mut s = self.state.lock();
        let series = s.series.entry((p.instance_id.clone(), p.vnf.clone(), p.metric.clone())).or_default();
        let at = series.partition_point(|q| q.timestamp <= p.timestamp);
        series.insert(at, p);
        s.total += 1;
        self.grew.notify_all();
    }

    /// Samples of `metric` for an instance with `from <= timestamp < to`,
    /// time-ordered across all its functions.
    pub fn query(&self, instance: &str, metric: &str, from: f64, to: f64) -> Vec<MetricPoint> {
        let s = self.state.lock();
        let mut out: Vec<MetricPoint> = s
            .series
            .iter()
            .filter(|((i, _, m), _)| i == instance && m == metric)
            .flat_map(|(_, v)| v.iter().filter(|p| p.timestamp >= from && p.timestamp < to).cloned())
            .collect();
        out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then_with(|| a.function_instance.cmp(&b.function_instance)));
        out
    }

    /// All `(timestamp, value)` samples of one function's metric.
    pub fn window(&self, instance: &str, vnf: &str, metric: &str) -> Vec<(f64, f64)> {
        let s = self.state.lock();
        s.series
            .get(&(instance.to_string(), vnf.to_string(), metric.to_string()))
            .map(|v| v.iter().map(|p| (p.timestamp, p.value)).collect())
            .unwrap_or_default()
    }

    /// Metric names recorded for one function of an instance.
    pub fn metrics(&self, instance: &str, vnf: &str) -> Vec<String> {
        let s = self.state.lock();
        s.series.keys().filter(|(i, v, _)| i == instance && v == vnf).map(|(_, _, m)| m.clone()).collect()
    }

    pub fn total(&self) -> u64 {
        self.state.lock().total
    }

    /// Block until at least `n` samples have been recorded in total.
    pub fn wait_for_total(&self, n: u64, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut s = self.state.lock();
        while s.total < n {
            if self.grew.wait_until(&mut s, deadline).timed_out() {
                return s.total >= n;
            }
        }
        true
    }
}

/// Stores every metric message it sees.
pub struct MonitoringPlugin {
    pub store: std::sync::Arc<MonitoringStore>,
}

impl Plugin for MonitoringPlugin {
    fn manifest(&self) -> PluginManifest {
        PluginManifest::new("monitoring").subscribes(&["function.monitoring.#"])
    }

    fn handle(&mut self, _ctx: &PluginContext, msg: &Message) {
        match serde_json::from_value::<MetricPoint>(msg.payload.clone()) {
            Ok(p) => self.store.record(p),
            Err(e) => tracing::debug!(topic = %msg.topic, error = %e, "dropping malformed sample"),
        }
    }
}

/// Topic a sample is published on.
pub fn metric_topic(function_instance: &str, metric: &str) -> String {
    format!(
        "{MONITORING_PREFIX}.{}.{}",
        crate::broker::sanitize_segment(function_instance),
        crate::broker::sanitize_segment(metric)
    )
}

pub fn metric_payload(p: &MetricPoint) -> serde_json::Value {
    json!(p)
}
