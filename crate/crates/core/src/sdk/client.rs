// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::SdkError;
use crate::gatekeeper::{ApiClient, ApiResponse};
use crate::lifecycle::InstantiateOptions;
use crate::Resources;

/// Thin client over the platform API. Non-2xx answers become
/// [`SdkError::Api`] with the gatekeeper's error code.
#[derive(Clone, Debug)]
pub struct PlatformClient {
    pub api: ApiClient,
    /// Interval between status polls.
    pub poll: Duration,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PushOutcome {
    pub package_id: String,
    /// False when the platform already had the package.
    pub created: bool,
    pub status: String,
    pub rejections: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub timestamp: f64,
    pub value: f64,
    pub vnf: String,
    pub function_instance: String,
}

fn checked(resp: ApiResponse) -> Result<Value, SdkError> {
    if resp.is_success() {
        return Ok(resp.body);
    }
    let code = resp.error_code().unwrap_or("INTERNAL").to_string();
    let message = resp.body.get("message").and_then(Value::as_str).unwrap_or_default().to_string();
    Err(SdkError::Api { status: resp.status, code, message })
}

impl PlatformClient {
    pub fn new(endpoint: impl Into<String>, token: impl Into<String>) -> Self {
        PlatformClient { api: ApiClient::new(endpoint, token), poll: Duration::from_millis(100) }
    }

    pub fn health(&self) -> Result<Value, SdkError> {
        checked(self.api.get("/health", &[])?)
    }

    pub fn push_bytes(&self, archive: Vec<u8>) -> Result<PushOutcome, SdkError> {
        let resp = self.api.post_bytes("/packages", archive)?;
        let created = resp.status == 201;
        let body = checked(resp)?;
        Ok(PushOutcome {
            package_id: body["package_id"].as_str().unwrap_or_default().to_string(),
            created,
            status: body["status"].as_str().unwrap_or_default().to_string(),
            rejections: serde_json::from_value(body["rejections"].clone()).unwrap_or_default(),
        })
    }

    pub fn push(&self, package: &Path) -> Result<PushOutcome, SdkError> {
        self.push_bytes(std::fs::read(package)?)
    }

    /// Request an instance; returns its id without waiting.
    pub fn instantiate(&self, package_id: &str, options: &InstantiateOptions) -> Result<String, SdkError> {
        let body = checked(self.api.post_json("/instances", &json!({ "package_id": package_id, "options": options }))?)?;
        body["instance_id"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| SdkError::Api { status: 500, code: "INTERNAL".into(), message: "reply without instance_id".into() })
    }

    pub fn status(&self, instance: &str) -> Result<Value, SdkError> {
        checked(self.api.get(&format!("/instances/{instance}"), &[])?)
    }

    /// Poll until the instance is RUNNING, ERROR or TERMINATED. ERROR is
    /// returned as [`SdkError::InstanceFailed`].
    pub fn wait(&self, instance: &str, timeout: Duration) -> Result<Value, SdkError> {
        let deadline = Instant::now() + timeout;
        loop {
            let body = self.status(instance)?;
            match body["state"].as_str() {
                Some("RUNNING") | Some("TERMINATED") => return Ok(body),
                Some("ERROR") => {
                    return Err(SdkError::InstanceFailed {
                        instance: instance.into(),
                        cause: body["error_cause"].as_str().unwrap_or("unknown").into(),
                    })
                }
                _ if Instant::now() >= deadline => {
                    return Err(SdkError::Api {
                        status: 504,
                        code: "TIMEOUT".into(),
                        message: format!("instance `{instance}` did not settle in {timeout:?}"),
                    })
                }
                _ => std::thread::sleep(self.poll),
            }
        }
    }

    /// Instantiate, then wait unless `wait` is `None`.
    pub fn deploy(&self, package_id: &str, options: &InstantiateOptions, wait: Option<Duration>) -> Result<Value, SdkError> {
        let id = self.instantiate(package_id, options)?;
        match wait {
            Some(t) => self.wait(&id, t),
            None => self.status(&id),
        }
    }

    pub fn terminate(&self, instance: &str) -> Result<Value, SdkError> {
        checked(self.api.delete(&format!("/instances/{instance}"))?)
    }

    pub fn scale(&self, instance: &str, vnf: &str, target: u32) -> Result<Value, SdkError> {
        checked(self.api.post_json(&format!("/instances/{instance}/scale"), &json!({ "vnf": vnf, "target": target }))?)
    }

    /// Stored samples with `from <= timestamp < to`, time-ordered.
    pub fn metrics(&self, instance: &str, metric: &str, from: Option<f64>, to: Option<f64>) -> Result<Vec<MetricSample>, SdkError> {
        let mut q = vec![("name", metric.to_string())];
        q.extend(from.map(|f| ("from", f.to_string())));
        q.extend(to.map(|t| ("to", t.to_string())));
        let body = checked(self.api.get(&format!("/instances/{instance}/metrics"), &q)?)?;
        serde_json::from_value(body["samples"].clone())
            .map_err(|e| SdkError::Api { status: 500, code: "INTERNAL".into(), message: format!("malformed samples: {e}") })
    }

    /// Stream samples newer than those already seen to `sink` until it
    /// returns false. Only returns on error or when the sink stops.
    pub fn follow(&self, instance: &str, metric: &str, from: Option<f64>, mut sink: impl FnMut(&MetricSample) -> bool) -> Result<(), SdkError> {
        let mut after = from.unwrap_or(f64::NEG_INFINITY);
        let mut seen_at_after: Vec<String> = Vec::new();
        loop {
            for s in self.metrics(instance, metric, Some(after), None)? {
                // Samples at the boundary timestamp come back on every poll.
                if s.timestamp == after && seen_at_after.contains(&s.function_instance) {
                    continue;
                }
                if s.timestamp > after {
                    after = s.timestamp;
                    seen_at_after.clear();
                }
                seen_at_after.push(s.function_instance.clone());
                if !sink(&s) {
                    return Ok(());
                }
            }
            std::thread::sleep(self.poll);
        }
    }

    pub fn slices(&self) -> Result<Value, SdkError> {
        checked(self.api.get("/slices", &[])?)
    }

    pub fn create_slice(&self, tenant: &str, mode: &str, quota: Resources) -> Result<Value, SdkError> {
        checked(self.api.post_json("/slices", &json!({ "tenant": tenant, "mode": mode, "quota": quota }))?)
    }

    pub fn delete_slice(&self, id: &str) -> Result<Value, SdkError> {
        checked(self.api.delete(&format!("/slices/{id}"))?)
    }
}
