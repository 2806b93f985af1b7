// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Synthetic load model for one metric of one function instance.
///
/// `value(t) = clamp(base + amplitude * sin(2πt / period_ticks) + n(t), 0, 1)`
/// where `n(t)` is uniform in `[-noise, noise]`, drawn from a generator
/// seeded by `(noise_seed, instance, t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub metric: String,
    pub base: f64,
    pub amplitude: f64,
    pub period_ticks: u64,
    pub noise_seed: u64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Seconds of simulated time per tick.
    #[serde(default = "default_tick_seconds")]
    pub tick_seconds: f64,
}

fn default_noise() -> f64 {
    0.05
}

fn default_tick_seconds() -> f64 {
    5.0
}

impl WorkloadProfile {
    pub fn constant(metric: impl Into<String>, value: f64) -> Self {
        WorkloadProfile {
            metric: metric.into(),
            base: value,
            amplitude: 0.0,
            period_ticks: 1,
            noise_seed: 0,
            noise: 0.0,
            tick_seconds: default_tick_seconds(),
        }
    }

    pub fn value(&self, instance: &str, tick: u64) -> f64 {
        let phase = if self.period_ticks == 0 {
            0.0
        } else {
            (2.0 * PI * tick as f64 / self.period_ticks as f64).sin()
        };
        let noise = if self.noise == 0.0 {
            0.0
        } else {
            let mut rng = ChaCha8Rng::from_seed(noise_seed(self.noise_seed, instance, tick));
            rng.gen_range(-1.0..=1.0) * self.noise
        };
        (self.base + self.amplitude * phase + noise).clamp(0.0, 1.0)
    }

    pub fn timestamp(&self, tick: u64) -> f64 {
        tick as f64 * self.tick_seconds
    }
}

fn noise_seed(seed: u64, instance: &str, tick: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(instance.as_bytes());
    h.update(tick.to_le_bytes());
    h.finalize().into()
}

/// Which profile drives which function instance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    /// Applies to instances without an entry in `per_instance`.
    #[serde(default)]
    pub default: Option<WorkloadProfile>,
    #[serde(default)]
    pub per_instance: BTreeMap<String, WorkloadProfile>,
}

impl Workload {
    pub fn uniform(p: WorkloadProfile) -> Self {
        Workload { default: Some(p), per_instance: BTreeMap::new() }
    }

    pub fn profile_for(&self, instance: &str) -> Option<&WorkloadProfile> {
        self.per_instance.get(instance).or(self.default.as_ref())
    }
}

/// One emitted sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    /// Function instance the sample belongs to.
    pub instance_id: String,
    /// Service instance owning that function instance.
    pub owner: String,
    pub metric: String,
    pub timestamp: f64,
    pub value: f64,
}
