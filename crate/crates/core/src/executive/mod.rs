// SPDX-License-Identifier: Apache-2.0

//! Placement and scaling executives and the manager programs they host.
//!
//! Programs are onboarded once per package upload and then run in a
//! sandbox: a broker client limited to the program's own namespace
//! (`service.<kind>.ssm.<service>` or `function.<kind>.ssm.<service>.<function>`).
//! Decisions from service managers, function managers and the platform
//! defaults are arbitrated by [`resolve_conflict`].

mod conflict;
mod onboard;
mod placement;
mod plugins;
mod sandbox;
mod scaling;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use conflict::{resolve_conflict, NoFeasibleDecision, Proposal, Tier};
pub use onboard::{onboard_source, onboard_ssm, service_namespace_pattern, OnboardError, SsmHandle, SsmRegistry, PROBE_DEADLINE};
pub use placement::{
    evaluate_placement, filter_topology, pick_pop, PlacementError, PlacementStrategy, TopologyView, ViewPolicy, ViewPop,
};
pub use plugins::{
    EvaluateRequest, PlacementExecutive, PlacementItem, PlacementReply, PlacementRequest, ScalingExecutive, ScalingVerdict,
    TOPIC_SCALING_EVALUATE,
};
pub use sandbox::{call_sandbox, sandbox_client, Sandbox, SandboxAnswer, SandboxCall, SsmRuntime};
pub use scaling::{default_scaling_program, evaluate_scaling, ScalingStrategy, DEFAULT_SCALING_METRIC, DEFAULT_SCALING_SOURCE};

/// Failure rates for injected faults, each in [0, 1].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub placement_rate: f64,
    #[serde(default)]
    pub deploy_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultPoint {
    Placement,
    Deploy,
}

/// Seeded fault source shared by the placement executive and the function
/// lifecycle manager. Draws are serialized, so a fixed seed and a fixed
/// call order give a fixed fault sequence.
#[derive(Debug)]
pub struct FaultInjector {
    config: FaultConfig,
    rng: Mutex<ChaCha8Rng>,
}

impl FaultInjector {
    pub fn new(config: FaultConfig) -> Self {
        FaultInjector { config, rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)) }
    }

    pub fn disabled() -> Self {
        Self::new(FaultConfig::default())
    }

    pub fn should_fail(&self, at: FaultPoint) -> bool {
        let rate = match at {
            FaultPoint::Placement => self.config.placement_rate,
            FaultPoint::Deploy => self.config.deploy_rate,
        };
        if rate <= 0.0 {
            return false;
        }
        self.rng.lock().gen::<f64>() < rate
    }
}
