// SPDX-License-Identifier: Apache-2.0

use std::sync::OnceLock;

use crate::descriptors::ExecutiveKind;
use crate::ssm::{parse_ssm, ScalingEnvironment, ScalingOutcome, SsmError, SsmProgram};

/// Platform scaling rules used when no manager decides.
pub const DEFAULT_SCALING_SOURCE: &str = "\
when avg(cpu_load, 60) > 0.8 then replicas + 1
when avg(cpu_load, 60) < 0.2 then replicas - 1
";

/// Metric the DEFAULT rules read.
pub const DEFAULT_SCALING_METRIC: &str = "cpu_load";

pub fn default_scaling_program() -> &'static SsmProgram {
    static P: OnceLock<SsmProgram> = OnceLock::new();
    P.get_or_init(|| parse_ssm(DEFAULT_SCALING_SOURCE, ExecutiveKind::Scaling).expect("default rules parse"))
}

#[derive(Clone, Copy, Debug)]
pub enum ScalingStrategy<'a> {
    Default,
    Ssm(&'a SsmProgram),
}

pub fn evaluate_scaling(strategy: ScalingStrategy<'_>, env: &ScalingEnvironment) -> Result<ScalingOutcome, SsmError> {
    match strategy {
        ScalingStrategy::Default => default_scaling_program().decide(env),
        ScalingStrategy::Ssm(p) => p.decide(env),
    }
}
