// SPDX-License-Identifier: Apache-2.0

//! Strategy language for placement and scaling managers.
//!
//! ```text
//! score = -latency_ms + cpu_free / 8
//!
//! when avg(cpu_load, 60) > 0.8 then replicas + 1
//! when avg(cpu_load, 60) < 0.2 then replicas - 1
//! ```
//!
//! Programs are total: no loops, no calls beyond `avg`, `max` and `min`,
//! nesting at most [`MAX_NESTING`] deep and every evaluation capped at
//! [`STEP_BUDGET`] node visits. Comparisons are ordinary boolean
//! expressions, which is what lets `score = cpu_free > 2` parse and then
//! fail the type check.

mod ast;
mod env;
mod eval;
mod lexer;
mod parser;

use std::collections::BTreeSet;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use ast::{Action, AddOp, AttrRef, CmpOp, Expr, ExprKind, MulOp, ProgramAst, Rule};
pub use env::{Candidate, Env, PlacementEnvironment, PopAttributes, ScalingEnvironment, PLACEMENT_ATTRS, SCALING_ATTRS};

use crate::descriptors::ExecutiveKind;
use eval::Evaluator;

pub const MAX_SOURCE_BYTES: usize = 64 * 1024;
pub const MAX_NESTING: usize = 64;
pub const STEP_BUDGET: usize = 10_000;

/// 1-based source position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub line: u32,
    pub column: u32,
}

impl Pos {
    pub const START: Pos = Pos { line: 1, column: 1 };
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Type {
    Number,
    Bool,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Type::Number => "number",
            Type::Bool => "bool",
        })
    }
}

/// Every error carries the source position it refers to.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SsmError {
    #[error("{at}: expected {}, found {found}", .expected.join(" or "))]
    Parse { at: Pos, expected: Vec<String>, found: String },
    #[error("{at}: source is {len} bytes, limit is 65536")]
    SourceTooLarge { at: Pos, len: usize },
    #[error("{at}: nesting deeper than {limit}")]
    TooDeep { at: Pos, limit: usize },
    #[error("{at}: type mismatch, expected {expected}, found {found}")]
    TypeMismatch { at: Pos, expected: String, found: String },
    #[error("{at}: unknown attribute `{name}`")]
    UnknownAttribute { at: Pos, name: String },
    #[error("{at}: unknown metric `{name}`")]
    UnknownMetric { at: Pos, name: String },
    #[error("{at}: no samples for `{name}`")]
    NoData { at: Pos, name: String },
    #[error("{at}: budget exceeded: {reason}")]
    BudgetExceeded { at: Pos, reason: String },
}

impl SsmError {
    pub fn position(&self) -> Pos {
        match self {
            SsmError::Parse { at, .. }
            | SsmError::SourceTooLarge { at, .. }
            | SsmError::TooDeep { at, .. }
            | SsmError::TypeMismatch { at, .. }
            | SsmError::UnknownAttribute { at, .. }
            | SsmError::UnknownMetric { at, .. }
            | SsmError::NoData { at, .. }
            | SsmError::BudgetExceeded { at, .. } => *at,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action", content = "replicas")]
pub enum ScalingDecision {
    NoOp,
    SetReplicas(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalingOutcome {
    pub decision: ScalingDecision,
    /// Index of the rule that fired, if any.
    pub fired: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SsmProgram {
    pub kind: ExecutiveKind,
    pub source: String,
    pub ast: ProgramAst,
    /// Attribute and metric names the program reads.
    pub declared_inputs: BTreeSet<String>,
}

pub fn parse_ssm(source: &str, kind: ExecutiveKind) -> Result<SsmProgram, SsmError> {
    let ast = parser::parse(source, kind)?;
    let mut declared_inputs = BTreeSet::new();
    for_each_expr(&ast, &mut |e| e.visit_refs(&mut |a, _, _| {
        declared_inputs.insert(a.name.clone());
    }));
    Ok(SsmProgram { kind, source: source.to_string(), ast, declared_inputs })
}

fn for_each_expr<'a>(ast: &'a ProgramAst, f: &mut dyn FnMut(&'a Expr)) {
    match ast {
        ProgramAst::Placement { score } => f(score),
        ProgramAst::Scaling { rules } => {
            for r in rules {
                f(&r.when);
                if let Action::Set(e) = &r.action {
                    f(e);
                }
            }
        }
    }
}

impl SsmProgram {
    pub fn node_count(&self) -> usize {
        self.ast.node_count()
    }

    /// Static checks: types, and for placement programs, that every input
    /// is an attribute the placement environment provides.
    pub fn check(&self) -> Result<(), SsmError> {
        match &self.ast {
            ProgramAst::Placement { score } => {
                eval::expect_type(score, Type::Number)?;
                let mut bad = None;
                score.visit_refs(&mut |a, is_metric, at| {
                    if bad.is_none() {
                        if is_metric {
                            bad = Some(SsmError::UnknownMetric { at, name: a.to_string() });
                        } else if !PLACEMENT_ATTRS.contains(&a.name.as_str()) {
                            bad = Some(SsmError::UnknownAttribute { at, name: a.to_string() });
                        }
                    }
                });
                bad.map_or(Ok(()), Err)
            }
            ProgramAst::Scaling { rules } => {
                for r in rules {
                    eval::expect_type(&r.when, Type::Bool)?;
                    if let Action::Set(e) = &r.action {
                        eval::expect_type(e, Type::Number)?;
                    }
                }
                Ok(())
            }
        }
    }

    /// Score one candidate PoP.
    pub fn score(&self, env: &PlacementEnvironment, candidate: usize) -> Result<f64, SsmError> {
        self.score_limited(env, candidate, STEP_BUDGET, None)
    }

    pub(crate) fn score_limited(
        &self,
        env: &PlacementEnvironment,
        candidate: usize,
        budget: usize,
        deadline: Option<(Instant, Duration)>,
    ) -> Result<f64, SsmError> {
        let ProgramAst::Placement { score } = &self.ast else {
            return Err(SsmError::TypeMismatch {
                at: Pos::START,
                expected: "placement program".into(),
                found: "scaling program".into(),
            });
        };
        let c = Candidate { env, pop: candidate };
        Evaluator::new(&c, budget, deadline).num(score)
    }

    /// Run the rules top to bottom; the first that fires decides. A rule
    /// whose inputs have no samples does not fire.
    pub fn decide(&self, env: &ScalingEnvironment) -> Result<ScalingOutcome, SsmError> {
        self.decide_limited(env, STEP_BUDGET, None)
    }

    pub(crate) fn decide_limited(
        &self,
        env: &ScalingEnvironment,
        budget: usize,
        deadline: Option<(Instant, Duration)>,
    ) -> Result<ScalingOutcome, SsmError> {
        let ProgramAst::Scaling { rules } = &self.ast else {
            return Err(SsmError::TypeMismatch {
                at: Pos::START,
                expected: "scaling program".into(),
                found: "placement program".into(),
            });
        };
        let mut ev = Evaluator::new(env, budget, deadline);
        for (i, rule) in rules.iter().enumerate() {
            let target = match ev.bool(&rule.when) {
                Ok(false) | Err(SsmError::NoData { .. }) => continue,
                Err(e) => return Err(e),
                Ok(true) => match &rule.action {
                    Action::Noop => return Ok(ScalingOutcome { decision: ScalingDecision::NoOp, fired: Some(i) }),
                    Action::Add(n) => (env.replicas as u64).saturating_add(*n),
                    Action::Sub(n) => (env.replicas as u64).saturating_sub(*n),
                    Action::Set(e) => match ev.num(e) {
                        Ok(v) => v.round().max(0.0) as u64,
                        Err(SsmError::NoData { .. }) => continue,
                        Err(e) => return Err(e),
                    },
                },
            };
            let max = env.max_replicas.max(1) as u64;
            let clamped = target.clamp(1, max) as u32;
            let decision = if clamped == env.replicas {
                ScalingDecision::NoOp
            } else {
                ScalingDecision::SetReplicas(clamped)
            };
            return Ok(ScalingOutcome { decision, fired: Some(i) });
        }
        Ok(ScalingOutcome { decision: ScalingDecision::NoOp, fired: None })
    }
}

impl fmt::Display for SsmProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.ast)
    }
}
