// SPDX-License-Identifier: Apache-2.0

use std::time::{Duration, Instant};

use super::ast::*;
use super::env::Env;
use super::{Pos, SsmError, Type};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Value {
    Num(f64),
    Bool(bool),
}

/// Static type of an expression.
pub(crate) fn type_of(e: &Expr) -> Result<Type, SsmError> {
    let num = |e: &Expr| -> Result<(), SsmError> {
        match type_of(e)? {
            Type::Number => Ok(()),
            found => Err(SsmError::TypeMismatch { at: e.pos, expected: Type::Number.to_string(), found: found.to_string() }),
        }
    };
    match &e.kind {
        ExprKind::Num(_) | ExprKind::Attr(_) | ExprKind::Avg { .. } => Ok(Type::Number),
        ExprKind::Max(a, b) | ExprKind::Min(a, b) => {
            num(a)?;
            num(b)?;
            Ok(Type::Number)
        }
        ExprKind::Neg(x) => {
            num(x)?;
            Ok(Type::Number)
        }
        ExprKind::Sum { first, rest } => {
            num(first)?;
            rest.iter().try_for_each(|(_, e)| num(e))?;
            Ok(Type::Number)
        }
        ExprKind::Product { first, rest } => {
            num(first)?;
            rest.iter().try_for_each(|(_, e)| num(e))?;
            Ok(Type::Number)
        }
        ExprKind::Cmp { lhs, rhs, .. } => {
            num(lhs)?;
            num(rhs)?;
            Ok(Type::Bool)
        }
        ExprKind::If { cond, then, otherwise } => {
            expect_type(cond, Type::Bool)?;
            let t = type_of(then)?;
            expect_type(otherwise, t)?;
            Ok(t)
        }
    }
}

pub(crate) fn expect_type(e: &Expr, want: Type) -> Result<(), SsmError> {
    let got = type_of(e)?;
    if got == want {
        Ok(())
    } else {
        Err(SsmError::TypeMismatch { at: e.pos, expected: want.to_string(), found: got.to_string() })
    }
}

/// Step- and time-limited tree walker.
pub(crate) struct Evaluator<'a> {
    env: &'a dyn Env,
    steps: usize,
    budget: usize,
    deadline: Option<(Instant, Duration)>,
}

impl<'a> Evaluator<'a> {
    pub fn new(env: &'a dyn Env, budget: usize, deadline: Option<(Instant, Duration)>) -> Self {
        Evaluator { env, steps: 0, budget, deadline }
    }

    fn tick(&mut self, at: Pos) -> Result<(), SsmError> {
        self.steps += 1;
        if self.steps > self.budget {
            return Err(SsmError::BudgetExceeded { at, reason: format!("more than {} evaluation steps", self.budget) });
        }
        if let Some((start, limit)) = self.deadline {
            if self.steps % 256 == 0 && start.elapsed() > limit {
                return Err(SsmError::BudgetExceeded { at, reason: format!("more than {} ms", limit.as_millis()) });
            }
        }
        Ok(())
    }

    pub fn num(&mut self, e: &Expr) -> Result<f64, SsmError> {
        match self.eval(e)? {
            Value::Num(v) => Ok(v),
            Value::Bool(_) => Err(SsmError::TypeMismatch { at: e.pos, expected: "number".into(), found: "bool".into() }),
        }
    }

    pub fn bool(&mut self, e: &Expr) -> Result<bool, SsmError> {
        match self.eval(e)? {
            Value::Bool(b) => Ok(b),
            Value::Num(_) => Err(SsmError::TypeMismatch { at: e.pos, expected: "bool".into(), found: "number".into() }),
        }
    }

    fn finite(v: f64, at: Pos) -> Result<Value, SsmError> {
        if v.is_finite() {
            Ok(Value::Num(v))
        } else {
            Err(SsmError::TypeMismatch { at, expected: "finite number".into(), found: format!("{v}") })
        }
    }

    pub fn eval(&mut self, e: &Expr) -> Result<Value, SsmError> {
        self.tick(e.pos)?;
        match &e.kind {
            ExprKind::Num(v) => Self::finite(*v, e.pos),
            ExprKind::Attr(a) => Self::finite(self.env.attr(a, e.pos)?, e.pos),
            ExprKind::Avg { metric, window_s } => Self::finite(self.env.avg(metric, *window_s, e.pos)?, e.pos),
            ExprKind::Max(a, b) => {
                let (x, y) = (self.num(a)?, self.num(b)?);
                Ok(Value::Num(x.max(y)))
            }
            ExprKind::Min(a, b) => {
                let (x, y) = (self.num(a)?, self.num(b)?);
                Ok(Value::Num(x.min(y)))
            }
            ExprKind::Neg(x) => Ok(Value::Num(-self.num(x)?)),
            ExprKind::Sum { first, rest } => {
                let mut acc = self.num(first)?;
                for (op, x) in rest {
                    let v = self.num(x)?;
                    acc = match op {
                        AddOp::Add => acc + v,
                        AddOp::Sub => acc - v,
                    };
                    Self::finite(acc, x.pos)?;
                }
                Ok(Value::Num(acc))
            }
            ExprKind::Product { first, rest } => {
                let mut acc = self.num(first)?;
                for (op, x) in rest {
                    let v = self.num(x)?;
                    acc = match op {
                        MulOp::Mul => acc * v,
                        MulOp::Div => acc / v,
                    };
                    Self::finite(acc, x.pos)?;
                }
                Ok(Value::Num(acc))
            }
            ExprKind::Cmp { op, lhs, rhs } => {
                let (a, b) = (self.num(lhs)?, self.num(rhs)?);
                Ok(Value::Bool(op.apply(a, b)))
            }
            ExprKind::If { cond, then, otherwise } => {
                if self.bool(cond)? {
                    self.eval(then)
                } else {
                    self.eval(otherwise)
                }
            }
        }
    }
}
