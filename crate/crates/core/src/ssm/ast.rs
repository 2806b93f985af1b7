// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use super::Pos;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AddOp {
    Add,
    Sub,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MulOp {
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

/// An attribute reference, optionally indexed: `cpu_free`, `latency_ms[pop-b]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttrRef {
    pub name: String,
    pub index: Option<String>,
}

impl fmt::Display for AttrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.index {
            Some(k) => write!(f, "{}[{k}]", self.name),
            None => f.write_str(&self.name),
        }
    }
}

/// Expression node. Equality compares structure only; positions are ignored.
#[derive(Clone, Debug)]
pub struct Expr {
    pub kind: ExprKind,
    pub pos: Pos,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprKind {
    Num(f64),
    Attr(AttrRef),
    Avg { metric: AttrRef, window_s: u64 },
    Max(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    /// `first (+|-) e1 (+|-) e2 ...`, left to right.
    Sum { first: Box<Expr>, rest: Vec<(AddOp, Expr)> },
    /// `first (*|/) e1 (*|/) e2 ...`, left to right.
    Product { first: Box<Expr>, rest: Vec<(MulOp, Expr)> },
    Cmp { op: CmpOp, lhs: Box<Expr>, rhs: Box<Expr> },
    If { cond: Box<Expr>, then: Box<Expr>, otherwise: Box<Expr> },
}

impl Expr {
    pub fn new(kind: ExprKind, pos: Pos) -> Self {
        Expr { kind, pos }
    }

    /// Self-delimiting nodes print without parentheses.
    fn is_atomic(&self) -> bool {
        matches!(
            self.kind,
            ExprKind::Num(_) | ExprKind::Attr(_) | ExprKind::Avg { .. } | ExprKind::Max(..) | ExprKind::Min(..)
        )
    }

    /// Number of nodes, each chain link counting once.
    pub fn node_count(&self) -> usize {
        1 + match &self.kind {
            ExprKind::Num(_) | ExprKind::Attr(_) | ExprKind::Avg { .. } => 0,
            ExprKind::Max(a, b) | ExprKind::Min(a, b) => a.node_count() + b.node_count(),
            ExprKind::Cmp { lhs, rhs, .. } => lhs.node_count() + rhs.node_count(),
            ExprKind::Neg(e) => e.node_count(),
            ExprKind::Sum { first, rest } => first.node_count() + rest.iter().map(|(_, e)| e.node_count()).sum::<usize>(),
            ExprKind::Product { first, rest } => {
                first.node_count() + rest.iter().map(|(_, e)| e.node_count()).sum::<usize>()
            }
            ExprKind::If { cond, then, otherwise } => cond.node_count() + then.node_count() + otherwise.node_count(),
        }
    }

    /// Visit every attribute and metric reference.
    pub fn visit_refs<'a>(&'a self, f: &mut dyn FnMut(&'a AttrRef, bool, Pos)) {
        match &self.kind {
            ExprKind::Num(_) => {}
            ExprKind::Attr(a) => f(a, false, self.pos),
            ExprKind::Avg { metric, .. } => f(metric, true, self.pos),
            ExprKind::Max(a, b) | ExprKind::Min(a, b) | ExprKind::Cmp { lhs: a, rhs: b, .. } => {
                a.visit_refs(f);
                b.visit_refs(f);
            }
            ExprKind::Neg(e) => e.visit_refs(f),
            ExprKind::Sum { first, rest } => {
                first.visit_refs(f);
                rest.iter().for_each(|(_, e)| e.visit_refs(f));
            }
            ExprKind::Product { first, rest } => {
                first.visit_refs(f);
                rest.iter().for_each(|(_, e)| e.visit_refs(f));
            }
            ExprKind::If { cond, then, otherwise } => {
                cond.visit_refs(f);
                then.visit_refs(f);
                otherwise.visit_refs(f);
            }
        }
    }
}

struct Child<'a>(&'a Expr);

impl fmt::Display for Child<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_atomic() {
            write!(f, "{}", self.0)
        } else {
            write!(f, "({})", self.0)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Num(v) => write!(f, "{v}"),
            ExprKind::Attr(a) => write!(f, "{a}"),
            ExprKind::Avg { metric, window_s } => write!(f, "avg({metric}, {window_s})"),
            ExprKind::Max(a, b) => write!(f, "max({a}, {b})"),
            ExprKind::Min(a, b) => write!(f, "min({a}, {b})"),
            ExprKind::Neg(e) => write!(f, "-{}", Child(e)),
            ExprKind::Sum { first, rest } => {
                write!(f, "{}", Child(first))?;
                for (op, e) in rest {
                    let op = if *op == AddOp::Add { "+" } else { "-" };
                    write!(f, " {op} {}", Child(e))?;
                }
                Ok(())
            }
            ExprKind::Product { first, rest } => {
                write!(f, "{}", Child(first))?;
                for (op, e) in rest {
                    let op = if *op == MulOp::Mul { "*" } else { "/" };
                    write!(f, " {op} {}", Child(e))?;
                }
                Ok(())
            }
            ExprKind::Cmp { op, lhs, rhs } => {
                let op = match op {
                    CmpOp::Lt => "<",
                    CmpOp::Le => "<=",
                    CmpOp::Gt => ">",
                    CmpOp::Ge => ">=",
                };
                write!(f, "{} {op} {}", Child(lhs), Child(rhs))
            }
            ExprKind::If { cond, then, otherwise } => {
                write!(f, "if {} then {} else {}", Child(cond), Child(then), Child(otherwise))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Add(u64),
    Sub(u64),
    Set(Expr),
    Noop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Add(n) => write!(f, "replicas + {n}"),
            Action::Sub(n) => write!(f, "replicas - {n}"),
            Action::Set(e) => write!(f, "replicas = {e}"),
            Action::Noop => f.write_str("noop"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Rule {
    pub when: Expr,
    pub action: Action,
    pub pos: Pos,
}

impl PartialEq for Rule {
    fn eq(&self, other: &Self) -> bool {
        self.when == other.when && self.action == other.action
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProgramAst {
    Placement { score: Expr },
    Scaling { rules: Vec<Rule> },
}

impl ProgramAst {
    pub fn node_count(&self) -> usize {
        match self {
            ProgramAst::Placement { score } => 1 + score.node_count(),
            ProgramAst::Scaling { rules } => rules
                .iter()
                .map(|r| {
                    let action = match &r.action {
                        Action::Set(e) => e.node_count(),
                        _ => 0,
                    };
                    1 + r.when.node_count() + action
                })
                .sum(),
        }
    }
}

impl fmt::Display for ProgramAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProgramAst::Placement { score } => writeln!(f, "score = {score}"),
            ProgramAst::Scaling { rules } => {
                for r in rules {
                    writeln!(f, "when {} then {}", r.when, r.action)?;
                }
                Ok(())
            }
        }
    }
}
