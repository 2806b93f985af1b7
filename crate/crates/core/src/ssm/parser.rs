// SPDX-License-Identifier: Apache-2.0

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::{Pos, SsmError, MAX_NESTING, MAX_SOURCE_BYTES};
use crate::descriptors::ExecutiveKind;

const RESERVED: [&str; 5] = ["when", "then", "if", "else", "noop"];

const EXPR_START: [&str; 4] = ["number", "identifier", "`(`", "`-`"];

struct Parser {
    toks: Vec<Token>,
    at: usize,
    depth: usize,
}

pub(crate) fn parse(src: &str, kind: ExecutiveKind) -> Result<ProgramAst, SsmError> {
    if src.len() > MAX_SOURCE_BYTES {
        return Err(SsmError::SourceTooLarge { at: Pos::START, len: src.len() });
    }
    let mut p = Parser { toks: lex(src)?, at: 0, depth: 0 };
    let ast = match kind {
        ExecutiveKind::Placement => {
            p.keyword("score")?;
            p.expect(Tok::Eq, "`=`")?;
            ProgramAst::Placement { score: p.expr()? }
        }
        ExecutiveKind::Scaling => {
            let mut rules = vec![p.rule()?];
            while p.is_keyword("when") {
                rules.push(p.rule()?);
            }
            ProgramAst::Scaling { rules }
        }
    };
    if p.peek().tok != Tok::Eof {
        let expected: &[&str] = match kind {
            ExecutiveKind::Placement => &["operator", "end of input"],
            ExecutiveKind::Scaling => &["operator", "`when`", "end of input"],
        };
        return Err(p.unexpected(expected));
    }
    Ok(ast)
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.at]
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.at + 1).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if t.tok != Tok::Eof {
            self.at += 1;
        }
        t
    }

    fn unexpected(&self, expected: &[&str]) -> SsmError {
        let t = self.peek();
        SsmError::Parse {
            at: t.pos,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.tok.to_string(),
        }
    }

    fn expect(&mut self, tok: Tok, shown: &str) -> Result<Token, SsmError> {
        if self.peek().tok == tok {
            Ok(self.bump())
        } else {
            Err(self.unexpected(&[shown]))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn keyword(&mut self, kw: &str) -> Result<Token, SsmError> {
        if self.is_keyword(kw) {
            Ok(self.bump())
        } else {
            Err(self.unexpected(&[&format!("`{kw}`")]))
        }
    }

    fn enter(&mut self) -> Result<(), SsmError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(SsmError::TooDeep { at: self.peek().pos, limit: MAX_NESTING });
        }
        Ok(())
    }

    fn rule(&mut self) -> Result<Rule, SsmError> {
        let pos = self.keyword("when")?.pos;
        let when = self.expr()?;
        self.keyword("then")?;
        let action = if self.is_keyword("noop") {
            self.bump();
            Action::Noop
        } else {
            self.keyword("replicas").map_err(|_| self.unexpected(&["`replicas`", "`noop`"]))?;
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    Action::Add(self.int()?)
                }
                Tok::Minus => {
                    self.bump();
                    Action::Sub(self.int()?)
                }
                Tok::Eq => {
                    self.bump();
                    Action::Set(self.expr()?)
                }
                _ => return Err(self.unexpected(&["`+`", "`-`", "`=`"])),
            }
        };
        Ok(Rule { when, action, pos })
    }

    fn int(&mut self) -> Result<u64, SsmError> {
        match self.peek().tok {
            Tok::Num { int: Some(n), .. } => {
                self.bump();
                Ok(n)
            }
            _ => Err(self.unexpected(&["integer"])),
        }
    }

    fn expr(&mut self) -> Result<Expr, SsmError> {
        self.enter()?;
        let lhs = self.additive()?;
        let op = match self.peek().tok {
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => {
                self.depth -= 1;
                return Ok(lhs);
            }
        };
        self.bump();
        let rhs = self.additive()?;
        self.depth -= 1;
        let pos = lhs.pos;
        Ok(Expr::new(ExprKind::Cmp { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }, pos))
    }

    fn additive(&mut self) -> Result<Expr, SsmError> {
        let first = self.term()?;
        let mut rest = Vec::new();
        loop {
            let op = match self.peek().tok {
                Tok::Plus => AddOp::Add,
                Tok::Minus => AddOp::Sub,
                _ => break,
            };
            self.bump();
            rest.push((op, self.term()?));
        }
        if rest.is_empty() {
            return Ok(first);
        }
        let pos = first.pos;
        Ok(Expr::new(ExprKind::Sum { first: Box::new(first), rest }, pos))
    }

    fn term(&mut self) -> Result<Expr, SsmError> {
        let first = self.unary()?;
        let mut rest = Vec::new();
        loop {
            let op = match self.peek().tok {
                Tok::Star => MulOp::Mul,
                Tok::Slash => MulOp::Div,
                _ => break,
            };
            self.bump();
            rest.push((op, self.unary()?));
        }
        if rest.is_empty() {
            return Ok(first);
        }
        let pos = first.pos;
        Ok(Expr::new(ExprKind::Product { first: Box::new(first), rest }, pos))
    }

    fn unary(&mut self) -> Result<Expr, SsmError> {
        if self.peek().tok != Tok::Minus {
            return self.primary();
        }
        let pos = self.bump().pos;
        self.enter()?;
        let inner = self.unary()?;
        self.depth -= 1;
        Ok(Expr::new(ExprKind::Neg(Box::new(inner)), pos))
    }

    fn attr_ref(&mut self) -> Result<(AttrRef, Pos), SsmError> {
        let t = self.peek().clone();
        let Tok::Ident(name) = t.tok else {
            return Err(self.unexpected(&["identifier"]));
        };
        if RESERVED.contains(&name.as_str()) {
            return Err(self.unexpected(&["identifier"]));
        }
        self.bump();
        let index = match &self.peek().tok {
            Tok::Index(k) => {
                let k = k.clone();
                self.bump();
                Some(k)
            }
            _ => None,
        };
        Ok((AttrRef { name, index }, t.pos))
    }

    fn primary(&mut self) -> Result<Expr, SsmError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Num { value, .. } => {
                self.bump();
                Ok(Expr::new(ExprKind::Num(*value), t.pos))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`").map_err(|_| self.unexpected(&["operator", "`)`"]))?;
                Ok(e)
            }
            Tok::Ident(s) if s == "if" => {
                self.bump();
                self.enter()?;
                let cond = self.expr()?;
                self.keyword("then")?;
                let then = self.expr()?;
                self.keyword("else")?;
                let otherwise = self.expr()?;
                self.depth -= 1;
                Ok(Expr::new(
                    ExprKind::If { cond: Box::new(cond), then: Box::new(then), otherwise: Box::new(otherwise) },
                    t.pos,
                ))
            }
            Tok::Ident(s) if matches!(s.as_str(), "avg" | "max" | "min") && *self.peek2() == Tok::LParen => {
                let name = s.clone();
                self.bump();
                self.bump();
                let kind = if name == "avg" {
                    let (metric, _) = self.attr_ref()?;
                    self.expect(Tok::Comma, "`,`")?;
                    let window_s = self.int()?;
                    if window_s == 0 {
                        return Err(SsmError::Parse {
                            at: self.toks[self.at - 1].pos,
                            expected: vec!["positive integer".into()],
                            found: "`0`".into(),
                        });
                    }
                    ExprKind::Avg { metric, window_s }
                } else {
                    self.enter()?;
                    let a = self.expr()?;
                    self.expect(Tok::Comma, "`,`").map_err(|_| self.unexpected(&["operator", "`,`"]))?;
                    let b = self.expr()?;
                    self.depth -= 1;
                    if name == "max" {
                        ExprKind::Max(Box::new(a), Box::new(b))
                    } else {
                        ExprKind::Min(Box::new(a), Box::new(b))
                    }
                };
                self.expect(Tok::RParen, "`)`").map_err(|_| self.unexpected(&["operator", "`)`"]))?;
                Ok(Expr::new(kind, t.pos))
            }
            Tok::Ident(_) => {
                let (a, pos) = self.attr_ref()?;
                Ok(Expr::new(ExprKind::Attr(a), pos))
            }
            _ => Err(self.unexpected(&EXPR_START)),
        }
    }
}
