// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use super::{Pos, SsmError};

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    /// Numeric literal; `int` is set when the text has no fractional part.
    Num { value: f64, int: Option<u64> },
    Ident(String),
    /// `[key]`, lexed as one token so keys may contain `-` and `.`.
    Index(String),
    Eq,
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num { value, .. } => write!(f, "number `{value}`"),
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Index(k) => write!(f, "`[{k}]`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Lt => f.write_str("`<`"),
            Tok::Le => f.write_str("`<=`"),
            Tok::Gt => f.write_str("`>`"),
            Tok::Ge => f.write_str("`>=`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

fn is_key_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')
}

pub(crate) fn lex(src: &str) -> Result<Vec<Token>, SsmError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let err = |pos: Pos, expected: &[&str], found: String| SsmError::Parse {
        at: pos,
        expected: expected.iter().map(|s| s.to_string()).collect(),
        found,
    };
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        let advance = |n: usize, i: &mut usize, col: &mut u32| {
            *i += n;
            *col += n as u32;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(1, &mut i, &mut col),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    advance(1, &mut i, &mut col);
                }
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    advance(1, &mut i, &mut col);
                }
                let mut fractional = false;
                if i < chars.len() && chars[i] == '.' {
                    fractional = true;
                    advance(1, &mut i, &mut col);
                    let digits = i;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        advance(1, &mut i, &mut col);
                    }
                    if digits == i {
                        let at = Pos { line, column: col };
                        let found = chars.get(i).map_or("end of input".to_string(), |c| format!("`{c}`"));
                        return Err(err(at, &["digit"], found));
                    }
                }
                let text: String = chars[start..i].iter().collect();
                if text.starts_with('.') {
                    return Err(err(pos, &["number", "identifier", "`(`"], "`.`".into()));
                }
                let value: f64 = text.parse().expect("digits parse as f64");
                let int = if fractional { None } else { text.parse::<u64>().ok() };
                out.push(Token { tok: Tok::Num { value, int }, pos });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    advance(1, &mut i, &mut col);
                }
                out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), pos });
            }
            '[' => {
                advance(1, &mut i, &mut col);
                let start = i;
                while i < chars.len() && is_key_char(chars[i]) {
                    advance(1, &mut i, &mut col);
                }
                let key: String = chars[start..i].iter().collect();
                let here = Pos { line, column: col };
                let found = chars.get(i).map_or("end of input".to_string(), |c| format!("`{c}`"));
                if key.is_empty() {
                    return Err(err(here, &["index key"], found));
                }
                if chars.get(i) != Some(&']') {
                    return Err(err(here, &["`]`"], found));
                }
                advance(1, &mut i, &mut col);
                out.push(Token { tok: Tok::Index(key), pos });
            }
            '<' | '>' => {
                let eq = chars.get(i + 1) == Some(&'=');
                let tok = match (c, eq) {
                    ('<', false) => Tok::Lt,
                    ('<', true) => Tok::Le,
                    ('>', false) => Tok::Gt,
                    _ => Tok::Ge,
                };
                advance(if eq { 2 } else { 1 }, &mut i, &mut col);
                out.push(Token { tok, pos });
            }
            _ => {
                let tok = match c {
                    '=' => Tok::Eq,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    other => return Err(err(pos, &["token"], format!("`{other}`"))),
                };
                advance(1, &mut i, &mut col);
                out.push(Token { tok, pos });
            }
        }
    }
    out.push(Token { tok: Tok::Eof, pos: Pos { line, column: col } });
    Ok(out)
}
