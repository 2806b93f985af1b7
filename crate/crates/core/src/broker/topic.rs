// SPDX-License-Identifier: Apache-2.0

//! Hierarchical topics and wildcard subscription patterns.
//!
//! Topics are dot-separated segments drawn from `[a-z0-9_-]+`. A pattern
//! segment is either a literal, `*` (exactly one segment) or `#` (any
//! suffix, including the empty one). `#` may only appear last.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::BrokerError;

pub const SEPARATOR: char = '.';

fn valid_segment(s: &str) -> bool {
    !s.is_empty()
        && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

/// Turn an arbitrary string into a valid topic segment.
pub fn sanitize_segment(s: &str) -> String {
    let out: String = s
        .chars()
        .map(|c| {
            let c = c.to_ascii_lowercase();
            if c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect();
    if out.is_empty() {
        "-".to_string()
    } else {
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topic {
    segments: Vec<String>,
}

impl Topic {
    pub fn from_segments<I, S>(segments: I) -> Result<Self, BrokerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.is_empty() || !segments.iter().all(|s| valid_segment(s)) {
            return Err(BrokerError::InvalidTopic(segments.join(".")));
        }
        Ok(Topic { segments })
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Append segments, e.g. `service.placement` + `request`.
    pub fn join(&self, tail: &str) -> Result<Topic, BrokerError> {
        format!("{self}.{tail}").parse()
    }

    /// Reply topic used for request/reply: a trailing `request` segment is
    /// replaced with `response`, otherwise `reply` is appended.
    pub fn reply_topic(&self) -> Topic {
        let mut segments = self.segments.clone();
        if segments.last().map(String::as_str) == Some("request") {
            *segments.last_mut().unwrap() = "response".to_string();
        } else {
            segments.push("reply".to_string());
        }
        Topic { segments }
    }
}

impl FromStr for Topic {
    type Err = BrokerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let segments: Vec<&str> = s.split(SEPARATOR).collect();
        if segments.iter().any(|seg| !valid_segment(seg)) {
            return Err(BrokerError::InvalidTopic(s.to_string()));
        }
        Ok(Topic { segments: segments.into_iter().map(String::from).collect() })
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.segments.join("."))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Segment {
    Literal(String),
    /// `*`
    One,
    /// `#`
    Rest,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pattern {
    segments: Vec<Segment>,
}

impl Pattern {
    pub fn new(segments: Vec<Segment>) -> Result<Self, BrokerError> {
        let render = || Pattern { segments: segments.clone() }.to_string();
        if segments.is_empty() {
            return Err(BrokerError::InvalidPattern(String::new()));
        }
        for (i, seg) in segments.iter().enumerate() {
            match seg {
                Segment::Literal(s) if !valid_segment(s) => {
                    return Err(BrokerError::InvalidPattern(render()))
                }
                Segment::Rest if i + 1 != segments.len() => {
                    return Err(BrokerError::InvalidPattern(render()))
                }
                _ => {}
            }
        }
        Ok(Pattern { segments })
    }

    /// The exact-match pattern for a topic.
    pub fn exact(topic: &Topic) -> Pattern {
        Pattern { segments: topic.segments.iter().cloned().map(Segment::Literal).collect() }
    }

    /// Match everything.
    pub fn any() -> Pattern {
        Pattern { segments: vec![Segment::Rest] }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// True if the pattern contains no wildcard.
    pub fn is_exact(&self) -> bool {
        self.segments.iter().all(|s| matches!(s, Segment::Literal(_)))
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        topic_matches(self, topic)
    }

    /// Leading literal segments, used by reroute rules.
    pub fn literal_prefix_len(&self) -> usize {
        self.segments.iter().take_while(|s| matches!(s, Segment::Literal(_))).count()
    }

    /// True iff every topic matched by `other` is matched by `self`.
    pub fn covers(&self, other: &Pattern) -> bool {
        covers(&self.segments, &other.segments)
    }

    /// True iff some topic is matched by both patterns.
    pub fn overlaps(&self, other: &Pattern) -> bool {
        overlaps(&self.segments, &other.segments)
    }
}

/// Linear-time matcher: `#` is terminal, so no backtracking is needed.
pub fn topic_matches(pattern: &Pattern, topic: &Topic) -> bool {
    let mut t = topic.segments.iter();
    for seg in &pattern.segments {
        match seg {
            Segment::Rest => return true,
            Segment::One => {
                if t.next().is_none() {
                    return false;
                }
            }
            Segment::Literal(lit) => match t.next() {
                Some(s) if s == lit => {}
                _ => return false,
            },
        }
    }
    t.next().is_none()
}

fn covers(a: &[Segment], b: &[Segment]) -> bool {
    match (a.first(), b.first()) {
        (Some(Segment::Rest), _) => true,
        (None, None) => true,
        // `b` matches the empty suffix and longer ones; `a` only one of those.
        (_, Some(Segment::Rest)) => false,
        (None, Some(_)) | (Some(_), None) => false,
        (Some(Segment::One), Some(_)) => covers(&a[1..], &b[1..]),
        (Some(Segment::Literal(x)), Some(Segment::Literal(y))) => x == y && covers(&a[1..], &b[1..]),
        (Some(Segment::Literal(_)), Some(Segment::One)) => false,
    }
}

fn overlaps(a: &[Segment], b: &[Segment]) -> bool {
    match (a.first(), b.first()) {
        (Some(Segment::Rest), _) | (_, Some(Segment::Rest)) => true,
        (None, None) => true,
        (None, Some(_)) | (Some(_), None) => false,
        (Some(Segment::Literal(x)), Some(Segment::Literal(y))) => {
            x == y && overlaps(&a[1..], &b[1..])
        }
        _ => overlaps(&a[1..], &b[1..]),
    }
}

impl FromStr for Pattern {
    type Err = BrokerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let segments = s
            .split(SEPARATOR)
            .map(|seg| match seg {
                "*" => Segment::One,
                "#" => Segment::Rest,
                lit => Segment::Literal(lit.to_string()),
            })
            .collect();
        Pattern::new(segments).map_err(|_| BrokerError::InvalidPattern(s.to_string()))
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self
            .segments
            .iter()
            .map(|s| match s {
                Segment::Literal(l) => l.as_str(),
                Segment::One => "*",
                Segment::Rest => "#",
            })
            .collect();
        f.write_str(&parts.join("."))
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(Topic);
string_serde!(Pattern);
