// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::broker::Pattern;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Allow,
    Deny,
}

/// Which plugins a rule applies to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    #[default]
    Any,
    /// Only plugins started by the platform itself.
    Core,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub pattern: Pattern,
    pub effect: Effect,
    #[serde(default)]
    pub scope: Scope,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Grant,
    /// Blacklisted by the rule at this index.
    Deny(usize),
    /// No rule applies; the pattern is not granted.
    NoMatch,
}

/// Operator policy: an ordered rule list, first applicable rule wins.
///
/// An allow rule applies to a requested pattern when it covers it; a deny
/// rule applies when it overlaps it, so a request that could reach any
/// blacklisted topic is refused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyTable {
    pub rules: Vec<PolicyRule>,
}

impl Default for PolicyTable {
    fn default() -> Self {
        let rule = |p: &str, effect, scope| PolicyRule { pattern: p.parse().expect("valid pattern"), effect, scope };
        PolicyTable {
            rules: vec![
                rule("#", Effect::Allow, Scope::Core),
                rule(super::HEARTBEAT_TOPIC, Effect::Allow, Scope::Any),
                rule("platform.management.#", Effect::Deny, Scope::Any),
                rule("service.#", Effect::Allow, Scope::Any),
                rule("function.#", Effect::Allow, Scope::Any),
                rule("infrastructure.#", Effect::Allow, Scope::Any),
            ],
        }
    }
}

impl PolicyTable {
    pub fn from_yaml(text: &str) -> Result<Self, serde_yaml::Error> {
        serde_yaml::from_str(text)
    }

    pub fn decide(&self, requested: &Pattern, core: bool) -> Decision {
        for (i, r) in self.rules.iter().enumerate() {
            if r.scope == Scope::Core && !core {
                continue;
            }
            match r.effect {
                Effect::Allow if r.pattern.covers(requested) => return Decision::Grant,
                Effect::Deny if r.pattern.overlaps(requested) => return Decision::Deny(i),
                _ => {}
            }
        }
        Decision::NoMatch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Pattern {
        s.parse().unwrap()
    }

    #[test]
    fn default_table() {
        let t = PolicyTable::default();
        assert_eq!(t.decide(&p("service.#"), false), Decision::Grant);
        assert_eq!(t.decide(&p("platform.management.#"), false), Decision::Deny(2));
        assert_eq!(t.decide(&p("platform.#"), false), Decision::Deny(2));
        assert_eq!(t.decide(&p("#"), false), Decision::Deny(2));
        assert_eq!(t.decide(&p("platform.slice.admit"), false), Decision::NoMatch);
        assert_eq!(t.decide(&p("platform.management.#"), true), Decision::Grant);
        assert_eq!(t.decide(&p("platform.management.plugin.heartbeat"), false), Decision::Grant);
    }

    #[test]
    fn yaml_round_trip() {
        let t = PolicyTable::from_yaml("- { pattern: 'service.#', effect: deny }\n- { pattern: '#', effect: allow, scope: core }\n")
            .unwrap();
        assert_eq!(t.rules[0].scope, Scope::Any);
        assert_eq!(t.decide(&p("service.x"), true), Decision::Deny(0));
        let again = PolicyTable::from_yaml(&serde_yaml::to_string(&t).unwrap()).unwrap();
        assert_eq!(again, t);
    }
}
