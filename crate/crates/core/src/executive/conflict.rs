// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

/// Priority of a decision source; lower wins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tier {
    ServiceSsm,
    FunctionFsm,
    Default,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal<D> {
    pub tier: Tier,
    /// Onboarding sequence of the program; ties within a tier go to the
    /// earliest. DEFAULT uses 0.
    pub onboarded: u64,
    pub decision: D,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("no proposed decision is feasible")]
pub struct NoFeasibleDecision;

/// Pick the highest-priority proposal that passes `feasible`, falling
/// through to the next one otherwise. Order of `proposals` does not matter.
pub fn resolve_conflict<D>(
    proposals: &[Proposal<D>],
    mut feasible: impl FnMut(&D) -> bool,
) -> Result<&Proposal<D>, NoFeasibleDecision> {
    let mut order: Vec<&Proposal<D>> = proposals.iter().collect();
    order.sort_by_key(|p| (p.tier, p.onboarded));
    order.into_iter().find(|p| feasible(&p.decision)).ok_or(NoFeasibleDecision)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(tier: Tier, onboarded: u64, d: &'static str) -> Proposal<&'static str> {
        Proposal { tier, onboarded, decision: d }
    }

    #[test]
    fn priority_and_fallthrough() {
        let only = [p(Tier::Default, 0, "pop-a")];
        assert_eq!(resolve_conflict(&only, |_| true).unwrap().decision, "pop-a");
        let both = [p(Tier::Default, 0, "pop-a"), p(Tier::ServiceSsm, 3, "pop-b")];
        assert_eq!(resolve_conflict(&both, |_| true).unwrap().decision, "pop-b");
        assert_eq!(resolve_conflict(&both, |d| *d != "pop-b").unwrap().decision, "pop-a");
        let same_tier = [p(Tier::FunctionFsm, 9, "late"), p(Tier::FunctionFsm, 2, "early")];
        assert_eq!(resolve_conflict(&same_tier, |_| true).unwrap().decision, "early");
        assert_eq!(resolve_conflict(&both, |_| false), Err(NoFeasibleDecision));
    }
}
