// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::infra::InfraSnapshot;
use crate::ssm::{PlacementEnvironment, PopAttributes, SsmError, SsmProgram};
use crate::Resources;

/// One PoP as a strategy sees it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPop {
    pub id: String,
    pub free: Resources,
    #[serde(default)]
    pub latency_ms: BTreeMap<String, f64>,
}

/// The PoPs a strategy may choose from. Sorted by id, ids unique.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TopologyView {
    pub pops: Vec<ViewPop>,
}

impl TopologyView {
    pub fn new(mut pops: Vec<ViewPop>) -> Self {
        pops.sort_by(|a, b| a.id.cmp(&b.id));
        pops.dedup_by(|a, b| a.id == b.id);
        TopologyView { pops }
    }

    pub fn from_snapshot(snapshot: &InfraSnapshot) -> Self {
        TopologyView::new(
            snapshot
                .pops
                .values()
                .map(|p| ViewPop { id: p.id.clone(), free: p.free(), latency_ms: p.latency_ms.clone() })
                .collect(),
        )
    }

    pub fn is_empty(&self) -> bool {
        self.pops.is_empty()
    }

    pub fn pop(&self, id: &str) -> Option<&ViewPop> {
        self.pops.iter().find(|p| p.id == id)
    }

    fn deduct(&mut self, id: &str, r: &Resources) {
        if let Some(p) = self.pops.iter_mut().find(|p| p.id == id) {
            p.free = p.free.saturating_sub(r);
        }
    }

    pub fn environment(&self, request: Resources) -> PlacementEnvironment {
        PlacementEnvironment {
            pops: self
                .pops
                .iter()
                .map(|p| PopAttributes {
                    id: p.id.clone(),
                    cpu_free: p.free.cpu_cores as f64,
                    mem_free: p.free.memory_mb as f64,
                    storage_free: p.free.storage_gb as f64,
                    latency_ms: p.latency_ms.clone(),
                })
                .collect(),
            request,
        }
    }
}

/// What a strategy may see of the topology.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewPolicy {
    /// PoPs visible to the strategy; `None` shows all.
    #[serde(default)]
    pub allow: Option<BTreeSet<String>>,
    /// Free capacity is reported rounded down to a multiple of this.
    #[serde(default = "unit_step")]
    pub step: Resources,
}

fn unit_step() -> Resources {
    Resources::new(1, 1, 1)
}

impl Default for ViewPolicy {
    fn default() -> Self {
        ViewPolicy { allow: None, step: unit_step() }
    }
}

fn floor_to(v: u64, step: u64) -> u64 {
    let step = step.max(1);
    v / step * step
}

/// Restrict and coarsen a view. The result never reports more free
/// capacity than the input, so placements on it stay feasible on the input.
pub fn filter_topology(topology: &TopologyView, policy: &ViewPolicy) -> TopologyView {
    TopologyView {
        pops: topology
            .pops
            .iter()
            .filter(|p| policy.allow.as_ref().map_or(true, |a| a.contains(&p.id)))
            .map(|p| ViewPop {
                id: p.id.clone(),
                free: Resources::new(
                    floor_to(p.free.cpu_cores, policy.step.cpu_cores),
                    floor_to(p.free.memory_mb, policy.step.memory_mb),
                    floor_to(p.free.storage_gb, policy.step.storage_gb),
                ),
                latency_ms: p.latency_ms.clone(),
            })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug)]
pub enum PlacementStrategy<'a> {
    Default,
    Ssm(&'a SsmProgram),
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PlacementError {
    #[error("no PoP can host `{0}`")]
    NoFeasiblePoP(String),
    #[error("the topology view is empty")]
    EmptyView,
    #[error(transparent)]
    Ssm(#[from] SsmError),
}

/// Choose a PoP for one request, or `None` if nothing fits.
///
/// DEFAULT takes the first PoP by id with enough free capacity. An SSM
/// takes the highest-scoring such PoP; ties go to the smallest id.
pub fn pick_pop(
    strategy: PlacementStrategy<'_>,
    request: &Resources,
    view: &TopologyView,
) -> Result<Option<String>, SsmError> {
    let feasible = view.pops.iter().enumerate().filter(|(_, p)| request.fits_within(&p.free));
    match strategy {
        PlacementStrategy::Default => Ok(feasible.map(|(_, p)| p.id.clone()).next()),
        PlacementStrategy::Ssm(program) => {
            let env = view.environment(*request);
            let mut best: Option<(f64, usize)> = None;
            for (i, _) in feasible {
                let s = program.score(&env, i)?;
                // Strict comparison keeps the earlier, smaller id on ties.
                if best.map_or(true, |(b, _)| s > b) {
                    best = Some((s, i));
                }
            }
            Ok(best.map(|(_, i)| view.pops[i].id.clone()))
        }
    }
}

/// Place each `(vnf, request)` in order, deducting earlier choices from
/// the view before the next one.
pub fn evaluate_placement(
    strategy: PlacementStrategy<'_>,
    requests: &[(String, Resources)],
    view: &TopologyView,
) -> Result<BTreeMap<String, String>, PlacementError> {
    if view.is_empty() {
        return Err(PlacementError::EmptyView);
    }
    let mut view = view.clone();
    let mut out = BTreeMap::new();
    for (vnf, r) in requests {
        let pop = pick_pop(strategy, r, &view)?.ok_or_else(|| PlacementError::NoFeasiblePoP(vnf.clone()))?;
        view.deduct(&pop, r);
        out.insert(vnf.clone(), pop);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::ExecutiveKind;
    use crate::ssm::parse_ssm;

    fn pop(id: &str, cpu: u64, user_latency: f64) -> ViewPop {
        ViewPop {
            id: id.into(),
            free: Resources::new(cpu, cpu * 1024, 10),
            latency_ms: [("user".to_string(), user_latency)].into(),
        }
    }

    #[test]
    fn default_forced_choice() {
        let view = TopologyView::new(vec![pop("pop-b", 1, 0.0), pop("pop-a", 8, 0.0)]);
        let got = evaluate_placement(PlacementStrategy::Default, &[("fw".into(), Resources::new(4, 100, 0))], &view);
        assert_eq!(got.unwrap()["fw"], "pop-a");
    }

    #[test]
    fn latency_argmax_and_ties() {
        let view = TopologyView::new(vec![pop("pop-a", 8, 10.0), pop("pop-b", 8, 5.0), pop("pop-c", 8, 20.0)]);
        let req = [("fw".to_string(), Resources::new(1, 1, 0))];
        let p = parse_ssm("score = -latency_ms", ExecutiveKind::Placement).unwrap();
        assert_eq!(evaluate_placement(PlacementStrategy::Ssm(&p), &req, &view).unwrap()["fw"], "pop-b");
        let zero = parse_ssm("score = 0", ExecutiveKind::Placement).unwrap();
        assert_eq!(evaluate_placement(PlacementStrategy::Ssm(&zero), &req, &view).unwrap()["fw"], "pop-a");
    }

    #[test]
    fn cumulative_deduction() {
        let view = TopologyView::new(vec![pop("pop-a", 4, 0.0), pop("pop-b", 4, 0.0)]);
        let reqs = [("x".to_string(), Resources::new(3, 1, 0)), ("y".to_string(), Resources::new(3, 1, 0))];
        let got = evaluate_placement(PlacementStrategy::Default, &reqs, &view).unwrap();
        assert_eq!((got["x"].as_str(), got["y"].as_str()), ("pop-a", "pop-b"));
        let three = [reqs[0].clone(), reqs[1].clone(), ("z".to_string(), Resources::new(3, 1, 0))];
        assert_eq!(
            evaluate_placement(PlacementStrategy::Default, &three, &view),
            Err(PlacementError::NoFeasiblePoP("z".into()))
        );
    }

    #[test]
    fn filter_examples() {
        let view = TopologyView::new(vec![pop("pop-a", 7, 0.0), pop("pop-b", 8, 0.0)]);
        assert_eq!(filter_topology(&view, &ViewPolicy::default()), view);
        let only_a = ViewPolicy { allow: Some(["pop-a".to_string()].into()), ..ViewPolicy::default() };
        assert_eq!(filter_topology(&view, &only_a).pops.len(), 1);
        let coarse = ViewPolicy { allow: None, step: Resources::new(4, 1, 0) };
        assert_eq!(filter_topology(&view, &coarse).pops[0].free.cpu_cores, 4);
        assert_eq!(filter_topology(&view, &coarse).pops[0].free.storage_gb, 10);
    }
}
