// SPDX-License-Identifier: Apache-2.0

//! Brute-force placement oracles over small topologies.

use std::collections::BTreeMap;

use son_core::executive::{TopologyView, ViewPop};
use son_core::Resources;

pub const CAPS: [u64; 4] = [1, 2, 4, 8];

/// Every list of 1..=max_len values from `CAPS`.
pub fn cap_lists(max_len: usize) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|p: &Vec<u64>| CAPS.iter().map(move |c| [p.clone(), vec![*c]].concat()))
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

pub fn pop_id(i: usize) -> String {
    format!("pop-{}", (b'a' + i as u8) as char)
}

/// Cores as given, 1 GiB of memory per core, no storage.
pub fn res(cores: u64) -> Resources {
    Resources::new(cores, cores * 1024, 0)
}

pub fn view(cores: &[u64], latency: &[f64]) -> TopologyView {
    TopologyView::new(
        cores
            .iter()
            .enumerate()
            .map(|(i, c)| ViewPop {
                id: pop_id(i),
                free: res(*c),
                latency_ms: latency.get(i).map(|l| [("user".to_string(), *l)].into()).unwrap_or_default(),
            })
            .collect(),
    )
}

/// First-fit by exhaustive search: among all assignments of VNFs to PoPs,
/// the one in which every VNF sits on the lowest-indexed PoP with room
/// left after the VNFs before it. `None` when no assignment has that
/// property, which happens exactly when some VNF finds no room.
pub fn first_fit_oracle(pop_cores: &[u64], vnf_cores: &[u64]) -> Option<Vec<usize>> {
    let n = pop_cores.len();
    let total = n.pow(vnf_cores.len() as u32);
    (0..total)
        .map(|mut code| {
            (0..vnf_cores.len())
                .map(|_| {
                    let p = code % n;
                    code /= n;
                    p
                })
                .collect::<Vec<usize>>()
        })
        .find(|a| {
            (0..vnf_cores.len()).all(|i| {
                let left = |p: usize| {
                    let used: u64 = (0..i).filter(|&j| a[j] == p).map(|j| vnf_cores[j]).sum();
                    pop_cores[p].saturating_sub(used)
                };
                left(a[i]) >= vnf_cores[i] && (0..a[i]).all(|q| left(q) < vnf_cores[i])
            })
        })
}

pub fn as_map(assignment: &[usize]) -> BTreeMap<String, String> {
    assignment.iter().enumerate().map(|(i, p)| (format!("vnf-{i}"), pop_id(*p))).collect()
}

pub fn requests(vnf_cores: &[u64]) -> Vec<(String, Resources)> {
    vnf_cores.iter().enumerate().map(|(i, c)| (format!("vnf-{i}"), res(*c))).collect()
}

/// Index of the feasible PoP with the lowest latency, ties to the lower
/// index.
pub fn latency_argmax(cores: &[u64], latency: &[f64], need: u64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..cores.len() {
        if cores[i] >= need && best.map_or(true, |b| -latency[i] > -latency[b]) {
            best = Some(i);
        }
    }
    best
}
