// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use son_core::infra::*;
use son_core::Resources;

fn topology(n: usize) -> Vec<PopSpec> {
    (0..n).map(|i| PopSpec::new(format!("pop-{i}"), Resources::new(8, 8192, 10))).collect()
}

#[derive(Clone, Debug)]
enum Op {
    Alloc { pop: usize, cpu: u64, mem: u64, storage: u64 },
    Release { nth: usize },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..3usize, 0..5u64, 0..5000u64, 0..4u64).prop_map(|(pop, cpu, mem, storage)| Op::Alloc { pop, cpu, mem, storage }),
        (0..60usize).prop_map(|nth| Op::Release { nth }),
    ]
}

proptest! {
    #[test]
    fn matches_sequential_ledger(pops in 1..=3usize, ops in proptest::collection::vec(op(), 0..=50)) {
        let infra = Infrastructure::new(topology(pops)).unwrap();
        // Reference: plain vectors and a list of live allocations.
        let mut used = vec![Resources::ZERO; pops];
        let mut live: Vec<(AllocationId, usize, Resources)> = Vec::new();
        for op in ops {
            match op {
                Op::Alloc { pop, cpu, mem, storage } => {
                    let pop = pop % pops;
                    let r = Resources::new(cpu, mem, storage);
                    let expect_ok = cpu >= 1 && mem >= 1 && (used[pop] + r).fits_within(&Resources::new(8, 8192, 10));
                    let got = infra.allocate(&format!("pop-{pop}"), r, "si", "fi");
                    prop_assert_eq!(got.is_ok(), expect_ok);
                    if let Ok(a) = got {
                        used[pop] += r;
                        live.push((a.id, pop, r));
                    }
                }
                Op::Release { nth } => {
                    if !live.is_empty() {
                        let (id, pop, r) = live.remove(nth % live.len());
                        prop_assert!(infra.release(id));
                        used[pop] -= r;
                    }
                }
            }
            let snap = infra.snapshot();
            for (i, u) in used.iter().enumerate() {
                prop_assert_eq!(snap.pops[&format!("pop-{i}")].used, *u);
            }
            let mut sums: BTreeMap<&str, Resources> = BTreeMap::new();
            for a in snap.allocations.values() {
                *sums.entry(a.pop.as_str()).or_default() += a.resources;
            }
            for p in snap.pops.values() {
                prop_assert_eq!(sums.get(p.id.as_str()).copied().unwrap_or_default(), p.used);
            }
        }
    }
}

#[test]
fn concurrent_admission_never_oversubscribes() {
    let infra = Arc::new(Infrastructure::new(topology(2)).unwrap());
    let threads: Vec<_> = (0..8)
        .map(|t| {
            let infra = infra.clone();
            std::thread::spawn(move || {
                let mut mine = Vec::new();
                for i in 0..500 {
                    let pop = format!("pop-{}", (t + i) % 2);
                    if let Ok(a) = infra.allocate(&pop, Resources::new(1 + (i % 3) as u64, 512, 0), "si", "fi") {
                        mine.push(a.id);
                    }
                    if i % 3 == 0 {
                        if let Some(id) = mine.pop() {
                            infra.release(id);
                        }
                    }
                    let snap = infra.snapshot();
                    for p in snap.pops.values() {
                        assert!(p.used.fits_within(&p.capacity));
                    }
                }
                mine
            })
        })
        .collect();
    let mut held = Vec::new();
    for t in threads {
        held.extend(t.join().unwrap());
    }
    let snap = infra.snapshot();
    let total: Resources = snap.allocations.values().map(|a| a.resources).sum();
    assert_eq!(total, snap.pops.values().map(|p| p.used).sum::<Resources>());
    assert_eq!(held.len(), snap.allocations.len());
    for id in held {
        assert!(infra.release(id));
    }
    assert!(infra.snapshot().pops.values().all(|p| p.used == Resources::ZERO));
}

#[test]
fn metrics_follow_live_instances() {
    let infra = Infrastructure::new(topology(1)).unwrap();
    let a = infra.allocate("pop-0", Resources::new(1, 1, 0), "si-1", "fi-1").unwrap();
    infra.allocate("pop-0", Resources::new(1, 1, 0), "si-1", "fi-2").unwrap();
    let w = Workload::uniform(WorkloadProfile::constant("cpu_load", 0.5));
    let s = infra.emit_metrics(&w, 3);
    assert_eq!(s.len(), 2);
    assert!(s.iter().all(|m| m.value == 0.5 && m.timestamp == 15.0 && m.owner == "si-1"));
    infra.release(a.id);
    let s = infra.emit_metrics(&w, 4);
    assert_eq!(s.iter().map(|m| m.instance_id.as_str()).collect::<Vec<_>>(), ["fi-2"]);
    assert!(infra.emit_metrics(&Workload::default(), 5).is_empty());
}
