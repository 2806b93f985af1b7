// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use common::*;
use proptest::prelude::*;
use serde_json::json;
use son_core::broker::{ClientId, PermissionSet};
use son_core::lifecycle::{InstanceState, TOPIC_CREATE, TOPIC_EVENTS};

#[test]
fn single_function_on_single_pop_runs_there() {
    let p = start("lc-one", pops(&[("only", 8, 8192)]));
    let dev = p.client(DEV);
    let id = deploy(&dev, &workspace("one", &[("f", 2, 1024)], ""), json!({}));
    let body = await_state(&dev, &id);
    assert_eq!(body["state"], "RUNNING");
    assert_eq!(body["placement"], json!({ "one-f": "only" }));
    assert_eq!(body["replicas"], json!({ "one-f": 1 }));
    assert_ledger_consistent(&p);
    p.shutdown();
}

#[test]
fn unknown_service_is_refused_at_creation() {
    let p = start("lc-unknown", pops(&[("only", 8, 8192)]));
    let probe = ClientId::new("probe");
    let _mailbox = p.broker().register_client(probe.clone(), PermissionSet::allow_all()).unwrap();
    let req = json!({ "service": { "vendor": "x", "name": "nope", "version": "1.0.0" }, "owner": "dev" });
    let reply = p.broker().request(&probe, TOPIC_CREATE.parse().unwrap(), req, Duration::from_secs(5)).unwrap();
    assert!(reply["error"].as_str().unwrap().starts_with("unknown service"), "{reply}");
    assert!(p.repo().all().is_empty());
    p.shutdown();
}

#[test]
fn scale_out_in_and_noop() {
    let p = start("lc-scale", pops(&[("a", 8, 8192)]));
    let dev = p.client(DEV);
    let id = deploy(&dev, &workspace("sc", &[("f", 2, 1024)], ""), json!({}));
    assert_eq!(await_state(&dev, &id)["state"], "RUNNING");
    let scale = |target: u32| dev.post_json(&format!("/instances/{id}/scale"), &json!({ "vnf": "sc-f", "target": target })).unwrap();

    let r = scale(3);
    assert_eq!(r.status, 200, "{:?}", r);
    let rec = p.repo().get(&id).unwrap();
    let mut idx: Vec<u32> = rec.function_instances.iter().map(|f| f.replica_index).collect();
    idx.sort();
    assert_eq!(idx, vec![0, 1, 2]);
    assert_ledger_consistent(&p);

    let r = scale(3);
    assert_eq!(r.body["replicas"], 3);
    assert_eq!(p.repo().get(&id).unwrap().state, InstanceState::Running);

    let r = scale(1);
    assert_eq!(r.status, 200);
    assert_eq!(p.repo().get(&id).unwrap().replicas("sc-f"), 1);
    assert_ledger_consistent(&p);

    let r = scale(0);
    assert_eq!((r.status, r.error_code()), (400, Some("BAD_REQUEST")));
    p.shutdown();
}

#[test]
fn scale_beyond_capacity_rolls_back_to_prior_count() {
    // Room for two replicas of 3 cores in 7.
    let p = start("lc-scale-fail", pops(&[("a", 7, 8192)]));
    let dev = p.client(DEV);
    let id = deploy(&dev, &workspace("sf", &[("f", 3, 1024)], ""), json!({}));
    assert_eq!(await_state(&dev, &id)["state"], "RUNNING");
    let before = p.infra().snapshot().used();
    let r = dev.post_json(&format!("/instances/{id}/scale"), &json!({ "vnf": "sf-f", "target": 3 })).unwrap();
    assert_eq!((r.status, r.error_code()), (409, Some("SCALE_FAILED")), "{:?}", r);
    let rec = p.repo().get(&id).unwrap();
    assert_eq!(rec.state, InstanceState::Running);
    assert_eq!(rec.replicas("sf-f"), 1);
    assert_eq!(p.infra().snapshot().used(), before);
    assert_ledger_consistent(&p);
    p.shutdown();
}

#[test]
fn terminate_after_instantiate_restores_utilization() {
    let p = start("lc-restore", pops(&[("a", 8, 8192), ("b", 4, 4096)]));
    let before = p.infra().snapshot();
    let dev = p.client(DEV);
    let id = deploy(&dev, &workspace("rs", &[("x", 4, 4096), ("y", 4, 4096), ("z", 2, 1024)], ""), json!({}));
    assert_eq!(await_state(&dev, &id)["state"], "RUNNING");
    assert!(!p.infra().snapshot().chains.is_empty());
    dev.delete(&format!("/instances/{id}")).unwrap();
    let after = p.infra().snapshot();
    assert_eq!(after.used(), before.used());
    assert!(after.allocations.is_empty() && after.chains.is_empty());
    p.shutdown();
}

#[test]
fn failed_chain_step_leaves_nothing_behind() {
    // The third function cannot be placed after the first two fill the PoP.
    let p = start("lc-partial", pops(&[("a", 4, 4096)]));
    let dev = p.client(DEV);
    let id = deploy(&dev, &workspace("pt", &[("x", 2, 1024), ("y", 2, 1024), ("z", 1, 512)], ""), json!({}));
    let body = await_state(&dev, &id);
    assert_eq!(body["state"], "ERROR");
    assert!(p.infra().snapshot().allocations.is_empty());
    assert_ledger_consistent(&p);
    p.shutdown();
}

fn life_op() -> impl Strategy<Value = LifeOp> {
    prop_oneof![
        3 => (0usize..10).prop_map(|service| LifeOp::Instantiate { service }),
        2 => (0usize..8, 1u32..=3).prop_map(|(instance, target)| LifeOp::Scale { instance, target }),
        2 => (0usize..8).prop_map(|instance| LifeOp::Terminate { instance }),
    ]
}

fn service_shape() -> impl Strategy<Value = Vec<(u64, u64)>> {
    proptest::collection::vec((1u64..=4, 1u64..=4).prop_map(|(c, m)| (c, m * 512)), 1..=3)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn records_and_infrastructure_agree_under_faults(
        seed in any::<u64>(),
        caps in proptest::collection::vec((2u64..=8, 2u64..=8).prop_map(|(c, m)| (c, m * 1024)), 1..=3),
        services in proptest::collection::vec(service_shape(), 1..=10),
        ops in proptest::collection::vec(life_op(), 1..20),
    ) {
        lifecycle_run("lc-prop", seed, &caps, &services, &ops, 0.1);
    }
}

#[test]
fn every_published_transition_is_a_declared_edge() {
    let p = start("lc-edges", pops(&[("a", 6, 6144), ("b", 4, 4096)]));
    let watcher = ClientId::new("watcher");
    let mailbox = p.broker().register_client(watcher.clone(), PermissionSet::allow_all()).unwrap();
    p.broker().subscribe(&watcher, TOPIC_EVENTS.parse().unwrap()).unwrap();

    let dev = p.client(DEV);
    let shapes = [vec![("f", 2, 1024)], vec![("f", 4, 2048), ("g", 1, 512)], vec![("f", 8, 1024)]];
    let mut ids = Vec::new();
    for round in 0..3 {
        for (i, shape) in shapes.iter().enumerate() {
            let ws = workspace(&format!("e{round}-{i}"), shape, "");
            ids.push(deploy(&dev, &ws, json!({})));
        }
        for id in &ids {
            let _ = dev.post_json(&format!("/instances/{id}/scale"), &json!({ "vnf": "x", "target": 2 }));
        }
        if let Some(id) = ids.first() {
            let _ = dev.delete(&format!("/instances/{id}"));
        }
    }
    quiesce(&p);
    for id in &ids {
        let _ = dev.delete(&format!("/instances/{id}"));
    }
    quiesce(&p);

    let mut last: BTreeMap<String, InstanceState> = BTreeMap::new();
    let mut seen = 0;
    while let Ok(d) = mailbox.recv_timeout(Duration::from_millis(200)) {
        let id = d.message.payload["instance_id"].as_str().unwrap().to_string();
        let to: InstanceState = serde_json::from_value(d.message.payload["state"].clone()).unwrap();
        match last.get(&id) {
            None => assert_eq!(to, InstanceState::Requested, "{id} first announced as {to}"),
            Some(&from) => assert!(from.can_transition(to), "{id}: {from} -> {to}"),
        }
        last.insert(id, to);
        seen += 1;
    }
    assert!(seen > 0);
    assert_eq!(last.len(), ids.len());
    p.shutdown();
}
