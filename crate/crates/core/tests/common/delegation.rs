// SPDX-License-Identifier: Apache-2.0

//! Delegation scenarios compared against direct deployment.

use std::collections::BTreeMap;

use serde_json::json;
use son_core::infra::InfraSnapshot;
use son_core::{Platform, PlatformConfig, Resources};

use super::*;

pub fn child_topology() -> Vec<son_core::infra::PopSpec> {
    pops(&[("edge-1", 4, 4096), ("edge-2", 8, 8192)])
}

pub fn start_named(id: &str, local: &str) -> Platform {
    let mut c: PlatformConfig = config(id, child_topology());
    c.local_name = Some(local.into());
    Platform::start(c).unwrap()
}

pub fn link(parent: &Platform, child: &Platform) {
    let r = parent
        .client(OP)
        .post_json("/children", &json!({ "endpoint": child.local_endpoint(), "credentials": PARENT }))
        .unwrap();
    assert_eq!(r.status, 201, "{:?}", r);
}

/// Utilization as (pop, resources, owner, label), ignoring creation times.
pub fn utilization(s: &InfraSnapshot) -> (BTreeMap<String, Resources>, Vec<(String, Resources, String, String)>) {
    let mut allocs: Vec<_> = s.allocations.values().map(|a| (a.pop.clone(), a.resources, a.owner.clone(), a.label.clone())).collect();
    allocs.sort();
    (s.used(), allocs)
}

pub fn service() -> son_core::package::WorkspaceSnapshot {
    workspace("deleg", &[("fw", 2, 2048), ("ids", 4, 4096), ("nat", 1, 1024)], "")
}

/// Deploy on a child directly and again through one parent; the child
/// must end up with the same utilization, and terminate through the
/// parent must restore its baseline. Panics on any difference.
pub fn two_level_run(tag: &str) {
    // The same service deployed straight on an identical child.
    let direct = start_named("child", &format!("{tag}-child-direct"));
    let dev = direct.client(DEV);
    let id = deploy(&dev, &service(), json!({}));
    assert_eq!(await_state(&dev, &id)["state"], "RUNNING");
    let expected = utilization(&direct.infra().snapshot());
    direct.shutdown();

    let child = start_named("child", &format!("{tag}-child-delegated"));
    let baseline = utilization(&child.infra().snapshot());
    let parent = start("root", pops(&[("core", 2, 1024)]));
    link(&parent, &child);
    let dev = parent.client(DEV);
    let id = deploy(&dev, &service(), json!({ "delegate_to": ["child"] }));
    let body = await_state(&dev, &id);
    assert_eq!(body["state"], "RUNNING", "{body}");
    assert_eq!(body["remote"]["child"], "child");
    assert_eq!(body["remote"]["state"], "RUNNING");
    assert!(parent.infra().snapshot().allocations.is_empty());
    assert_eq!(utilization(&child.infra().snapshot()), expected);

    let r = dev.delete(&format!("/instances/{id}")).unwrap();
    assert_eq!(r.body["state"], "TERMINATED", "{:?}", r);
    let remote = body["remote"]["instance_id"].as_str().unwrap();
    assert_eq!(child.repo().get(remote).unwrap().state, son_core::lifecycle::InstanceState::Terminated);
    assert_eq!(utilization(&child.infra().snapshot()), baseline);
    // Proxied terminate stays a no-op end to end.
    let again = dev.delete(&format!("/instances/{id}")).unwrap();
    assert_eq!((again.status, again.body["state"].as_str()), (200, Some("TERMINATED")));
    assert_eq!(utilization(&child.infra().snapshot()), baseline);
    parent.shutdown();
    child.shutdown();
}

/// As [`two_level_run`] with the leaf two links below the entry point.
pub fn three_level_run(tag: &str) {
    let direct = start_named("leaf", &format!("{tag}-leaf-direct"));
    let dev = direct.client(DEV);
    let id = deploy(&dev, &service(), json!({}));
    assert_eq!(await_state(&dev, &id)["state"], "RUNNING");
    let expected = utilization(&direct.infra().snapshot());
    direct.shutdown();

    let leaf = start_named("leaf", &format!("{tag}-leaf-3"));
    let baseline = utilization(&leaf.infra().snapshot());
    let mid = start("mid", pops(&[("mid-pop", 2, 1024)]));
    let top = start("top", pops(&[("top-pop", 2, 1024)]));
    link(&mid, &leaf);
    link(&top, &mid);
    let health = top.client(DEV).get("/health", &[]).unwrap();
    assert_eq!(health.body["subtree"], json!(["leaf", "mid"]));

    let extra = "delegate_to: [mid, leaf]\n";
    let ws = workspace("deleg", &[("fw", 2, 2048), ("ids", 4, 4096), ("nat", 1, 1024)], extra);
    let dev = top.client(DEV);
    let id = deploy(&dev, &ws, json!({}));
    let body = await_state(&dev, &id);
    assert_eq!(body["state"], "RUNNING", "{body}");
    let mid_id = body["remote"]["instance_id"].as_str().unwrap().to_string();
    let mid_rec = mid.repo().get(&mid_id).unwrap();
    assert_eq!(mid_rec.remote.as_ref().unwrap().child, "leaf");
    assert!(top.infra().snapshot().allocations.is_empty());
    assert!(mid.infra().snapshot().allocations.is_empty());
    assert_eq!(utilization(&leaf.infra().snapshot()), expected);

    let r = dev.delete(&format!("/instances/{id}")).unwrap();
    assert_eq!(r.body["state"], "TERMINATED", "{:?}", r);
    assert_eq!(mid.repo().get(&mid_id).unwrap().state, son_core::lifecycle::InstanceState::Terminated);
    assert_eq!(utilization(&leaf.infra().snapshot()), baseline);
    for p in [top, mid, leaf] {
        p.shutdown();
    }
}
