// SPDX-License-Identifier: Apache-2.0

//! Builders shared by the integration tests.
#![allow(dead_code)]

pub mod bus;
pub mod delegation;
pub mod fuzz;
pub mod placement;

use std::path::{Path, PathBuf};
use std::time::Duration;

use son_core::gatekeeper::{ApiClient, Role};
use son_core::infra::PopSpec;
use son_core::lifecycle::InstanceState;
use son_core::package::{build_package, package_id, PackageMode, WorkspaceSnapshot};
use son_core::{Platform, PlatformConfig, Resources};

pub const DEV: &str = "dev-token";
pub const DEV2: &str = "dev2-token";
pub const OP: &str = "op-token";
pub const PARENT: &str = "parent-token";

pub const VENDOR: &str = "org.example";

pub fn function_yaml(name: &str, cores: u64, memory_mb: u64) -> String {
    format!(
        "descriptor_kind: function\nvendor: {VENDOR}\nname: {name}\nversion: 1.0.0\n\
         deployment_units:\n  - image_ref: images/{name}.img\n    resources: {{ cpu_cores: {cores}, memory_mb: {memory_mb} }}\n\
         connection_points: [in, out]\n\
         monitoring:\n  - {{ metric: cpu_load, unit: ratio, interval_s: 1 }}\n"
    )
}

/// Service named `name` chaining `functions` in order.
pub fn service_yaml(name: &str, functions: &[(&str, u64, u64)], extra: &str) -> String {
    let refs: Vec<String> = functions
        .iter()
        .map(|(f, _, _)| format!("  - {{ id: {f}, vendor: {VENDOR}, name: {f}, version: 1.0.0 }}"))
        .collect();
    let graph: Vec<String> = functions.iter().flat_map(|(f, _, _)| [format!("\"{f}:in\""), format!("\"{f}:out\"")]).collect();
    format!(
        "descriptor_kind: service\nvendor: {VENDOR}\nname: {name}\nversion: 1.0.0\nfunctions:\n{}\n\
         connection_points: [ingress, egress]\nforwarding_graph: [{}]\n{extra}",
        refs.join("\n"),
        graph.join(", ")
    )
}

/// A workspace holding one service and its functions. Function names are
/// prefixed with the service name so several packages can share a catalogue.
pub fn workspace(name: &str, functions: &[(&str, u64, u64)], extra: &str) -> WorkspaceSnapshot {
    let named: Vec<(String, u64, u64)> = functions.iter().map(|(f, c, m)| (format!("{name}-{f}"), *c, *m)).collect();
    let refs: Vec<(&str, u64, u64)> = named.iter().map(|(f, c, m)| (f.as_str(), *c, *m)).collect();
    let mut ws = WorkspaceSnapshot::default();
    ws.insert("descriptors/service.yml", service_yaml(name, &refs, extra));
    for (f, c, m) in &refs {
        ws.insert(format!("descriptors/{f}.yml"), function_yaml(f, *c, *m));
        ws.insert(format!("images/{f}.img"), format!("image of {f}"));
    }
    ws
}

pub fn package(ws: &WorkspaceSnapshot) -> (String, Vec<u8>) {
    let bytes = build_package(ws, PackageMode::Fat).expect("package builds");
    (package_id(&bytes), bytes)
}

pub fn pops(caps: &[(&str, u64, u64)]) -> Vec<PopSpec> {
    caps.iter().map(|(id, c, m)| PopSpec::new(*id, Resources::new(*c, *m, 0))).collect()
}

pub fn config(id: &str, topology: Vec<PopSpec>) -> PlatformConfig {
    let mut c = PlatformConfig::new(id, topology)
        .with_principal("dev", Role::Developer, DEV)
        .with_principal("dev2", Role::Developer, DEV2)
        .with_principal("op", Role::Operator, OP)
        .with_principal("parent", Role::Platform, PARENT);
    c.step_timeout_ms = 5_000;
    c.heartbeat_interval_ms = 500;
    c
}

pub fn start(id: &str, topology: Vec<PopSpec>) -> Platform {
    Platform::start(config(id, topology)).expect("platform starts")
}

pub const WAIT: Duration = Duration::from_secs(20);

pub fn final_states() -> [InstanceState; 3] {
    [InstanceState::Running, InstanceState::Error, InstanceState::Terminated]
}

/// Upload then instantiate; returns the instance id.
pub fn deploy(client: &ApiClient, ws: &WorkspaceSnapshot, options: serde_json::Value) -> String {
    let (id, bytes) = package(ws);
    let up = client.post_bytes("/packages", bytes).unwrap();
    assert!(up.is_success(), "upload failed: {:?}", up);
    let r = client.post_json("/instances", &serde_json::json!({ "package_id": id, "options": options })).unwrap();
    assert_eq!(r.status, 202, "instantiate failed: {:?}", r);
    r.body["instance_id"].as_str().unwrap().to_string()
}

/// Poll the API until the instance reaches a final state.
pub fn await_state(client: &ApiClient, instance: &str) -> serde_json::Value {
    let deadline = std::time::Instant::now() + WAIT;
    loop {
        let r = client.get(&format!("/instances/{instance}"), &[]).unwrap();
        let s = r.body["state"].as_str().unwrap_or_default().to_string();
        if ["RUNNING", "ERROR", "TERMINATED"].contains(&s.as_str()) || std::time::Instant::now() > deadline {
            return r.body;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

#[derive(Clone, Debug)]
pub enum SliceOp {
    /// Deploy a service of one function with these resources.
    Deploy { cores: u64, memory_mb: u64 },
    /// Terminate the n-th admitted instance so far, if it is still up.
    Terminate(usize),
}

/// Run `ops` in one slice of mode `mode` ("FLAT" or "NESTED") and return,
/// per deploy, whether it reached RUNNING. Checks the quota after every op.
pub fn slice_run(tag: &str, mode: &str, quota: Resources, ops: &[SliceOp]) -> Vec<bool> {
    let p = start(&format!("{tag}-{}", mode.to_lowercase()), pops(&[("root", 64, 65536)]));
    let op = p.client(OP);
    let s = op
        .post_json("/slices", &serde_json::json!({ "quota": quota, "mode": mode, "tenant": "dev" }))
        .unwrap();
    assert_eq!(s.status, 201, "{:?}", s);
    let slice_id = s.body["id"].as_str().unwrap().to_string();
    let dev = p.client(DEV);
    let mut decisions = Vec::new();
    let mut admitted: Vec<String> = Vec::new();
    for (i, o) in ops.iter().enumerate() {
        match o {
            SliceOp::Deploy { cores, memory_mb } => {
                let ws = workspace(&format!("svc{i}"), &[("f", *cores, *memory_mb)], "");
                let id = deploy(&dev, &ws, serde_json::json!({ "slice_id": slice_id }));
                let ok = await_state(&dev, &id)["state"] == "RUNNING";
                if ok {
                    admitted.push(id);
                }
                decisions.push(ok);
            }
            SliceOp::Terminate(n) => {
                if let Some(id) = admitted.get(*n) {
                    let r = dev.delete(&format!("/instances/{id}")).unwrap();
                    assert_eq!(r.body["state"], "TERMINATED");
                }
            }
        }
        let slice = p.slices().get(&slice_id).unwrap();
        assert!(slice.used.fits_within(&slice.quota), "slice over quota: {slice:?}");
        if let Some(child) = &slice.child {
            let c = p.nested_child(child).unwrap();
            let used: Resources = c.infra().snapshot().used().values().copied().sum();
            assert!(used.fits_within(&slice.quota), "nested child over quota");
        }
    }
    p.shutdown();
    decisions
}

/// Allocations as tracked by instance records and by the infrastructure
/// must agree exactly, and per-PoP usage must equal the sum of allocations.
pub fn assert_ledger_consistent(p: &Platform) {
    use std::collections::BTreeMap;
    let snap = p.infra().snapshot();
    let mut tracked = BTreeMap::new();
    for r in p.repo().all() {
        for f in &r.function_instances {
            assert!(tracked.insert(f.allocation, (f.pop.clone(), f.resources)).is_none(), "allocation tracked twice");
        }
    }
    let held: BTreeMap<_, _> = snap.allocations.values().map(|a| (a.id, (a.pop.clone(), a.resources))).collect();
    assert_eq!(tracked, held, "records and infrastructure disagree");
    let mut per_pop: BTreeMap<String, Resources> = snap.pops.keys().map(|k| (k.clone(), Resources::ZERO)).collect();
    for (pop, res) in held.values() {
        *per_pop.get_mut(pop).unwrap() += *res;
    }
    assert_eq!(per_pop, snap.used());
}

/// Wait until no instance is mid-workflow.
pub fn quiesce(p: &Platform) {
    let deadline = std::time::Instant::now() + WAIT;
    loop {
        let busy = p.repo().all().into_iter().any(|r| !final_states().contains(&r.state));
        if !busy {
            return;
        }
        assert!(std::time::Instant::now() < deadline, "platform did not quiesce");
        std::thread::sleep(Duration::from_millis(2));
    }
}

#[derive(Clone, Debug)]
pub enum LifeOp {
    Instantiate { service: usize },
    Scale { instance: usize, target: u32 },
    Terminate { instance: usize },
}

/// A randomized lifecycle run: `services` are (cores, memory) per function
/// for each of up to 10 services, spread over `pop_caps`. Faults are
/// injected at `fault_rate` into placement and deploy. Checks the ledger
/// at the quiescent point after `ops` and after terminating everything.
pub fn lifecycle_run(tag: &str, seed: u64, pop_caps: &[(u64, u64)], services: &[Vec<(u64, u64)>], ops: &[LifeOp], fault_rate: f64) {
    let names: Vec<String> = (0..pop_caps.len()).map(|i| format!("pop-{i}")).collect();
    let topo: Vec<(&str, u64, u64)> = names.iter().zip(pop_caps).map(|(n, (c, m))| (n.as_str(), *c, *m)).collect();
    let mut cfg = config(&format!("{tag}-{seed}"), pops(&topo));
    cfg.faults = son_core::executive::FaultConfig { seed, placement_rate: fault_rate, deploy_rate: fault_rate };
    let p = Platform::start(cfg).unwrap();
    let baseline = p.infra().snapshot().used();
    let dev = p.client(DEV);
    let mut pkgs = Vec::new();
    for (i, fs) in services.iter().enumerate() {
        let names: Vec<String> = (0..fs.len()).map(|k| format!("f{k}")).collect();
        let shape: Vec<(&str, u64, u64)> = names.iter().zip(fs).map(|(n, (c, m))| (n.as_str(), *c, *m)).collect();
        let (id, bytes) = package(&workspace(&format!("s{i}"), &shape, ""));
        assert!(dev.post_bytes("/packages", bytes).unwrap().is_success());
        pkgs.push(id);
    }
    let mut instances: Vec<(String, usize)> = Vec::new();
    for op in ops {
        match op {
            LifeOp::Instantiate { service } => {
                let svc = service % pkgs.len();
                let pkg = &pkgs[svc];
                let r = dev.post_json("/instances", &serde_json::json!({ "package_id": pkg })).unwrap();
                assert_eq!(r.status, 202);
                instances.push((r.body["instance_id"].as_str().unwrap().to_string(), svc));
            }
            LifeOp::Scale { instance, target } => {
                if let Some((id, svc)) = instances.get(*instance) {
                    let vnf = format!("s{svc}-f0");
                    let _ = dev.post_json(&format!("/instances/{id}/scale"), &serde_json::json!({ "vnf": vnf, "target": target }));
                }
            }
            LifeOp::Terminate { instance } => {
                if let Some((id, _)) = instances.get(*instance) {
                    let _ = dev.delete(&format!("/instances/{id}"));
                }
            }
        }
    }
    quiesce(&p);
    assert_ledger_consistent(&p);
    // Terminating everything returns utilization to the start.
    for (id, _) in &instances {
        let r = dev.delete(&format!("/instances/{id}")).unwrap();
        assert!(r.is_success(), "{:?}", r);
    }
    quiesce(&p);
    assert_ledger_consistent(&p);
    assert_eq!(p.infra().snapshot().used(), baseline);
    assert!(p.infra().snapshot().chains.is_empty());
    p.shutdown();
}

/// Offline replay of the platform's DEFAULT scaling rules for a
/// single-function service driven by `profile`:
/// `avg(cpu_load, 60) > 0.8` adds a replica, `< 0.2` removes one, within
/// `[1, max_replicas]`. Replicas are named `<instance>-fi-<n>` with `n`
/// counting up from 1 and never reused; scale-in drops the newest.
/// Returns `(tick, from, to)` per change and the count after each tick.
pub fn replay_default_rules(
    profile: &son_core::infra::WorkloadProfile,
    instance: &str,
    ticks: u64,
    max_replicas: u32,
) -> (Vec<(u64, u32, u32)>, Vec<u32>) {
    let mut live: Vec<String> = vec![format!("{instance}-fi-1")];
    let mut next = 1;
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut changes = Vec::new();
    let mut timeline = Vec::new();
    for tick in 0..ticks {
        let now = profile.timestamp(tick);
        for fi in &live {
            samples.push((now, profile.value(fi, tick)));
        }
        let (sum, n) = samples
            .iter()
            .filter(|(t, _)| *t > now - 60.0 && *t <= now)
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        let avg = sum / n as f64;
        let replicas = live.len() as u32;
        let target = if avg > 0.8 {
            replicas + 1
        } else if avg < 0.2 {
            replicas.saturating_sub(1)
        } else {
            replicas
        };
        if target != replicas && (1..=max_replicas).contains(&target) {
            changes.push((tick, replicas, target));
            if target > replicas {
                next += 1;
                live.push(format!("{instance}-fi-{next}"));
            } else {
                live.pop();
            }
        }
        timeline.push(live.len() as u32);
    }
    (changes, timeline)
}

/// The sinusoidal load used for profiling checks.
pub fn sine_profile() -> son_core::infra::WorkloadProfile {
    son_core::sdk::parse_profile("metric: cpu_load\nbase: 0.5\namplitude: 0.5\nperiod_ticks: 40\nnoise_seed: 7\n").unwrap()
}

pub fn chain_fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/chain3")
}

/// A workspace on disk with the three-function chain, an empty artifact and
/// a 10 MB image.
pub fn write_chain_workspace(root: &Path) {
    std::fs::create_dir_all(root.join("descriptors")).unwrap();
    std::fs::create_dir_all(root.join("artifacts")).unwrap();
    for f in std::fs::read_dir(chain_fixture_dir()).unwrap() {
        let f = f.unwrap();
        std::fs::copy(f.path(), root.join("descriptors").join(f.file_name())).unwrap();
    }
    std::fs::write(root.join("workspace.yml"), "artifact_base_uri: https://images.example.org/gw/\n").unwrap();
    std::fs::write(root.join("artifacts/fw.img"), vec![0xAB; 10 * 1024 * 1024]).unwrap();
    std::fs::write(root.join("artifacts/ids.img"), b"").unwrap();
    std::fs::write(root.join("artifacts/nat.img"), b"nat image").unwrap();
    std::fs::write(root.join("artifacts/notes.txt"), b"release notes").unwrap();
}
