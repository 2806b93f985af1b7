// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use serde_json::json;
use son_core::broker::{Broker, BrokerError, ClientId, Message, Pattern, PermissionSet};
use son_core::clock::ManualClock;
use son_core::plugin::*;

const INTERVAL: u64 = 2_000;

fn manager(clock: Arc<ManualClock>) -> PluginManager {
    PluginManager::new(
        Broker::new(),
        clock,
        PolicyTable::default(),
        LivenessConfig::default(),
        Duration::from_millis(200),
    )
}

fn p(s: &str) -> Pattern {
    s.parse().unwrap()
}

#[test]
fn service_tree_is_granted() {
    let m = manager(ManualClock::new(0));
    let reg = m.register(PluginManifest::new("slm").subscribes(&["service.#"])).unwrap();
    assert_eq!(reg.granted.subscribe_allow, vec![p("service.#")]);
    assert!(reg.granted.publish_allow.is_empty());
    assert_eq!(m.record(&reg.id).unwrap().state, PluginState::Registered);
}

#[test]
fn management_tree_refused_for_non_core() {
    let m = manager(ManualClock::new(0));
    let err = m.register(PluginManifest::new("rogue").subscribes(&["platform.management.#"])).unwrap_err();
    // The default table's third rule blacklists the management tree.
    assert_eq!(PolicyTable::default().decide(&p("platform.management.#"), false), Decision::Deny(2));
    assert!(matches!(err, PluginError::PolicyViolation(ref q) if *q == p("platform.management.#")));
    assert!(m.records().is_empty());
    assert!(m.register_core(PluginManifest::new("core").subscribes(&["platform.management.#"])).is_ok());
}

#[test]
fn empty_wants_give_deny_all() {
    let m = manager(ManualClock::new(0));
    let reg = m.register(PluginManifest::new("idle")).unwrap();
    assert_eq!(reg.granted, PermissionSet::deny_all());
}

#[test]
fn empty_name_rejected() {
    let m = manager(ManualClock::new(0));
    assert!(matches!(m.register(PluginManifest::new(" ")), Err(PluginError::InvalidManifest(_))));
}

#[test]
fn eviction_thresholds() {
    let clock = ManualClock::new(0);
    let m = manager(clock.clone());
    let a = m.register(PluginManifest::new("a")).unwrap().id;
    let b = m.register(PluginManifest::new("b")).unwrap().id;
    m.heartbeat(&a).unwrap();
    m.heartbeat(&b).unwrap();
    assert_eq!(m.record(&a).unwrap().state, PluginState::Running);
    assert!(m.evict_stale(0).is_empty());

    clock.set(3 * INTERVAL);
    m.heartbeat(&b).unwrap();
    // a has been silent 4 intervals, b 1.
    clock.set(4 * INTERVAL);
    assert!(m.evict_stale(4 * INTERVAL).is_empty());
    assert_eq!(m.record(&a).unwrap().state, PluginState::Suspect);
    assert_eq!(m.record(&b).unwrap().state, PluginState::Running);

    // A heartbeat brings a SUSPECT plugin back.
    m.heartbeat(&a).unwrap();
    assert_eq!(m.record(&a).unwrap().state, PluginState::Running);

    // a silent 7 intervals after its last heartbeat.
    let t = 4 * INTERVAL + 7 * INTERVAL;
    clock.set(t);
    m.heartbeat(&b).unwrap();
    assert_eq!(m.evict_stale(t), vec![a.clone()]);
    assert_eq!(m.record(&a).unwrap().state, PluginState::Deregistered);
    assert!(matches!(m.heartbeat(&a), Err(PluginError::UnknownPlugin(_))));
}

#[test]
fn exactly_six_intervals_is_not_evicted() {
    let clock = ManualClock::new(0);
    let m = manager(clock.clone());
    let a = m.register(PluginManifest::new("a")).unwrap().id;
    m.heartbeat(&a).unwrap();
    assert!(m.evict_stale(6 * INTERVAL).is_empty());
    assert_eq!(m.record(&a).unwrap().state, PluginState::Suspect);
    assert_eq!(m.evict_stale(6 * INTERVAL + 1), vec![a]);
}

#[test]
fn unknown_heartbeat() {
    let m = manager(ManualClock::new(0));
    assert!(matches!(m.heartbeat(&PluginId("ghost-1".into())), Err(PluginError::UnknownPlugin(_))));
}

#[test]
fn deregistered_plugin_receives_nothing() {
    let m = manager(ManualClock::new(0));
    let broker = m.broker().clone();
    let reg = m.register(PluginManifest::new("sub").subscribes(&["service.#"])).unwrap();
    broker.subscribe(&reg.client, p("service.#")).unwrap();
    let publisher = ClientId::new("pub");
    broker.register_client(publisher.clone(), PermissionSet::allow_all()).unwrap();
    broker.publish(&publisher, "service.a".parse().unwrap(), json!(1)).unwrap();
    assert_eq!(reg.mailbox.recv_timeout(Duration::from_secs(1)).unwrap().message.payload, json!(1));

    m.deregister(&reg.id);
    m.deregister(&reg.id);
    let receipt = broker.publish(&publisher, "service.a".parse().unwrap(), json!(2)).unwrap();
    assert_eq!(receipt.fan_out, 0);
    assert!(reg.mailbox.try_recv().is_err());
}

struct Echo;

impl Plugin for Echo {
    fn manifest(&self) -> PluginManifest {
        PluginManifest::new("echo").subscribes(&["service.echo.request"]).publishes(&["service.echo.response"])
    }

    fn handle(&mut self, ctx: &PluginContext, msg: &Message) {
        ctx.reply(msg, msg.payload.clone()).unwrap();
    }
}

struct Silent;

impl Plugin for Silent {
    fn manifest(&self) -> PluginManifest {
        Echo.manifest()
    }

    fn handle(&mut self, _: &PluginContext, _: &Message) {}
}

#[test]
fn hosted_plugin_answers_and_heartbeats() {
    let m = PluginManager::new(
        Broker::new(),
        Arc::new(son_core::clock::SystemClock),
        PolicyTable::default(),
        LivenessConfig { interval_ms: 20, ..LivenessConfig::default() },
        Duration::from_secs(2),
    );
    m.start_liveness().unwrap();
    let ctx = m.spawn(Echo, false).unwrap();
    let caller = ClientId::new("caller");
    m.broker()
        .register_client(caller.clone(), PermissionSet {
            publish_allow: vec![p("service.#")],
            subscribe_allow: vec![p("service.#")],
        })
        .unwrap();
    let got = m.broker().request(&caller, "service.echo.request".parse().unwrap(), json!({"x": 1}), Duration::from_secs(2));
    assert_eq!(got.unwrap(), json!({"x": 1}));
    // The first heartbeat is sent on start; wait for the listener to see it.
    let deadline = std::time::Instant::now() + Duration::from_secs(2);
    while m.record(ctx.id()).unwrap().state != PluginState::Running {
        assert!(std::time::Instant::now() < deadline, "no heartbeat observed");
        std::thread::sleep(Duration::from_millis(5));
    }
    m.shutdown();
}

#[test]
fn replacement_during_request_times_out() {
    let m = manager(ManualClock::new(0));
    let old = m.spawn(Echo, false).unwrap();
    m.deregister(old.id());
    let new = m.spawn(Silent, false).unwrap();
    let caller = ClientId::new("caller");
    m.broker()
        .register_client(caller.clone(), PermissionSet {
            publish_allow: vec![p("service.#")],
            subscribe_allow: vec![p("service.#")],
        })
        .unwrap();
    let broker = m.broker().clone();
    let pending = std::thread::spawn(move || {
        broker.request(&caller, "service.echo.request".parse().unwrap(), json!(0), Duration::from_millis(300))
    });
    // Swap again while the request is in flight.
    std::thread::sleep(Duration::from_millis(50));
    m.deregister(new.id());
    let _ = m.spawn(Silent, false).unwrap();
    assert!(matches!(pending.join().unwrap(), Err(BrokerError::Timeout(_))));
    m.shutdown();
}

const POOL: &[&str] = &[
    "#",
    "service.#",
    "service.*.request",
    "service.a",
    "function.#",
    "platform.#",
    "platform.management.#",
    "platform.management.plugin.heartbeat",
    "infrastructure.*",
    "platform.slice.admit",
];

fn rule() -> impl Strategy<Value = PolicyRule> {
    (0..POOL.len(), any::<bool>(), any::<bool>()).prop_map(|(i, allow, core)| PolicyRule {
        pattern: POOL[i].parse().unwrap(),
        effect: if allow { Effect::Allow } else { Effect::Deny },
        scope: if core { Scope::Core } else { Scope::Any },
    })
}

proptest! {
    #[test]
    fn grant_is_subset_of_wants_and_policy(
        rules in proptest::collection::vec(rule(), 0..6),
        wants in proptest::collection::vec(0..POOL.len(), 0..5),
        core in any::<bool>(),
    ) {
        let table = PolicyTable { rules };
        let m = PluginManager::new(Broker::new(), ManualClock::new(0), table.clone(), LivenessConfig::default(), Duration::from_millis(10));
        let names: Vec<&str> = wants.iter().map(|&i| POOL[i]).collect();
        let manifest = PluginManifest::new("x").subscribes(&names).publishes(&names);
        let res = if core { m.register_core(manifest) } else { m.register(manifest) };
        match res {
            Ok(reg) => {
                for g in reg.granted.subscribe_allow.iter().chain(&reg.granted.publish_allow) {
                    prop_assert!(names.iter().any(|n| p(n) == *g));
                    prop_assert_eq!(table.decide(g, core), Decision::Grant);
                }
            }
            Err(PluginError::PolicyViolation(q)) => {
                prop_assert!(matches!(table.decide(&q, core), Decision::Deny(_)));
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}
