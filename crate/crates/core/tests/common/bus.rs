// SPDX-License-Identifier: Apache-2.0

//! Reference matcher and randomized broker runs.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use son_core::broker::{topic_matches, Broker, ClientId, Pattern, PermissionSet, Topic};

/// Brute-force matcher: tries every way of aligning pattern elements with
/// topic segments, where `#` may swallow any number of segments.
pub fn reference_matches(pattern: &[&str], topic: &[&str]) -> bool {
    match pattern.split_first() {
        None => topic.is_empty(),
        Some((&"#", rest)) => (0..=topic.len()).any(|k| reference_matches(rest, &topic[k..])),
        Some((&"*", rest)) => !topic.is_empty() && reference_matches(rest, &topic[1..]),
        Some((lit, rest)) => topic.first() == Some(lit) && reference_matches(rest, &topic[1..]),
    }
}

/// Every sequence of 1..=max_len items drawn from `alphabet`.
pub fn sequences<'a>(alphabet: &[&'a str], max_len: usize) -> Vec<Vec<&'a str>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<&str>> = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|prefix| alphabet.iter().map(move |s| {
                let mut v = prefix.clone();
                v.push(*s);
                v
            }))
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Compare `topic_matches` with the reference on every pattern over
/// {a,b,c,*,#} and every topic over {a,b,c}, lengths up to 4. Patterns the
/// type rejects (`#` not last) are counted separately. Returns
/// `(pairs checked, disagreements, rejected patterns)`.
pub fn exhaustive_matcher_check() -> (usize, usize, usize) {
    let topics = sequences(&["a", "b", "c"], 4);
    let mut checked = 0;
    let mut wrong = 0;
    let mut rejected = 0;
    for pat in sequences(&["a", "b", "c", "*", "#"], 4) {
        let well_formed = !pat[..pat.len() - 1].contains(&"#");
        let parsed = pat.join(".").parse::<Pattern>();
        if !well_formed {
            assert!(parsed.is_err(), "`{}` must be rejected", pat.join("."));
            rejected += 1;
            continue;
        }
        let p = parsed.expect("well-formed pattern parses");
        for top in &topics {
            let t: Topic = top.join(".").parse().unwrap();
            checked += 1;
            if topic_matches(&p, &t) != reference_matches(&pat, top) {
                wrong += 1;
            }
        }
    }
    (checked, wrong, rejected)
}

/// `publishers` threads each publish `per_publisher` messages spread over
/// shared topics; `subscribers` clients listen on overlapping patterns.
/// Returns the number of per-(sender, topic) order violations seen.
pub fn ordering_run(seed: u64, publishers: usize, per_publisher: usize, subscribers: usize) -> usize {
    let broker = Broker::new();
    let topics = ["service.shared.a", "service.shared.b", "function.shared.c"];
    let patterns = ["#", "service.#", "*.shared.*", "service.shared.a"];
    let mut mailboxes = Vec::new();
    for i in 0..subscribers {
        let id = ClientId::new(format!("sub-{i}"));
        let rx = broker.register_client(id.clone(), PermissionSet::allow_all()).unwrap();
        broker.subscribe(&id, patterns[i % patterns.len()].parse().unwrap()).unwrap();
        mailboxes.push(rx);
    }
    let handles: Vec<_> = (0..publishers)
        .map(|i| {
            let b = broker.clone();
            let id = ClientId::new(format!("pub-{i}"));
            b.register_client(id.clone(), PermissionSet::allow_all()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64) << 32);
            std::thread::spawn(move || {
                for n in 0..per_publisher {
                    let t = topics[rng.gen_range(0..topics.len())];
                    b.publish(&id, t.parse().unwrap(), json!(n)).unwrap();
                    if rng.gen_bool(0.05) {
                        std::thread::yield_now();
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let mut violations = 0;
    for rx in mailboxes {
        let mut last: BTreeMap<(String, String), u64> = BTreeMap::new();
        for d in rx.try_iter() {
            let key = (d.message.sender.0.clone(), d.message.topic.to_string());
            if let Some(prev) = last.insert(key, d.message.sequence_no) {
                if d.message.sequence_no <= prev {
                    violations += 1;
                }
            }
        }
    }
    violations
}

/// A client with random grants tries random subscriptions and publishes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PermissionOutcome {
    /// Messages received outside every granted subscribe pattern.
    pub outside: usize,
    /// Deliveries caused by denied publishes.
    pub leaked: usize,
    pub received: usize,
    pub denied: usize,
}

pub fn permission_run(seed: u64) -> PermissionOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["service", "function", "platform", "x", "y"];
    let leaf = ["x", "y", "z"];
    let topic = |rng: &mut ChaCha8Rng| -> String {
        let mut s = vec![words[rng.gen_range(0..3)].to_string()];
        for _ in 0..rng.gen_range(0..3) {
            s.push(leaf[rng.gen_range(0..3)].to_string());
        }
        s.join(".")
    };
    let pattern = |rng: &mut ChaCha8Rng| -> Pattern {
        let mut s = vec![["service", "function", "platform", "*"][rng.gen_range(0..4)].to_string()];
        for _ in 0..rng.gen_range(0..3) {
            s.push(["x", "y", "*"][rng.gen_range(0..3)].to_string());
        }
        if rng.gen_bool(0.3) {
            s.push("#".into());
        }
        s.join(".").parse().unwrap()
    };

    let broker = Arc::new(Broker::new());
    let grants: Vec<Pattern> = (0..rng.gen_range(0..3)).map(|_| pattern(&mut rng)).collect();
    let pub_grants: Vec<Pattern> = (0..rng.gen_range(0..3)).map(|_| pattern(&mut rng)).collect();
    let watched = ClientId::new("watched");
    let rx = broker
        .register_client(watched.clone(), PermissionSet { publish_allow: pub_grants.clone(), subscribe_allow: grants.clone() })
        .unwrap();
    for _ in 0..6 {
        let _ = broker.subscribe(&watched, pattern(&mut rng));
    }
    let observer = ClientId::new("observer");
    let obs_rx = broker.register_client(observer.clone(), PermissionSet::allow_all()).unwrap();
    broker.subscribe(&observer, "#".parse().unwrap()).unwrap();
    let open = ClientId::new("open");
    broker.register_client(open.clone(), PermissionSet::allow_all()).unwrap();

    let mut denied_deliveries = 0;
    let mut denied_topics = BTreeSet::new();
    for _ in 0..40 {
        let t: Topic = topic(&mut rng).parse().unwrap();
        let _ = broker.publish(&open, t.clone(), json!(null));
        let before = broker.stats();
        match broker.publish(&watched, t.clone(), json!("w")) {
            Ok(_) => {}
            Err(_) => {
                denied_topics.insert(t.to_string());
                if broker.stats().delivered != before.delivered {
                    denied_deliveries += 1;
                }
            }
        }
    }
    std::thread::sleep(Duration::from_millis(1));
    let got: Vec<_> = rx.try_iter().collect();
    let outside = got.iter().filter(|d| !grants.iter().any(|g| topic_matches(g, &d.message.topic))).count();
    denied_deliveries += obs_rx
        .try_iter()
        .filter(|d| d.message.sender == watched && denied_topics.contains(&d.message.topic.to_string()))
        .count();
    PermissionOutcome { outside, leaked: denied_deliveries, received: got.len(), denied: denied_topics.len() }
}
