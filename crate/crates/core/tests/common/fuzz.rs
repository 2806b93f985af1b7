// SPDX-License-Identifier: Apache-2.0

//! Random strategy programs: grammar-driven generation plus textual
//! mutation, so that both accepted and rejected sources are common.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use son_core::descriptors::ExecutiveKind;

const PLACEMENT_ATTRS: [&str; 9] =
    ["cpu_free", "mem_free", "storage_free", "latency_ms", "req_cpu", "req_mem", "req_storage", "latency_ms[pop-b]", "bogus"];
const SCALING_ATTRS: [&str; 5] = ["replicas", "max_replicas", "cpu_load", "cpu_load[other]", "mem_load"];
const CMPS: [&str; 4] = ["<", "<=", ">", ">="];
const OPS: [&str; 4] = ["+", "-", "*", "/"];

fn number(rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(0..10).to_string(),
        1 => format!("{:.2}", rng.gen_range(0.0..2.0)),
        2 => "0".into(),
        _ => rng.gen_range(1..1000).to_string(),
    }
}

fn attr(rng: &mut ChaCha8Rng, kind: ExecutiveKind) -> String {
    match kind {
        ExecutiveKind::Placement => PLACEMENT_ATTRS.choose(rng).unwrap().to_string(),
        ExecutiveKind::Scaling => {
            if rng.gen_bool(0.4) {
                let m = ["cpu_load", "mem_load", "cpu_load[other]"].choose(rng).unwrap();
                format!("avg({m}, {})", [1, 30, 60, 600].choose(rng).unwrap())
            } else {
                SCALING_ATTRS.choose(rng).unwrap().to_string()
            }
        }
    }
}

pub fn expr(rng: &mut ChaCha8Rng, kind: ExecutiveKind, depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.3) {
        return if rng.gen_bool(0.5) { number(rng) } else { attr(rng, kind) };
    }
    let d = depth - 1;
    match rng.gen_range(0..6) {
        0 => format!("max({}, {})", expr(rng, kind, d), expr(rng, kind, d)),
        1 => format!("min({}, {})", expr(rng, kind, d), expr(rng, kind, d)),
        2 => format!("({})", expr(rng, kind, d)),
        3 => format!(
            "if {} {} {} then {} else {}",
            expr(rng, kind, d),
            CMPS.choose(rng).unwrap(),
            expr(rng, kind, d),
            expr(rng, kind, d),
            expr(rng, kind, d)
        ),
        4 => format!("-{}", expr(rng, kind, d)),
        _ => format!("{} {} {}", expr(rng, kind, d), OPS.choose(rng).unwrap(), expr(rng, kind, d)),
    }
}

/// A grammar-conforming program. It may still be rejected at onboarding
/// (unknown names, type errors, non-finite results on the probe).
pub fn program(rng: &mut ChaCha8Rng, kind: ExecutiveKind) -> String {
    match kind {
        ExecutiveKind::Placement => format!("score = {}", expr(rng, kind, 4)),
        ExecutiveKind::Scaling => {
            let rules: Vec<String> = (0..rng.gen_range(1..4))
                .map(|_| {
                    let action = match rng.gen_range(0..4) {
                        0 => format!("replicas + {}", rng.gen_range(1..3)),
                        1 => format!("replicas - {}", rng.gen_range(1..3)),
                        2 => format!("replicas = {}", expr(rng, kind, 2)),
                        _ => "noop".into(),
                    };
                    format!("when {} {} {} then {action}", expr(rng, kind, 3), CMPS.choose(rng).unwrap(), expr(rng, kind, 3))
                })
                .collect();
            rules.join("\n")
        }
    }
}

/// Nest `depth` parentheses around a literal.
pub fn nested(depth: usize) -> String {
    format!("score = {}1{}", "(".repeat(depth), ")".repeat(depth))
}

/// Delete, insert or replace a few characters, or truncate.
pub fn mutate(rng: &mut ChaCha8Rng, src: &str) -> String {
    let mut chars: Vec<char> = src.chars().collect();
    let noise = ['(', ')', ',', '=', '#', '.', 'x', '9', ' ', '\n', '[', '@'];
    for _ in 0..rng.gen_range(1..4) {
        if chars.is_empty() {
            break;
        }
        let at = rng.gen_range(0..chars.len());
        match rng.gen_range(0..4) {
            0 => {
                chars.remove(at);
            }
            1 => chars.insert(at, *noise.choose(rng).unwrap()),
            2 => chars[at] = *noise.choose(rng).unwrap(),
            _ => chars.truncate(at),
        }
    }
    chars.into_iter().collect()
}

/// The `i`-th fuzz case: kind and source.
pub fn case(rng: &mut ChaCha8Rng, i: usize) -> (ExecutiveKind, String) {
    let kind = if rng.gen_bool(0.5) { ExecutiveKind::Placement } else { ExecutiveKind::Scaling };
    let src = match i % 10 {
        0..=5 => program(rng, kind),
        6..=8 => {
            let base = program(rng, kind);
            mutate(rng, &base)
        }
        _ => return (ExecutiveKind::Placement, nested(rng.gen_range(1..200))),
    };
    (kind, src)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SafetyOutcome {
    pub accepted: usize,
    pub rejected: usize,
    /// Sources whose two onboarding attempts disagreed.
    pub nondeterministic: usize,
    /// Rejections whose position lies outside the source.
    pub unpositioned: usize,
    /// Evaluations of accepted programs that ran out of budget or time.
    pub overran: usize,
    /// Messages sent by a sandbox outside its namespace.
    pub outside_namespace: usize,
    pub evaluations: usize,
}

fn position_in_source(src: &str, line: u32, column: u32) -> bool {
    let lines: Vec<&str> = src.split('\n').collect();
    line >= 1
        && column >= 1
        && (line as usize) <= lines.len()
        && (column as usize) <= lines[line as usize - 1].chars().count() + 1
}

/// Onboard `n` fuzzed programs; evaluate each accepted one through its
/// sandbox on a few random environments while an observer records every
/// message on the broker.
pub fn ssm_safety_run(seed: u64, n: usize) -> SafetyOutcome {
    use rand::SeedableRng;
    use son_core::broker::{Broker, ClientId, PermissionSet};
    use son_core::descriptors::{Identity, Version};
    use son_core::executive::{call_sandbox, onboard_source, sandbox_client, SandboxAnswer, SandboxCall, SsmRuntime};
    use son_core::ssm::ScalingEnvironment;
    use std::time::{Duration, Instant};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let broker = Broker::new();
    let observer = ClientId::new("observer");
    let seen = broker.register_client(observer.clone(), PermissionSet::allow_all()).unwrap();
    broker.subscribe(&observer, "#".parse().unwrap()).unwrap();
    let caller = ClientId::new("executive");
    broker.register_client(caller.clone(), PermissionSet::allow_all()).unwrap();
    let runtime = SsmRuntime::new(broker.clone());
    let mut out = SafetyOutcome::default();
    let mut namespaces = std::collections::BTreeMap::new();

    for i in 0..n {
        let (kind, src) = case(&mut rng, i);
        let first = onboard_source(&src, kind);
        let second = onboard_source(&src, kind);
        let program = match (first, second) {
            (Ok(a), Ok(b)) => {
                if a.ast != b.ast {
                    out.nondeterministic += 1;
                }
                a
            }
            (Err(a), Err(b)) => {
                out.rejected += 1;
                if a != b {
                    out.nondeterministic += 1;
                }
                let at = a.error().position();
                if !position_in_source(&src, at.line, at.column) {
                    out.unpositioned += 1;
                }
                continue;
            }
            _ => {
                out.nondeterministic += 1;
                continue;
            }
        };
        out.accepted += 1;
        let service = Identity::new("org.fuzz", format!("svc-{i}"), Version::new(1, 0, 0));
        let handle = runtime.install(program, &service, None).expect("onboarded program installs");
        namespaces.insert(sandbox_client(&handle), handle.namespace());
        for _ in 0..3 {
            let call = match kind {
                ExecutiveKind::Placement => {
                    let cores: Vec<u64> = (0..3).map(|_| rng.gen_range(0..9)).collect();
                    let lat: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..50.0)).collect();
                    SandboxCall::Pick { view: super::placement::view(&cores, &lat), request: super::placement::res(rng.gen_range(1..4)) }
                }
                ExecutiveKind::Scaling => {
                    let window = |rng: &mut ChaCha8Rng| -> Vec<(f64, f64)> {
                        (0..rng.gen_range(0..15)).map(|k| (k as f64 * 5.0, rng.gen_range(0.0..1.0))).collect()
                    };
                    let mut windows = std::collections::BTreeMap::new();
                    for m in ["cpu_load", "mem_load", "cpu_load[other]"] {
                        if rng.gen_bool(0.8) {
                            windows.insert(m.to_string(), window(&mut rng));
                        }
                    }
                    SandboxCall::Decide {
                        env: ScalingEnvironment { now: 70.0, windows, replicas: rng.gen_range(1..5), max_replicas: 4 },
                    }
                }
            };
            let started = Instant::now();
            let answer = call_sandbox(&broker, &caller, &handle, &call, Duration::from_secs(5));
            out.evaluations += 1;
            let over = match &answer {
                SandboxAnswer::Error { message } => message.contains("budget") || message.contains("timed out"),
                _ => false,
            };
            if over || started.elapsed() > Duration::from_secs(1) {
                out.overran += 1;
            }
        }
    }
    runtime.shutdown();
    for d in seen.try_iter() {
        if let Some(ns) = namespaces.get(&d.message.sender) {
            let t = d.message.topic.to_string();
            if !(t == *ns || t.starts_with(&format!("{ns}."))) {
                out.outside_namespace += 1;
            }
        }
    }
    out
}
