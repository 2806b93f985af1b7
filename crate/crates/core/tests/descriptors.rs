// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use proptest::prelude::*;
use son_core::descriptors::*;
use son_core::Resources;

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/chain3").join(name);
    std::fs::read_to_string(p).unwrap()
}

fn vnfds() -> Vec<FunctionDescriptor> {
    ["vnf-fw.yml", "vnf-ids.yml", "vnf-nat.yml"]
        .iter()
        .map(|f| match parse_descriptor(&fixture(f)).unwrap() {
            Descriptor::Function(f) => f,
            _ => panic!("expected a function descriptor"),
        })
        .collect()
}

fn nsd(name: &str) -> ServiceDescriptor {
    match parse_descriptor(&fixture(name)).unwrap() {
        Descriptor::Service(s) => s,
        _ => panic!("expected a service descriptor"),
    }
}

#[test]
fn four_endpoint_graph() {
    let s = nsd("nsd-edges.yml");
    assert_eq!(s.function_refs.len(), 3);
    // Counted by hand in the fixture: ingress, fw:in, nat:out, egress.
    assert_eq!(s.forwarding_graph.len(), 4);
    assert!(s.extra.contains_key("x_marketing_name"));
}

#[test]
fn consistent_chain_has_no_findings() {
    let report = validate_service(&nsd("nsd-chain.yml"), &vnfds());
    assert!(report.is_clean(), "{:?}", report.findings);
}

#[test]
fn missing_vnfd_is_one_error() {
    let mut fns = vnfds();
    fns.retain(|f| f.identity.name != "ids");
    let report = validate_service(&nsd("nsd-chain.yml"), &fns);
    assert_eq!(report.findings.len(), 1);
    assert_eq!(report.findings[0].severity, Severity::Error);
    assert!(report.findings[0].message.contains("unresolved function reference"));
}

#[test]
fn undeclared_cp_is_one_error() {
    let mut s = nsd("nsd-chain.yml");
    s.forwarding_graph[0] = "fw:cpX".parse().unwrap();
    let report = validate_service(&s, &vnfds());
    assert_eq!(report.findings.len(), 1);
    assert!(report.has_errors());
    assert!(report.findings[0].message.contains("fw:cpX"));
}

#[test]
fn version_mismatch_does_not_resolve() {
    let mut fns = vnfds();
    fns[0].identity.version = Version::new(0, 2, 1);
    let report = validate_service(&nsd("nsd-chain.yml"), &fns);
    assert_eq!(report.errors().count(), 1);
}

#[test]
fn chain_of_three_functions() {
    let chain = resolve_chain(&nsd("nsd-chain.yml"), &vnfds()).unwrap();
    let walked: Vec<String> = chain
        .iter()
        .map(|h| match h {
            ChainHop::Function { vnf, cp, .. } => format!("{vnf}:{cp}"),
            ChainHop::Boundary { .. } => panic!("no boundary hops in this fixture"),
        })
        .collect();
    assert_eq!(walked, ["fw:in", "fw:out", "ids:in", "ids:out", "nat:in", "nat:out"]);
    let ChainHop::Function { identity, .. } = &chain[2] else { unreachable!() };
    assert_eq!(identity.name, "ids");
}

#[test]
fn single_function_chain() {
    let mut s = nsd("nsd-chain.yml");
    s.forwarding_graph = vec!["fw:in".parse().unwrap(), "fw:out".parse().unwrap()];
    assert_eq!(resolve_chain(&s, &vnfds()).unwrap().len(), 2);
}

#[test]
fn boundary_hops_are_flagged() {
    let chain = resolve_chain(&nsd("nsd-edges.yml"), &vnfds()).unwrap();
    assert_eq!(chain[0], ChainHop::Boundary { cp: "ingress".into(), role: EndpointRole::Ingress });
    assert_eq!(chain[3], ChainHop::Boundary { cp: "egress".into(), role: EndpointRole::Egress });
}

#[test]
fn unresolved_chain_endpoint() {
    let fns: Vec<_> = vnfds().into_iter().filter(|f| f.identity.name != "nat").collect();
    let err = resolve_chain(&nsd("nsd-chain.yml"), &fns).unwrap_err();
    assert!(matches!(err, DescriptorError::UnresolvedEndpoint(e) if e == "nat:in"));
}

#[test]
fn fixtures_round_trip() {
    for f in ["vnf-fw.yml", "vnf-ids.yml", "vnf-nat.yml", "nsd-chain.yml", "nsd-edges.yml"] {
        let d = parse_descriptor(&fixture(f)).unwrap();
        assert_eq!(parse_descriptor(&serialize_descriptor(&d)).unwrap(), d, "{f}");
    }
}

const NAMES: [&str; 4] = ["a", "b", "c", "d"];

fn identity(n: &str) -> Identity {
    Identity::new("v", n, Version::new(1, 0, 0))
}

fn function(n: &str, cps: &[&str], cores: u64) -> FunctionDescriptor {
    FunctionDescriptor {
        identity: identity(n),
        deployment_units: vec![DeploymentUnit {
            image_ref: format!("artifacts/{n}.img"),
            resources: Resources::new(cores, 256, 0),
        }],
        connection_points: cps.iter().map(|c| c.to_string()).collect(),
        monitoring: vec![],
        fsm_refs: vec![],
        extra: Default::default(),
    }
}

fn arb_function() -> impl Strategy<Value = FunctionDescriptor> {
    (0..4usize, proptest::sample::subsequence(vec!["in", "out", "mgmt"], 1..=3), 1..64u64)
        .prop_map(|(n, cps, cores)| function(NAMES[n], &cps, cores))
}

fn arb_service() -> impl Strategy<Value = ServiceDescriptor> {
    let endpoint = (0..5usize, 0..4usize).prop_map(|(f, c)| {
        let cp = ["in", "out", "mgmt", "bogus"][c];
        if f == 4 {
            Endpoint::Service("ingress".into())
        } else {
            Endpoint::Function { vnf: NAMES[f].to_string(), cp: cp.to_string() }
        }
    });
    (
        proptest::sample::subsequence(NAMES.to_vec(), 1..=4),
        proptest::collection::btree_set(endpoint, 0..8),
        any::<bool>(),
    )
        .prop_map(|(ids, graph, with_ssm)| ServiceDescriptor {
            identity: identity("svc"),
            function_refs: ids
                .iter()
                .map(|i| FunctionRef { id: i.to_string(), identity: identity(i) })
                .collect(),
            connection_points: vec!["ingress".into()],
            virtual_links: vec![],
            forwarding_graph: graph.into_iter().collect(),
            monitoring: vec![],
            ssm_refs: if with_ssm {
                vec![ManagerRef {
                    kind: ManagerKind::Ssm,
                    executive: ExecutiveKind::Placement,
                    program_artifact: "ssm/place.ssm".into(),
                }]
            } else {
                vec![]
            },
            placement_requirements: None,
            delegate_to: vec![],
            extra: Default::default(),
        })
}

proptest! {
    #[test]
    fn adding_a_vnfd_never_adds_errors(
        s in arb_service(),
        fns in proptest::collection::vec(arb_function(), 0..4),
        extra in arb_function(),
    ) {
        let before = validate_service(&s, &fns);
        let mut more = fns.clone();
        more.push(extra);
        let after = validate_service(&s, &more);
        prop_assert!(after.errors().count() <= before.errors().count());
        for f in after.errors() {
            prop_assert!(before.errors().any(|b| b.subject == f.subject), "new subject {}", f.subject);
        }
    }

    #[test]
    fn chain_length_matches_graph(s in arb_service(), fns in proptest::collection::vec(arb_function(), 0..4)) {
        if !validate_service(&s, &fns).has_errors() {
            let chain = resolve_chain(&s, &fns).unwrap();
            prop_assert_eq!(chain.len(), s.forwarding_graph.len());
        }
    }

    #[test]
    fn generated_descriptors_round_trip(s in arb_service(), f in arb_function()) {
        let s = s.clone();
        // Only parseable services are round-tripped; the generator also emits invalid graphs.
        let text = serialize_descriptor(&Descriptor::Service(s.clone()));
        if let Ok(parsed) = parse_descriptor(&text) {
            prop_assert_eq!(parse_descriptor(&serialize_descriptor(&parsed)).unwrap(), parsed.clone());
            prop_assert_eq!(parsed, Descriptor::Service(s));
        }
        let d = Descriptor::Function(f);
        prop_assert_eq!(parse_descriptor(&serialize_descriptor(&d)).unwrap(), d);
    }
}
