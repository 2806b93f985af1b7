// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::fuzz;
use common::placement::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use son_core::descriptors::ExecutiveKind;
use son_core::executive::{evaluate_placement, filter_topology, onboard_source, pick_pop, PlacementError, PlacementStrategy, ViewPolicy};
use son_core::ssm::parse_ssm;
use son_core::Resources;

#[test]
fn default_placement_equals_first_fit_oracle_exhaustively() {
    let mut cases = 0;
    let mut infeasible = 0;
    for pops in cap_lists(4) {
        let v = view(&pops, &[]);
        for vnfs in cap_lists(3) {
            cases += 1;
            let got = evaluate_placement(PlacementStrategy::Default, &requests(&vnfs), &v);
            match first_fit_oracle(&pops, &vnfs) {
                Some(a) => assert_eq!(got, Ok(as_map(&a)), "pops {pops:?} vnfs {vnfs:?}"),
                None => {
                    infeasible += 1;
                    assert!(matches!(got, Err(PlacementError::NoFeasiblePoP(_))), "pops {pops:?} vnfs {vnfs:?}: {got:?}");
                }
            }
        }
    }
    assert_eq!(cases, 340 * 84);
    assert!(infeasible > 0 && infeasible < cases);
}

#[test]
fn latency_score_picks_the_closest_feasible_pop() {
    let prog = onboard_source("score = -latency_ms", ExecutiveKind::Placement).unwrap();
    let v = view(&[8, 8, 8], &[10.0, 5.0, 20.0]);
    assert_eq!(pick_pop(PlacementStrategy::Ssm(&prog), &res(1), &v).unwrap().as_deref(), Some("pop-b"));

    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let n = rng.gen_range(1..=4);
        let cores: Vec<u64> = (0..n).map(|_| CAPS[rng.gen_range(0..4)]).collect();
        let lat: Vec<f64> = (0..n).map(|_| rng.gen_range(0..40) as f64).collect();
        let need = CAPS[rng.gen_range(0..4)];
        let got = pick_pop(PlacementStrategy::Ssm(&prog), &res(need), &view(&cores, &lat)).unwrap();
        assert_eq!(got, latency_argmax(&cores, &lat, need).map(pop_id), "{cores:?} {lat:?} need {need}");
    }
}

#[test]
fn constant_score_takes_smallest_feasible_id() {
    let prog = onboard_source("score = 0", ExecutiveKind::Placement).unwrap();
    let v = view(&[1, 4, 4], &[]);
    assert_eq!(pick_pop(PlacementStrategy::Ssm(&prog), &res(2), &v).unwrap().as_deref(), Some("pop-b"));
}

#[test]
fn fuzzed_programs_are_safe() {
    let o = fuzz::ssm_safety_run(11, 200);
    assert!(o.accepted > 20 && o.rejected > 20, "{o:?}");
    assert_eq!((o.nondeterministic, o.unpositioned, o.overran, o.outside_namespace), (0, 0, 0, 0), "{o:?}");
}

fn accepted_placement(seed: u64) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src = fuzz::program(&mut rng, ExecutiveKind::Placement);
    onboard_source(&src, ExecutiveKind::Placement).ok().map(|_| src)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn positive_scaling_keeps_the_argmax(
        seed in any::<u64>(),
        k in -4i32..=4,
        cores in proptest::collection::vec(0u64..9, 1..5),
        lat in proptest::collection::vec(0.0f64..50.0, 4),
        need in 1u64..4,
    ) {
        let Some(src) = accepted_placement(seed) else { return Ok(()) };
        let expr = src.trim_start_matches("score = ");
        let c = 2f64.powi(k);
        let scaled = format!("score = ({expr}) * {c}");
        let a = parse_ssm(&src, ExecutiveKind::Placement).unwrap();
        let b = parse_ssm(&scaled, ExecutiveKind::Placement).unwrap();
        let v = view(&cores, &lat);
        match (pick_pop(PlacementStrategy::Ssm(&a), &res(need), &v), pick_pop(PlacementStrategy::Ssm(&b), &res(need), &v)) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
            // Scaling can overflow a finite score; nothing to compare then.
            _ => {}
        }
    }

    #[test]
    fn placements_on_a_view_fit_the_true_topology(
        cores in proptest::collection::vec(0u64..17, 1..5),
        allow in proptest::collection::btree_set(0usize..4, 0..4),
        step in 1u64..6,
        vnfs in proptest::collection::vec(1u64..6, 1..4),
        use_ssm in any::<bool>(),
    ) {
        let truth = view(&cores, &[]);
        let policy = ViewPolicy {
            allow: (!allow.is_empty()).then(|| allow.iter().map(|i| pop_id(*i)).collect::<BTreeSet<_>>()),
            step: Resources::new(step, 1, 1),
        };
        let filtered = filter_topology(&truth, &policy);
        prop_assert!(filtered.pops.iter().all(|p| truth.pop(&p.id).map_or(false, |t| p.free.fits_within(&t.free))));
        let prog = onboard_source("score = cpu_free", ExecutiveKind::Placement).unwrap();
        let strategy = if use_ssm { PlacementStrategy::Ssm(&prog) } else { PlacementStrategy::Default };
        if let Ok(placement) = evaluate_placement(strategy, &requests(&vnfs), &filtered) {
            let mut used: BTreeMap<String, u64> = BTreeMap::new();
            for (vnf, pop) in &placement {
                let i: usize = vnf.trim_start_matches("vnf-").parse().unwrap();
                *used.entry(pop.clone()).or_default() += vnfs[i];
            }
            for (pop, u) in used {
                prop_assert!(u <= truth.pop(&pop).unwrap().free.cpu_cores);
            }
        }
    }

    #[test]
    fn printed_programs_reparse_to_the_same_tree(seed in any::<u64>(), scaling in any::<bool>()) {
        let kind = if scaling { ExecutiveKind::Scaling } else { ExecutiveKind::Placement };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = fuzz::program(&mut rng, kind);
        if let Ok(p) = parse_ssm(&src, kind) {
            let printed = p.to_string();
            let again = parse_ssm(&printed, kind).unwrap();
            prop_assert_eq!(again.ast, p.ast, "{}", printed);
        }
    }
}
