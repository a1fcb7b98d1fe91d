mod common;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use common::oracles::{build, case, found, oracle, policy_tree, satisfying_masks, ver, ver_text, Case, ORGS};
use common::{committed_counts, counter_network, run_counter_batches, serial_replay};
use ledgerci::canonical::{canonical_decode, canonical_encode, from_canonical_slice};
use ledgerci::identity::{generate_org_materials, sign_payload, Msp, Role};
use ledgerci::ordering::{evaluate_policy, NetworkConfig};
use ledgerci::vulnscan::{compare_versions, scan_manifest, SourceMode, Verdict};
use proptest::prelude::*;
use serde_json::Value;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn policy_matches_subset_enumeration(
        (orgs, p) in (1usize..=5).prop_flat_map(|n| (Just(n), policy_tree(n)))
    ) {
        prop_assert!(p.check().is_ok());
        prop_assert!(p.depth() <= 3);
        let masks = satisfying_masks(&p, orgs);
        for m in 0..(1u32 << orgs) {
            let set: BTreeSet<&str> = (0..orgs).filter(|i| m & (1 << i) != 0).map(|i| ORGS[i]).collect();
            prop_assert_eq!(evaluate_policy(&p, &set), masks.contains(&m), "{} on {:?}", p, set);
        }
    }
}

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::from),
        "\\PC{0,12}".prop_map(Value::String),
    ];
    leaf.prop_recursive(4, 48, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(Value::Array),
            prop::collection::btree_map("\\PC{0,6}", inner, 0..6).prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn canonical_round_trip(v in json_value()) {
        let bytes = canonical_encode(&v).unwrap();
        let back = canonical_decode(&bytes).unwrap();
        prop_assert_eq!(&back, &v);
        prop_assert_eq!(canonical_encode(&back).unwrap(), bytes.clone());
        let strict: Value = from_canonical_slice(&bytes).unwrap();
        prop_assert_eq!(strict, v);
    }

    #[test]
    fn pretty_printed_input_is_not_canonical(v in json_value()) {
        let pretty = serde_json::to_vec_pretty(&v).unwrap();
        let canonical = canonical_encode(&v).unwrap();
        prop_assume!(pretty != canonical);
        prop_assert!(from_canonical_slice::<Value>(&pretty).is_err());
    }
}

fn msp_fixture() -> (Msp, Vec<ledgerci::identity::OrgMaterials>) {
    let orgs: Vec<_> = ["Org1", "Org2"]
        .iter()
        .map(|o| generate_org_materials(o, 1, 1, false, &[3; 32]).unwrap())
        .collect();
    (Msp::from_materials(&orgs), orgs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn foreign_keys_never_verify(secret in any::<[u8; 32]>(), payload in prop::collection::vec(any::<u8>(), 0..64)) {
        let (msp, orgs) = msp_fixture();
        let forger = ed25519_dalek::SigningKey::from_bytes(&secret);
        for m in &orgs {
            for cert in &m.certificates {
                let sig = sign_payload(&forger, &payload);
                if forger.verifying_key().to_bytes() == cert.identity.public_key {
                    continue;
                }
                prop_assert!(msp.verify(&cert.key_id(), &payload, &sig).is_err());
            }
        }
    }

    #[test]
    fn genuine_signatures_bind_payload(payload in prop::collection::vec(any::<u8>(), 1..64), flip in any::<usize>()) {
        let (msp, orgs) = msp_fixture();
        let cert = orgs[1].by_role(Role::Peer).next().unwrap();
        let sig = orgs[1].sign(&cert.key_id(), &payload).unwrap();
        prop_assert!(msp.verify(&cert.key_id(), &payload, &sig).is_ok());
        let mut altered = payload.clone();
        altered[flip % payload.len()] ^= 1;
        prop_assert!(msp.verify(&cert.key_id(), &altered, &sig).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn committed_state_is_serial(
        batches in prop::collection::vec(prop::collection::vec(0u8..5, 1..6), 1..12)
    ) {
        let mut net = counter_network(NetworkConfig::default());
        let total: usize = batches.iter().map(Vec::len).sum();
        let valid = run_counter_batches(&mut net, &batches);
        prop_assert!(valid >= 1 && valid <= total);
        prop_assert_eq!(committed_counts(&net), serial_replay(&net));
        prop_assert!(net.converged());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scanner_agrees_with_double_loop(c in case(100, 300)) {
        let (feed, deps) = build(&c);
        let report = scan_manifest(&deps, &feed, 70, &["https://repo.example/"], SourceMode::Strict).unwrap();
        prop_assert_eq!(found(&report), oracle(&c));
        prop_assert!(report.hash_is_consistent());
        let want = report.findings.iter().map(|f| f.base_score).max().unwrap_or(0);
        prop_assert_eq!(report.max_score, want);
        prop_assert_eq!(report.verdict == Verdict::Halt, want >= 70);
    }

    #[test]
    fn scan_is_order_invariant(c in case(20, 40), rot in any::<usize>()) {
        let (mut feed, mut deps) = build(&c);
        let a = scan_manifest(&deps, &feed, 70, &[] as &[&str], SourceMode::Permissive).unwrap();
        if !deps.is_empty() { let n = rot % deps.len(); deps.rotate_left(n); }
        deps.reverse();
        feed.reverse();
        let b = scan_manifest(&deps, &feed, 70, &[] as &[&str], SourceMode::Permissive).unwrap();
        prop_assert_eq!(a.report_hash, b.report_hash);
        prop_assert_eq!(a.to_canonical_bytes(), b.to_canonical_bytes());
    }

    #[test]
    fn more_feed_never_lowers_score(c in case(20, 40), extra in case(10, 0), t in 0u8..=100) {
        let (feed, deps) = build(&c);
        let base = scan_manifest(&deps, &feed, t, &[] as &[&str], SourceMode::Permissive).unwrap();
        let (mut bigger, _) = build(&Case { feed: [c.feed.clone(), extra.feed].concat(), deps: vec![] });
        bigger.truncate(feed.len() + 10);
        let grown = scan_manifest(&deps, &bigger, t, &[] as &[&str], SourceMode::Permissive).unwrap();
        prop_assert!(grown.max_score >= base.max_score);
        prop_assert!(grown.findings.len() >= base.findings.len());
        // lowering the threshold can only turn Pass into Halt
        if t > 0 {
            let stricter = scan_manifest(&deps, &feed, t - 1, &[] as &[&str], SourceMode::Permissive).unwrap();
            prop_assert!(!(base.verdict == Verdict::Halt && stricter.verdict == Verdict::Pass));
        }
    }

    #[test]
    fn tampered_report_fails_hash(c in case(10, 20), bump in 1u8..5) {
        let (feed, deps) = build(&c);
        let mut r = scan_manifest(&deps, &feed, 70, &[] as &[&str], SourceMode::Permissive).unwrap();
        r.threshold = r.threshold.wrapping_add(bump);
        prop_assert!(!r.hash_is_consistent());
    }
}

fn version_text() -> impl Strategy<Value = String> {
    "[0-9a-c]{0,3}([.-][0-9a-c]{0,3}){0,3}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3000))]

    #[test]
    fn version_order_is_total(a in version_text(), b in version_text(), c in version_text()) {
        let ab = compare_versions(&a, &b);
        prop_assert_eq!(ab, compare_versions(&b, &a).reverse());
        prop_assert_eq!(compare_versions(&a, &a), Ordering::Equal);
        if ab != Ordering::Greater && compare_versions(&b, &c) != Ordering::Greater {
            prop_assert_ne!(compare_versions(&a, &c), Ordering::Greater, "{} {} {}", a, b, c);
        }
    }

    #[test]
    fn numeric_versions_order_like_tuples(a in ver(), b in ver()) {
        prop_assert_eq!(compare_versions(&ver_text(a), &ver_text(b)), a.cmp(&b));
    }
}

#[test]
fn equal_versions_are_interchangeable() {
    // equality classes must agree with every third value
    let samples = ["1.0", "1", "1.0.0", "01.0", "1.0-0", "1.a", "1-a", "2", "1.0.1"];
    let mut classes: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (i, a) in samples.iter().enumerate() {
        let rep = samples[..i]
            .iter()
            .position(|b| compare_versions(a, b) == Ordering::Equal)
            .unwrap_or(i);
        classes.entry(rep).or_default().push(a);
    }
    for members in classes.values() {
        for x in members {
            for y in members {
                for z in samples {
                    assert_eq!(compare_versions(x, z), compare_versions(y, z), "{x} {y} {z}");
                }
            }
        }
    }
}
