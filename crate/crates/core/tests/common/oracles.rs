//! Brute-force oracles shared by the property and acceptance targets.

use std::collections::BTreeSet;

use ledgerci::ordering::EndorsementPolicy;
use ledgerci::vulnscan::{CpeMatch, CpeName, CveEntry, Dependency, ScanReport, Severity};
use proptest::prelude::*;

pub const ORGS: [&str; 5] = ["A", "B", "C", "D", "E"];

pub fn policy_tree(orgs: usize) -> impl Strategy<Value = EndorsementPolicy> {
    let leaf = (0..orgs).prop_map(|i| EndorsementPolicy::org(ORGS[i]));
    leaf.prop_recursive(3, 64, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(EndorsementPolicy::And),
            prop::collection::vec(inner.clone(), 1..4).prop_map(EndorsementPolicy::Or),
            prop::collection::vec(inner, 1..4)
                .prop_flat_map(|c| (1..=c.len(), Just(c)))
                .prop_map(|(k, c)| EndorsementPolicy::OutOf(k, c)),
        ]
    })
}

/// Set of satisfying org subsets as bitmasks, built bottom-up.
pub fn satisfying_masks(p: &EndorsementPolicy, orgs: usize) -> BTreeSet<u32> {
    let all = 0..(1u32 << orgs);
    match p {
        EndorsementPolicy::Org(name) => {
            let bit = ORGS.iter().position(|o| o == name).unwrap();
            all.filter(|m| m & (1 << bit) != 0).collect()
        }
        EndorsementPolicy::And(c) => c
            .iter()
            .map(|x| satisfying_masks(x, orgs))
            .reduce(|a, b| a.intersection(&b).copied().collect())
            .unwrap(),
        EndorsementPolicy::Or(c) => c.iter().flat_map(|x| satisfying_masks(x, orgs)).collect(),
        EndorsementPolicy::OutOf(k, c) => {
            let sets: Vec<_> = c.iter().map(|x| satisfying_masks(x, orgs)).collect();
            all.filter(|m| sets.iter().filter(|s| s.contains(m)).count() >= *k)
                .collect()
        }
    }
}

pub type Ver = (u8, u8, u8);

pub fn ver_text(v: Ver) -> String {
    format!("{}.{}.{}", v.0, v.1, v.2)
}

#[derive(Clone, Debug)]
pub struct Bounds {
    pub start: Option<(Ver, bool)>,
    pub end: Option<(Ver, bool)>,
}

pub type FeedEntry = (usize, Vec<(usize, Option<Ver>, Bounds)>);

#[derive(Clone, Debug)]
pub struct Case {
    pub feed: Vec<FeedEntry>,
    pub deps: Vec<(usize, Ver)>,
}

pub const PRODUCTS: [(&str, &str); 6] = [
    ("apache", "log4j"),
    ("apache", "commons-text"),
    ("fasterxml", "jackson-databind"),
    ("google", "guava"),
    ("openssl", "openssl"),
    ("zlib", "zlib"),
];

pub fn ver() -> impl Strategy<Value = Ver> {
    (0u8..4, 0u8..4, 0u8..4)
}

pub fn bounds() -> impl Strategy<Value = Bounds> {
    (
        prop::option::of((ver(), any::<bool>())),
        prop::option::of((ver(), any::<bool>())),
    )
        .prop_map(|(start, end)| Bounds { start, end })
}

pub fn case(max_feed: usize, max_deps: usize) -> impl Strategy<Value = Case> {
    let matcher = (0..PRODUCTS.len(), prop::option::of(ver()), bounds());
    let entry = (0usize..=100, prop::collection::vec(matcher, 1..3));
    (
        prop::collection::vec(entry, 0..=max_feed),
        prop::collection::vec((0..PRODUCTS.len(), ver()), 0..=max_deps),
    )
        .prop_map(|(feed, deps)| Case { feed, deps })
}

pub fn build(case: &Case) -> (Vec<CveEntry>, Vec<Dependency>) {
    let feed = case
        .feed
        .iter()
        .enumerate()
        .map(|(i, (score, ms))| CveEntry {
            id: format!("CVE-2024-{:05}", 10000 + i),
            description: String::new(),
            base_score: *score as u8,
            severity: Severity::for_score(*score as u8),
            matches: ms
                .iter()
                .map(|(p, version, b)| {
                    let (vendor, product) = PRODUCTS[*p];
                    let v = version.map(ver_text).unwrap_or_else(|| "*".into());
                    let cpe: CpeName = format!("cpe:2.3:a:{vendor}:{product}:{v}:*:*:*:*:*:*:*")
                        .parse()
                        .unwrap();
                    let mut m = CpeMatch::for_cpe(cpe);
                    match b.start {
                        Some((v, true)) => m.version_start_including = Some(ver_text(v)),
                        Some((v, false)) => m.version_start_excluding = Some(ver_text(v)),
                        None => {}
                    }
                    match b.end {
                        Some((v, true)) => m.version_end_including = Some(ver_text(v)),
                        Some((v, false)) => m.version_end_excluding = Some(ver_text(v)),
                        None => {}
                    }
                    m
                })
                .collect(),
        })
        .collect();
    let deps = case
        .deps
        .iter()
        .map(|(p, v)| {
            let (vendor, product) = PRODUCTS[*p];
            Dependency::new(vendor, product, &ver_text(*v), "https://repo.example/x")
        })
        .collect();
    (feed, deps)
}

/// Double loop over tuples, independent of the scanner's version parser.
pub fn oracle(case: &Case) -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    for (p, v) in &case.deps {
        for (i, (_, ms)) in case.feed.iter().enumerate() {
            let hit = ms.iter().any(|(mp, exact, b)| {
                if mp != p {
                    return false;
                }
                if b.start.is_none() && b.end.is_none() {
                    return exact.is_none_or(|e| e == *v);
                }
                let lo = b.start.is_none_or(|(s, inc)| if inc { *v >= s } else { *v > s });
                let hi = b.end.is_none_or(|(e, inc)| if inc { *v <= e } else { *v < e });
                lo && hi
            });
            if hit {
                let (vendor, product) = PRODUCTS[*p];
                out.push((
                    format!("{vendor}:{product}:{}", ver_text(*v)),
                    format!("CVE-2024-{:05}", 10000 + i),
                    String::new(),
                ));
            }
        }
    }
    out.sort();
    out
}

pub fn found(report: &ScanReport) -> Vec<(String, String, String)> {
    let mut out: Vec<_> = report
        .findings
        .iter()
        .map(|f| {
            let d = &f.dependency;
            (
                format!("{}:{}:{}", d.vendor, d.product, d.version),
                f.cve_id.clone(),
                String::new(),
            )
        })
        .collect();
    out.sort();
    out
}
