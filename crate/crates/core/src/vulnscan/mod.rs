//! Offline dependency scanner: CPE matching of manifest entries against a
//! local CVE feed, a severity gate and source verification.

mod cpe;
mod feed;
mod version;

pub use cpe::{parse_cpe, CpeError, CpeName, CpePart, WILDCARD};
pub use feed::{entry, load_feed, parse_feed, validate_feed, CpeMatch, CveEntry, Severity};
pub use version::compare_versions;

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{canonical_hash, to_canonical, Digest};

/// Default gate: CVSS 7.0, the floor of the High band.
pub const DEFAULT_THRESHOLD: u8 = 70;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScanError {
    #[error("feed invalid at {path}: {detail}")]
    FeedInvalid { path: String, detail: String },
    #[error("manifest invalid at {path}: {detail}")]
    ManifestInvalid { path: String, detail: String },
    #[error("threshold {0} outside 0..=100")]
    BadThreshold(u16),
    #[error("cannot read {path}: {detail}")]
    Io { path: String, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Halt,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "Pass",
            Verdict::Halt => "Halt",
        })
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Pass" => Ok(Verdict::Pass),
            "Halt" => Ok(Verdict::Halt),
            other => Err(format!("unknown verdict {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dependency {
    pub vendor: String,
    pub product: String,
    pub version: String,
    pub source_url: String,
    #[serde(default)]
    pub declared_in: String,
}

impl Dependency {
    pub fn new(vendor: &str, product: &str, version: &str, source_url: &str) -> Self {
        Dependency {
            vendor: vendor.to_string(),
            product: product.to_string(),
            version: version.to_string(),
            source_url: source_url.to_string(),
            declared_in: String::new(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    vendor: String,
    product: String,
    version: String,
    source_url: String,
}

/// Parse a `deps.json` manifest; every entry is tagged with `declared_in`.
pub fn parse_manifest(bytes: &[u8], declared_in: &str) -> Result<Vec<Dependency>, ScanError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let entries: Vec<ManifestEntry> = serde_path_to_error::deserialize(de).map_err(|e| ScanError::ManifestInvalid {
        path: e.path().to_string(),
        detail: e.into_inner().to_string(),
    })?;
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            for (field, value) in [("vendor", &e.vendor), ("product", &e.product), ("version", &e.version)] {
                if value.is_empty() {
                    return Err(ScanError::ManifestInvalid {
                        path: format!("[{i}].{field}"),
                        detail: "must be nonempty".into(),
                    });
                }
            }
            Ok(Dependency {
                vendor: e.vendor,
                product: e.product,
                version: e.version,
                source_url: e.source_url,
                declared_in: declared_in.to_string(),
            })
        })
        .collect()
}

pub fn load_manifest(path: &Path, declared_in: &str) -> Result<Vec<Dependency>, ScanError> {
    let bytes = std::fs::read(path).map_err(|e| ScanError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    parse_manifest(&bytes, declared_in)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceMode {
    /// Unverified sources halt the pipeline; an empty allowlist verifies
    /// nothing.
    #[default]
    Strict,
    /// Unverified sources are reported only; an empty allowlist verifies
    /// everything.
    Permissive,
}

impl FromStr for SourceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(SourceMode::Strict),
            "permissive" => Ok(SourceMode::Permissive),
            other => Err(format!("unknown source mode {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceStatus {
    Verified,
    Unverified,
}

pub fn check_source_allowlist<S: AsRef<str>>(dep: &Dependency, allowlist: &[S], mode: SourceMode) -> SourceStatus {
    if allowlist.is_empty() {
        return match mode {
            SourceMode::Strict => SourceStatus::Unverified,
            SourceMode::Permissive => SourceStatus::Verified,
        };
    }
    if allowlist.iter().any(|p| dep.source_url.starts_with(p.as_ref())) {
        SourceStatus::Verified
    } else {
        SourceStatus::Unverified
    }
}

/// Parse an allowlist file: one URL prefix per line; blank lines and lines
/// starting with `#` are skipped.
pub fn parse_allowlist(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MatchReason {
    /// The version satisfies the match's range bounds (or the CPE version
    /// is a wildcard).
    VersionMatch,
    /// No bounds; the version equals the CPE's concrete version.
    ExactMatch,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Finding {
    pub dependency: Dependency,
    pub cve_id: String,
    pub base_score: u8,
    pub reason: MatchReason,
}

/// Whether `m` hits `dep`, and why.
pub fn match_predicate(dep: &Dependency, m: &CpeMatch) -> Option<MatchReason> {
    if !m.cpe.names(&dep.vendor, &dep.product) {
        return None;
    }
    let v = dep.version.as_str();
    if m.has_bounds() {
        let ok = m
            .version_start_including
            .as_deref()
            .is_none_or(|b| compare_versions(v, b) != Ordering::Less)
            && m.version_start_excluding
                .as_deref()
                .is_none_or(|b| compare_versions(v, b) == Ordering::Greater)
            && m.version_end_including
                .as_deref()
                .is_none_or(|b| compare_versions(v, b) != Ordering::Greater)
            && m.version_end_excluding
                .as_deref()
                .is_none_or(|b| compare_versions(v, b) == Ordering::Less);
        return ok.then_some(MatchReason::VersionMatch);
    }
    if m.cpe.version_is_wildcard() {
        return Some(MatchReason::VersionMatch);
    }
    (compare_versions(v, &m.cpe.version) == Ordering::Equal).then_some(MatchReason::ExactMatch)
}

/// One finding per feed entry with at least one hitting match.
pub fn match_dependency(dep: &Dependency, feed: &[CveEntry]) -> Vec<Finding> {
    feed.iter()
        .filter_map(|entry| {
            let reason = entry.matches.iter().filter_map(|m| match_predicate(dep, m)).min()?;
            Some(Finding {
                dependency: dep.clone(),
                cve_id: entry.id.clone(),
                base_score: entry.base_score,
                reason,
            })
        })
        .collect()
}

/// Scan result. Findings and unverified sources are sorted, so the report
/// (and its hash) does not depend on manifest or feed order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanReport {
    pub findings: Vec<Finding>,
    pub unverified_sources: Vec<Dependency>,
    pub max_score: u8,
    pub threshold: u8,
    pub mode: SourceMode,
    pub verdict: Verdict,
    pub report_hash: Digest,
}

#[derive(Serialize)]
struct ReportBody<'a> {
    findings: &'a [Finding],
    unverified_sources: &'a [Dependency],
    max_score: u8,
    threshold: u8,
    mode: SourceMode,
    verdict: Verdict,
}

impl ScanReport {
    fn body(&self) -> ReportBody<'_> {
        ReportBody {
            findings: &self.findings,
            unverified_sources: &self.unverified_sources,
            max_score: self.max_score,
            threshold: self.threshold,
            mode: self.mode,
            verdict: self.verdict,
        }
    }

    pub fn compute_hash(&self) -> Digest {
        canonical_hash(&self.body()).expect("report encodes canonically")
    }

    pub fn hash_is_consistent(&self) -> bool {
        self.compute_hash() == self.report_hash
    }

    /// Unverified sources that count toward the gate.
    pub fn gating_unverified(&self) -> u32 {
        match self.mode {
            SourceMode::Strict => self.unverified_sources.len() as u32,
            SourceMode::Permissive => 0,
        }
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        to_canonical(self).expect("report encodes canonically")
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "verdict: {}\nmax score: {}.{} (threshold {}.{})\nmode: {:?}\n",
            self.verdict,
            self.max_score / 10,
            self.max_score % 10,
            self.threshold / 10,
            self.threshold % 10,
            self.mode
        ));
        out.push_str(&format!("findings: {}\n", self.findings.len()));
        for f in &self.findings {
            out.push_str(&format!(
                "  {} {}.{} {}:{}@{} ({:?}) in {}\n",
                f.cve_id,
                f.base_score / 10,
                f.base_score % 10,
                f.dependency.vendor,
                f.dependency.product,
                f.dependency.version,
                f.reason,
                f.dependency.declared_in
            ));
        }
        out.push_str(&format!("unverified sources: {}\n", self.unverified_sources.len()));
        for d in &self.unverified_sources {
            out.push_str(&format!(
                "  {}:{}@{} from {}\n",
                d.vendor, d.product, d.version, d.source_url
            ));
        }
        out.push_str(&format!("report hash: {}\n", self.report_hash));
        out
    }
}

pub fn verdict_for(max_score: u8, threshold: u8, gating_unverified: u32) -> Verdict {
    if max_score >= threshold || gating_unverified > 0 {
        Verdict::Halt
    } else {
        Verdict::Pass
    }
}

pub fn scan_manifest<S: AsRef<str> + Sync>(
    manifest: &[Dependency],
    feed: &[CveEntry],
    threshold: u8,
    allowlist: &[S],
    mode: SourceMode,
) -> Result<ScanReport, ScanError> {
    if threshold > 100 {
        return Err(ScanError::BadThreshold(threshold.into()));
    }
    validate_feed(feed)?;
    let mut findings: Vec<Finding> = manifest
        .par_iter()
        .flat_map_iter(|dep| match_dependency(dep, feed))
        .collect();
    findings.sort();
    let mut unverified_sources: Vec<Dependency> = manifest
        .iter()
        .filter(|d| check_source_allowlist(d, allowlist, mode) == SourceStatus::Unverified)
        .cloned()
        .collect();
    unverified_sources.sort();
    let max_score = findings.iter().map(|f| f.base_score).max().unwrap_or(0);
    let mut report = ScanReport {
        findings,
        unverified_sources,
        max_score,
        threshold,
        mode,
        verdict: Verdict::Pass,
        report_hash: Digest::ZERO,
    };
    report.verdict = verdict_for(max_score, threshold, report.gating_unverified());
    report.report_hash = report.compute_hash();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log4j_feed() -> Vec<CveEntry> {
        let mut e = entry("CVE-2021-44228", 100, "cpe:2.3:a:apache:log4j:*:*:*:*:*:*:*:*");
        e.matches[0].version_start_including = Some("2.0.0".into());
        e.matches[0].version_end_excluding = Some("2.15.0".into());
        vec![e]
    }

    const REGISTRY: &str = "https://registry.example/";

    #[test]
    fn bounds_are_respected() {
        let feed = log4j_feed();
        let hit = Dependency::new("apache", "log4j", "2.14.1", REGISTRY);
        assert_eq!(match_dependency(&hit, &feed).len(), 1);
        let fixed = Dependency::new("apache", "log4j", "2.15.0", REGISTRY);
        assert!(match_dependency(&fixed, &feed).is_empty());
        let other = Dependency::new("apache", "struts", "2.14.1", REGISTRY);
        assert!(match_dependency(&other, &feed).is_empty());
    }

    #[test]
    fn exact_version_without_bounds() {
        let feed = vec![entry("CVE-2020-0001", 50, "cpe:2.3:a:acme:widget:1.2:*:*:*:*:*:*:*")];
        let dep = Dependency::new("ACME", "Widget", "1.2.0", REGISTRY);
        let found = match_dependency(&dep, &feed);
        assert_eq!(found[0].reason, MatchReason::ExactMatch);
        assert!(match_dependency(&Dependency::new("acme", "widget", "1.3", REGISTRY), &feed).is_empty());
    }

    #[test]
    fn allowlist_modes() {
        let allow = [REGISTRY];
        let good = Dependency::new("a", "b", "1", "https://registry.example/pkg");
        let bad = Dependency::new("a", "b", "1", "http://cdn.sketchy.example/lib.js");
        assert_eq!(
            check_source_allowlist(&good, &allow, SourceMode::Strict),
            SourceStatus::Verified
        );
        assert_eq!(
            check_source_allowlist(&bad, &allow, SourceMode::Strict),
            SourceStatus::Unverified
        );
        let none: [&str; 0] = [];
        assert_eq!(
            check_source_allowlist(&good, &none, SourceMode::Strict),
            SourceStatus::Unverified
        );
        assert_eq!(
            check_source_allowlist(&good, &none, SourceMode::Permissive),
            SourceStatus::Verified
        );
    }

    #[test]
    fn verdict_composition() {
        let feed = log4j_feed();
        let allow = [REGISTRY];
        let manifest = vec![Dependency::new(
            "apache",
            "log4j",
            "2.14.1",
            "https://registry.example/log4j",
        )];
        let report = scan_manifest(&manifest, &feed, 70, &allow, SourceMode::Strict).unwrap();
        assert_eq!(report.verdict, Verdict::Halt);
        assert_eq!(report.max_score, 100);
        assert!(report.hash_is_consistent());

        let empty = scan_manifest(&[], &feed, 70, &allow, SourceMode::Strict).unwrap();
        assert_eq!(
            (empty.verdict, empty.max_score, empty.findings.len()),
            (Verdict::Pass, 0, 0)
        );

        let mut feed98 = log4j_feed();
        feed98[0].base_score = 98;
        let report = scan_manifest(&manifest, &feed98, 100, &allow, SourceMode::Strict).unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
        let sketchy = vec![Dependency::new(
            "apache",
            "log4j",
            "2.14.1",
            "http://cdn.sketchy.example/x",
        )];
        let report = scan_manifest(&sketchy, &feed98, 100, &allow, SourceMode::Strict).unwrap();
        assert_eq!(report.verdict, Verdict::Halt);
        let report = scan_manifest(&sketchy, &feed98, 100, &allow, SourceMode::Permissive).unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
    }

    #[test]
    fn allowlist_file_format() {
        let text = "# trusted\nhttps://a/\n\n  https://b/  \n";
        assert_eq!(parse_allowlist(text), vec!["https://a/", "https://b/"]);
    }
}
