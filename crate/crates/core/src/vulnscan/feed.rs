use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cpe::parse_cpe;
use super::{CpeName, ScanError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    None,
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    /// CVSS v3 qualitative band for a score in tenths.
    pub fn for_score(tenths: u8) -> Severity {
        match tenths {
            0 => Severity::None,
            1..=39 => Severity::Low,
            40..=69 => Severity::Medium,
            70..=89 => Severity::High,
            _ => Severity::Critical,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpeMatch {
    pub cpe: CpeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_start_including: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_start_excluding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_end_including: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_end_excluding: Option<String>,
}

impl CpeMatch {
    pub fn for_cpe(cpe: CpeName) -> Self {
        CpeMatch {
            cpe,
            version_start_including: None,
            version_start_excluding: None,
            version_end_including: None,
            version_end_excluding: None,
        }
    }

    pub fn has_bounds(&self) -> bool {
        self.version_start_including.is_some()
            || self.version_start_excluding.is_some()
            || self.version_end_including.is_some()
            || self.version_end_excluding.is_some()
    }
}

/// One vulnerability record. `base_score` is CVSS in tenths (0..=100).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CveEntry {
    pub id: String,
    pub description: String,
    pub base_score: u8,
    pub severity: Severity,
    pub matches: Vec<CpeMatch>,
}

fn is_cve_id(id: &str) -> bool {
    let mut parts = id.splitn(3, '-');
    let (Some("CVE"), Some(year), Some(seq)) = (parts.next(), parts.next(), parts.next()) else {
        return false;
    };
    year.len() == 4
        && year.bytes().all(|b| b.is_ascii_digit())
        && seq.len() >= 4
        && seq.bytes().all(|b| b.is_ascii_digit())
}

fn invalid(path: String, detail: impl Into<String>) -> ScanError {
    ScanError::FeedInvalid {
        path,
        detail: detail.into(),
    }
}

/// Check the feed invariants not expressible in the type. Errors carry a
/// JSON-path-like location such as `[3].matches[0]`.
pub fn validate_feed(feed: &[CveEntry]) -> Result<(), ScanError> {
    for (i, entry) in feed.iter().enumerate() {
        if !is_cve_id(&entry.id) {
            return Err(invalid(
                format!("[{i}].id"),
                format!("{:?} is not CVE-YYYY-NNNN", entry.id),
            ));
        }
        if entry.base_score > 100 {
            return Err(invalid(format!("[{i}].base_score"), "score above 100 tenths"));
        }
        if Severity::for_score(entry.base_score) != entry.severity {
            return Err(invalid(
                format!("[{i}].severity"),
                format!("{:?} does not match score {}", entry.severity, entry.base_score),
            ));
        }
        for (j, m) in entry.matches.iter().enumerate() {
            let path = format!("[{i}].matches[{j}]");
            if m.version_start_including.is_some() && m.version_start_excluding.is_some() {
                return Err(invalid(path, "two start bounds"));
            }
            if m.version_end_including.is_some() && m.version_end_excluding.is_some() {
                return Err(invalid(path, "two end bounds"));
            }
            let bounds = [
                &m.version_start_including,
                &m.version_start_excluding,
                &m.version_end_including,
                &m.version_end_excluding,
            ];
            if bounds.iter().any(|b| b.as_deref() == Some("")) {
                return Err(invalid(path, "empty version bound"));
            }
        }
    }
    Ok(())
}

/// Parse and validate a feed document.
pub fn parse_feed(bytes: &[u8]) -> Result<Vec<CveEntry>, ScanError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let feed: Vec<CveEntry> = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        invalid(path, e.into_inner().to_string())
    })?;
    validate_feed(&feed)?;
    Ok(feed)
}

pub fn load_feed(path: &Path) -> Result<Vec<CveEntry>, ScanError> {
    let bytes = std::fs::read(path).map_err(|e| ScanError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    parse_feed(&bytes)
}

/// Convenience for fixtures and tests.
pub fn entry(id: &str, score: u8, cpe: &str) -> CveEntry {
    CveEntry {
        id: id.to_string(),
        description: String::new(),
        base_score: score,
        severity: Severity::for_score(score),
        matches: vec![CpeMatch::for_cpe(parse_cpe(cpe).expect("valid fixture CPE"))],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands() {
        assert_eq!(Severity::for_score(0), Severity::None);
        assert_eq!(Severity::for_score(39), Severity::Low);
        assert_eq!(Severity::for_score(40), Severity::Medium);
        assert_eq!(Severity::for_score(70), Severity::High);
        assert_eq!(Severity::for_score(89), Severity::High);
        assert_eq!(Severity::for_score(90), Severity::Critical);
    }

    #[test]
    fn errors_carry_path() {
        let doc = br#"[{"id":"CVE-2021-44228","description":"","base_score":100,"severity":"Critical",
            "matches":[{"cpe":"cpe:2.3:a:apache:log4j:*:*:*:*:*:*:*"}]}]"#;
        match parse_feed(doc) {
            Err(ScanError::FeedInvalid { path, .. }) => assert_eq!(path, "[0].matches[0].cpe"),
            other => panic!("unexpected {other:?}"),
        }
        let doc = br#"[{"id":"CVE-2021-44228","description":"","base_score":100,"severity":"High","matches":[]}]"#;
        match parse_feed(doc) {
            Err(ScanError::FeedInvalid { path, .. }) => assert_eq!(path, "[0].severity"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(is_cve_id("CVE-2021-44228"));
        assert!(!is_cve_id("CVE-21-44228"));
        assert!(!is_cve_id("CVE-2021-442"));
    }
}
