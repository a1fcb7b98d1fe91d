//! Sample workspaces: a small project with a dependency manifest, a local
//! CVE feed, a source allowlist and the default pipeline definition.

use std::fs;
use std::io;
use std::path::Path;

use crate::vulnscan::{entry, parse_cpe, CpeMatch, CveEntry};

pub const PROJECT_DIR: &str = "project";
pub const MANIFEST: &str = "project/deps.json";
pub const FEED: &str = "feed.json";
pub const ALLOWLIST: &str = "allowlist.txt";
pub const PIPELINE: &str = "pipeline.json";

const MAVEN: &str = "https://repo1.maven.org/maven2/";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fixture {
    Clean,
    Vulnerable,
}

impl std::str::FromStr for Fixture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clean" => Ok(Fixture::Clean),
            "vulnerable" => Ok(Fixture::Vulnerable),
            other => Err(format!("unknown fixture {other:?} (clean|vulnerable)")),
        }
    }
}

fn bounded(id: &str, score: u8, cpe: &str, start_incl: Option<&str>, end_excl: &str) -> CveEntry {
    let mut e = entry(id, score, cpe);
    e.matches = vec![CpeMatch {
        version_start_including: start_incl.map(str::to_string),
        version_end_excluding: Some(end_excl.to_string()),
        ..CpeMatch::for_cpe(parse_cpe(cpe).expect("fixture CPE"))
    }];
    e
}

/// The fixture feed. The log4j entry is the gate's reference case:
/// everything below 2.15.0 scores 10.0.
pub fn fixture_feed() -> Vec<CveEntry> {
    let mut feed = vec![
        bounded(
            "CVE-2021-44228",
            100,
            "cpe:2.3:a:apache:log4j:*:*:*:*:*:*:*:*",
            Some("2.0.1"),
            "2.15.0",
        ),
        bounded(
            "CVE-2022-42889",
            98,
            "cpe:2.3:a:apache:commons_text:*:*:*:*:*:*:*:*",
            Some("1.5"),
            "1.10.0",
        ),
        bounded(
            "CVE-2023-2976",
            71,
            "cpe:2.3:a:google:guava:*:*:*:*:*:*:*:*",
            Some("1.0"),
            "32.0.0",
        ),
        bounded(
            "CVE-2022-42003",
            75,
            "cpe:2.3:a:fasterxml:jackson-databind:*:*:*:*:*:*:*:*",
            None,
            "2.12.7.1",
        ),
    ];
    let mut exact = entry(
        "CVE-2019-10086",
        73,
        "cpe:2.3:a:apache:commons_beanutils:1.9.3:*:*:*:*:*:*:*",
    );
    exact.description = "exact-version entry".into();
    feed.push(exact);
    feed
}

fn manifest(fixture: Fixture) -> serde_json::Value {
    let log4j = match fixture {
        Fixture::Clean => "2.17.1",
        Fixture::Vulnerable => "2.14.1",
    };
    let dep = |vendor: &str, product: &str, version: &str| {
        serde_json::json!({
            "vendor": vendor,
            "product": product,
            "version": version,
            "source_url": format!("{MAVEN}{vendor}/{product}/{version}"),
        })
    };
    serde_json::json!([
        dep("apache", "log4j", log4j),
        dep("apache", "commons_text", "1.10.0"),
        dep("google", "guava", "32.1.2"),
        dep("fasterxml", "jackson-databind", "2.15.2"),
    ])
}

const MAIN_SOURCE: &str = "fn main() {\n    println!(\"hello from the pipeline\");\n}\n";
const README: &str = "Sample service built by the pipeline fixtures.\n";

fn write(root: &Path, rel: &str, bytes: &[u8]) -> io::Result<()> {
    let path = root.join(rel);
    if fs::read(&path).is_ok_and(|old| old == bytes) {
        return Ok(());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)
}

/// Write project, feed, allowlist and pipeline definition into `root`,
/// overwriting earlier fixture files. Files already holding the right
/// bytes are left untouched.
pub fn write_fixture(root: &Path, fixture: Fixture) -> io::Result<()> {
    write(root, "project/src/main.rs", MAIN_SOURCE.as_bytes())?;
    write(root, "project/README", README.as_bytes())?;
    write(root, MANIFEST, &serde_json::to_vec_pretty(&manifest(fixture))?)?;
    write(root, FEED, &serde_json::to_vec_pretty(&fixture_feed())?)?;
    write(root, ALLOWLIST, format!("# trusted mirrors\n{MAVEN}\n").as_bytes())?;
    let def = crate::pipeline::default_pipeline(PROJECT_DIR, MANIFEST, FEED, ALLOWLIST);
    write(root, PIPELINE, &def.to_json())
}
