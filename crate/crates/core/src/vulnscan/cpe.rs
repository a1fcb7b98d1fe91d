use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CpeError {
    #[error("CPE must start with `cpe:2.3:`")]
    BadPrefix,
    #[error("CPE 2.3 names have 13 fields, found {0}")]
    FieldCount(usize),
    #[error("CPE part must be a, o or h, found {0:?}")]
    BadPart(String),
    #[error("empty CPE field at position {0}")]
    EmptyField(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CpePart {
    Application,
    OperatingSystem,
    Hardware,
}

impl CpePart {
    fn letter(self) -> char {
        match self {
            CpePart::Application => 'a',
            CpePart::OperatingSystem => 'o',
            CpePart::Hardware => 'h',
        }
    }
}

/// A CPE 2.3 formatted-string name. `*` is the wildcard in any field.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CpeName {
    pub part: CpePart,
    pub vendor: String,
    pub product: String,
    pub version: String,
    pub update: String,
    pub edition: String,
    pub language: String,
    pub sw_edition: String,
    pub target_sw: String,
    pub target_hw: String,
    pub other: String,
}

pub const WILDCARD: &str = "*";

/// Split on unescaped `:`. `\:` becomes a literal colon; other escapes are
/// kept verbatim.
fn split_fields(text: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some(':') => current.push(':'),
                Some(other) => {
                    current.push('\\');
                    current.push(other);
                }
                None => current.push('\\'),
            },
            ':' => fields.push(std::mem::take(&mut current)),
            c => current.push(c),
        }
    }
    fields.push(current);
    fields
}

fn escape(field: &str) -> String {
    field.replace(':', "\\:")
}

pub fn parse_cpe(text: &str) -> Result<CpeName, CpeError> {
    if !text.starts_with("cpe:2.3:") {
        return Err(CpeError::BadPrefix);
    }
    let fields = split_fields(text);
    if fields.len() != 13 {
        return Err(CpeError::FieldCount(fields.len()));
    }
    if let Some(i) = fields.iter().position(String::is_empty) {
        return Err(CpeError::EmptyField(i));
    }
    let part = match fields[2].as_str() {
        "a" => CpePart::Application,
        "o" => CpePart::OperatingSystem,
        "h" => CpePart::Hardware,
        other => return Err(CpeError::BadPart(other.to_string())),
    };
    let mut f = fields.into_iter().skip(3);
    let mut next = || f.next().expect("13 fields checked");
    Ok(CpeName {
        part,
        vendor: next().to_lowercase(),
        product: next().to_lowercase(),
        version: next(),
        update: next(),
        edition: next(),
        language: next(),
        sw_edition: next(),
        target_sw: next(),
        target_hw: next(),
        other: next(),
    })
}

impl CpeName {
    /// Case-insensitive field match where `*` on the CPE side matches all.
    pub fn names(&self, vendor: &str, product: &str) -> bool {
        field_matches(&self.vendor, vendor) && field_matches(&self.product, product)
    }

    pub fn version_is_wildcard(&self) -> bool {
        self.version == WILDCARD
    }
}

fn field_matches(pattern: &str, value: &str) -> bool {
    pattern == WILDCARD || pattern.eq_ignore_ascii_case(value)
}

impl fmt::Display for CpeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cpe:2.3:{}", self.part.letter())?;
        for field in [
            &self.vendor,
            &self.product,
            &self.version,
            &self.update,
            &self.edition,
            &self.language,
            &self.sw_edition,
            &self.target_sw,
            &self.target_hw,
            &self.other,
        ] {
            write!(f, ":{}", escape(field))?;
        }
        Ok(())
    }
}

impl FromStr for CpeName {
    type Err = CpeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_cpe(s)
    }
}

impl Serialize for CpeName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CpeName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_cpe(&text).map_err(serde::de::Error::custom)
    }
}
