use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boolean expression over organizations that must have endorsed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndorsementPolicy {
    Org(String),
    And(Vec<EndorsementPolicy>),
    Or(Vec<EndorsementPolicy>),
    OutOf(usize, Vec<EndorsementPolicy>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("OutOf({k}, ..) needs 1 <= k <= {len}")]
    BadThreshold { k: usize, len: usize },
    #[error("empty child list")]
    Empty,
    #[error("empty org name")]
    EmptyOrg,
}

impl EndorsementPolicy {
    pub fn org(name: &str) -> Self {
        EndorsementPolicy::Org(name.to_string())
    }

    pub fn out_of_orgs<S: AsRef<str>>(k: usize, orgs: &[S]) -> Self {
        EndorsementPolicy::OutOf(k, orgs.iter().map(|o| Self::org(o.as_ref())).collect())
    }

    /// Strict majority of the given orgs.
    pub fn majority<S: AsRef<str>>(orgs: &[S]) -> Self {
        Self::out_of_orgs(orgs.len() / 2 + 1, orgs)
    }

    pub fn check(&self) -> Result<(), PolicyError> {
        match self {
            EndorsementPolicy::Org(name) if name.is_empty() => Err(PolicyError::EmptyOrg),
            EndorsementPolicy::Org(_) => Ok(()),
            EndorsementPolicy::And(children) | EndorsementPolicy::Or(children) => {
                if children.is_empty() {
                    return Err(PolicyError::Empty);
                }
                children.iter().try_for_each(Self::check)
            }
            EndorsementPolicy::OutOf(k, children) => {
                if *k < 1 || *k > children.len() {
                    return Err(PolicyError::BadThreshold {
                        k: *k,
                        len: children.len(),
                    });
                }
                children.iter().try_for_each(Self::check)
            }
        }
    }

    /// Every org named anywhere in the tree.
    pub fn orgs(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_orgs(&mut out);
        out
    }

    fn collect_orgs<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            EndorsementPolicy::Org(name) => {
                out.insert(name);
            }
            EndorsementPolicy::And(c) | EndorsementPolicy::Or(c) | EndorsementPolicy::OutOf(_, c) => {
                c.iter().for_each(|p| p.collect_orgs(out))
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            EndorsementPolicy::Org(_) => 0,
            EndorsementPolicy::And(c) | EndorsementPolicy::Or(c) | EndorsementPolicy::OutOf(_, c) => {
                1 + c.iter().map(Self::depth).max().unwrap_or(0)
            }
        }
    }
}

impl fmt::Display for EndorsementPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, c: &[EndorsementPolicy]| -> fmt::Result {
            for (i, p) in c.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{p}")?;
            }
            Ok(())
        };
        match self {
            EndorsementPolicy::Org(name) => f.write_str(name),
            EndorsementPolicy::And(c) => {
                f.write_str("And(")?;
                list(f, c)?;
                f.write_str(")")
            }
            EndorsementPolicy::Or(c) => {
                f.write_str("Or(")?;
                list(f, c)?;
                f.write_str(")")
            }
            EndorsementPolicy::OutOf(k, c) => {
                write!(f, "OutOf({k},[")?;
                list(f, c)?;
                f.write_str("])")
            }
        }
    }
}

/// Structural evaluation against the orgs whose endorsements verified.
pub fn evaluate_policy<S: AsRef<str> + Ord>(policy: &EndorsementPolicy, valid_orgs: &BTreeSet<S>) -> bool {
    match policy {
        EndorsementPolicy::Org(name) => valid_orgs.iter().any(|o| o.as_ref() == name),
        EndorsementPolicy::And(children) => children.iter().all(|c| evaluate_policy(c, valid_orgs)),
        EndorsementPolicy::Or(children) => children.iter().any(|c| evaluate_policy(c, valid_orgs)),
        EndorsementPolicy::OutOf(k, children) => {
            children.iter().filter(|c| evaluate_policy(c, valid_orgs)).count() >= *k
        }
    }
}
