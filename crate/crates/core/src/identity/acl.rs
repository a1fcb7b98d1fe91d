use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Identity, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    CreateChannel,
    JoinChannel,
    InstallContract,
    InitContract,
    Invoke,
    Query,
    Order,
}

impl Action {
    pub const ALL: [Action; 7] = [
        Action::CreateChannel,
        Action::JoinChannel,
        Action::InstallContract,
        Action::InitContract,
        Action::Invoke,
        Action::Query,
        Action::Order,
    ];
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenyReason {
    /// The policy has an explicit deny rule for the pair.
    Explicit,
    /// No rule for the pair; unlisted pairs deny.
    Unlisted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessDecision {
    Allow,
    Deny(DenyReason),
}

impl AccessDecision {
    pub fn is_allowed(self) -> bool {
        self == AccessDecision::Allow
    }
}

/// Role-based rules keyed by (action, role).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AclPolicy {
    rules: BTreeMap<(Action, Role), bool>,
}

impl AclPolicy {
    /// A policy with no rules: everything denies.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn allow(mut self, action: Action, role: Role) -> Self {
        self.rules.insert((action, role), true);
        self
    }

    pub fn deny(mut self, action: Action, role: Role) -> Self {
        self.rules.insert((action, role), false);
        self
    }

    pub fn rule(&self, action: Action, role: Role) -> Option<bool> {
        self.rules.get(&(action, role)).copied()
    }
}

impl AclPolicy {
    /// Admin may do everything; peers invoke, query and join; the orderer
    /// orders; clients invoke and query.
    pub fn default_policy() -> Self {
        let mut policy = AclPolicy::empty();
        for action in Action::ALL {
            policy = policy.allow(action, Role::Admin);
        }
        policy
            .allow(Action::Invoke, Role::Peer)
            .allow(Action::Query, Role::Peer)
            .allow(Action::JoinChannel, Role::Peer)
            .allow(Action::Order, Role::Orderer)
            .allow(Action::Invoke, Role::Client)
            .allow(Action::Query, Role::Client)
    }
}

pub fn check_permission(policy: &AclPolicy, identity: &Identity, action: Action) -> AccessDecision {
    match policy.rule(action, identity.role) {
        Some(true) => AccessDecision::Allow,
        Some(false) => AccessDecision::Deny(DenyReason::Explicit),
        None => AccessDecision::Deny(DenyReason::Unlisted),
    }
}
