//! Membership: deterministic key material per organization, org-signed
//! certificates, and role-based access control.

mod acl;
mod store;

pub use acl::{check_permission, AccessDecision, AclPolicy, Action, DenyReason};
pub use store::{load_org_materials, save_org_materials};

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{b64, to_canonical, Digest};

/// Identifies a key by the SHA-256 of its public key bytes.
pub type KeyId = Digest;

pub type Signature = [u8; 64];

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("organization name must not be empty")]
    EmptyOrgName,
    #[error("an organization needs at least one peer")]
    ZeroPeers,
    #[error("no secret key for {0}")]
    UnknownKey(KeyId),
    #[error("certificate for {0} does not verify under its org root")]
    BadCertificate(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed materials file {path}: {detail}")]
    Malformed { path: String, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Admin,
    Peer,
    Orderer,
    Client,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Admin, Role::Peer, Role::Orderer, Role::Client];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Identity {
    pub org: String,
    pub common_name: String,
    pub role: Role,
    #[serde(with = "b64::array")]
    pub public_key: [u8; 32],
    pub key_id: KeyId,
}

impl Identity {
    pub fn new(org: &str, common_name: &str, role: Role, public_key: [u8; 32]) -> Self {
        Identity {
            org: org.to_string(),
            common_name: common_name.to_string(),
            role,
            public_key,
            key_id: Digest::of(&public_key),
        }
    }

    pub fn key_id_consistent(&self) -> bool {
        self.key_id == Digest::of(&self.public_key)
    }

    pub fn verifying_key(&self) -> Option<VerifyingKey> {
        VerifyingKey::from_bytes(&self.public_key).ok()
    }
}

/// An identity record signed by its organization's root key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    pub identity: Identity,
    pub issuer_org: String,
    #[serde(with = "b64::array")]
    pub signature: Signature,
}

impl Certificate {
    pub fn issue(identity: Identity, root: &SigningKey) -> Self {
        let issuer_org = identity.org.clone();
        let payload = to_canonical(&identity).expect("identity encodes canonically");
        let signature = root.sign(&payload).to_bytes();
        Certificate {
            identity,
            issuer_org,
            signature,
        }
    }

    pub fn key_id(&self) -> KeyId {
        self.identity.key_id
    }

    /// Checks the issuer binding, the key id and the root signature.
    pub fn verify_under(&self, root_public_key: &[u8; 32]) -> bool {
        if self.issuer_org != self.identity.org || !self.identity.key_id_consistent() {
            return false;
        }
        let Ok(root) = VerifyingKey::from_bytes(root_public_key) else {
            return false;
        };
        let Ok(payload) = to_canonical(&self.identity) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&self.signature);
        root.verify(&payload, &sig).is_ok()
    }
}

/// Why [`verify_signature`] rejected a payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerifyFailure {
    UnknownOrg,
    BadCert,
    BadSig,
}

impl fmt::Display for VerifyFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Verify `signature` over `payload` by the holder of `cert`. The
/// certificate is checked first, so a bad certificate is reported even when
/// the payload signature itself is fine.
pub fn verify_signature(
    cert: &Certificate,
    org_roots: &BTreeMap<String, [u8; 32]>,
    payload: &[u8],
    signature: &Signature,
) -> Result<(), VerifyFailure> {
    let root = org_roots.get(&cert.issuer_org).ok_or(VerifyFailure::UnknownOrg)?;
    if !cert.verify_under(root) {
        return Err(VerifyFailure::BadCert);
    }
    let key = cert.identity.verifying_key().ok_or(VerifyFailure::BadCert)?;
    let sig = ed25519_dalek::Signature::from_bytes(signature);
    key.verify(payload, &sig).map_err(|_| VerifyFailure::BadSig)
}

pub fn sign_payload(key: &SigningKey, payload: &[u8]) -> Signature {
    key.sign(payload).to_bytes()
}

/// Everything one organization needs: its root of trust, the certificates
/// it issued and the matching secret keys.
#[derive(Clone)]
pub struct OrgMaterials {
    pub org: String,
    pub root_key: SigningKey,
    pub certificates: Vec<Certificate>,
    pub secret_keys: BTreeMap<KeyId, SigningKey>,
}

impl fmt::Debug for OrgMaterials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OrgMaterials")
            .field("org", &self.org)
            .field("identities", &self.certificates.len())
            .finish_non_exhaustive()
    }
}

impl OrgMaterials {
    pub fn root_public_key(&self) -> [u8; 32] {
        self.root_key.verifying_key().to_bytes()
    }

    pub fn identities(&self) -> impl Iterator<Item = &Identity> {
        self.certificates.iter().map(|c| &c.identity)
    }

    pub fn by_role(&self, role: Role) -> impl Iterator<Item = &Certificate> {
        self.certificates.iter().filter(move |c| c.identity.role == role)
    }

    pub fn certificate(&self, key_id: &KeyId) -> Option<&Certificate> {
        self.certificates.iter().find(|c| &c.identity.key_id == key_id)
    }

    pub fn admin(&self) -> &Certificate {
        self.by_role(Role::Admin)
            .next()
            .expect("materials always contain an admin")
    }

    pub fn signing_key(&self, key_id: &KeyId) -> Result<&SigningKey, IdentityError> {
        self.secret_keys.get(key_id).ok_or(IdentityError::UnknownKey(*key_id))
    }

    /// Sign with the secret key of a known identity of this org.
    pub fn sign(&self, key_id: &KeyId, payload: &[u8]) -> Result<Signature, IdentityError> {
        Ok(sign_payload(self.signing_key(key_id)?, payload))
    }

    /// Every certificate verifies under the root and exactly one is an Admin.
    pub fn check(&self) -> Result<(), IdentityError> {
        let root = self.root_public_key();
        for cert in &self.certificates {
            if !cert.verify_under(&root) || cert.identity.org != self.org {
                return Err(IdentityError::BadCertificate(cert.identity.common_name.clone()));
            }
        }
        if self.by_role(Role::Admin).count() != 1 {
            return Err(IdentityError::BadCertificate(format!(
                "{}: expected exactly one admin",
                self.org
            )));
        }
        Ok(())
    }
}

const KEYGEN_DOMAIN: &[u8] = b"ledgerci/keygen/v1";

fn derive_key(seed: &[u8; 32], org: &str, label: &str, index: u32) -> SigningKey {
    use sha2::{Digest as _, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(KEYGEN_DOMAIN);
    hasher.update(seed);
    for part in [org.as_bytes(), label.as_bytes()] {
        hasher.update((part.len() as u32).to_be_bytes());
        hasher.update(part);
    }
    hasher.update(index.to_be_bytes());
    SigningKey::from_bytes(&hasher.finalize().into())
}

/// Generate an organization's key material. Output is a pure function of
/// the arguments, so regenerating with the same seed is bit-identical.
pub fn generate_org_materials(
    org: &str,
    n_peers: usize,
    n_clients: usize,
    ordering_org: bool,
    seed: &[u8; 32],
) -> Result<OrgMaterials, IdentityError> {
    if org.is_empty() {
        return Err(IdentityError::EmptyOrgName);
    }
    if n_peers == 0 {
        return Err(IdentityError::ZeroPeers);
    }
    let root_key = derive_key(seed, org, "root", 0);
    let mut certificates = Vec::new();
    let mut secret_keys = BTreeMap::new();
    let mut add = |label: &str, index: u32, common_name: String, role: Role| {
        let key = derive_key(seed, org, label, index);
        let identity = Identity::new(org, &common_name, role, key.verifying_key().to_bytes());
        secret_keys.insert(identity.key_id, key);
        certificates.push(Certificate::issue(identity, &root_key));
    };
    add("admin", 0, format!("Admin@{org}"), Role::Admin);
    for i in 0..n_peers {
        add("peer", i as u32, format!("peer{i}.{org}"), Role::Peer);
    }
    for i in 0..n_clients {
        add("client", i as u32, format!("User{}@{org}", i + 1), Role::Client);
    }
    if ordering_org {
        add("orderer", 0, format!("orderer.{org}"), Role::Orderer);
    }
    Ok(OrgMaterials {
        org: org.to_string(),
        root_key,
        certificates,
        secret_keys,
    })
}

/// Channel-wide view of who is who: org roots plus every known certificate.
#[derive(Clone, Debug, Default)]
pub struct Msp {
    roots: BTreeMap<String, [u8; 32]>,
    certificates: BTreeMap<KeyId, Certificate>,
}

impl Msp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_materials<'a>(orgs: impl IntoIterator<Item = &'a OrgMaterials>) -> Self {
        let mut msp = Msp::new();
        for m in orgs {
            msp.add_org(&m.org, m.root_public_key());
            for cert in &m.certificates {
                msp.add_certificate(cert.clone());
            }
        }
        msp
    }

    pub fn add_org(&mut self, org: &str, root: [u8; 32]) {
        self.roots.insert(org.to_string(), root);
    }

    pub fn add_certificate(&mut self, cert: Certificate) {
        self.certificates.insert(cert.identity.key_id, cert);
    }

    pub fn roots(&self) -> &BTreeMap<String, [u8; 32]> {
        &self.roots
    }

    pub fn orgs(&self) -> impl Iterator<Item = &str> {
        self.roots.keys().map(String::as_str)
    }

    pub fn certificate(&self, key_id: &KeyId) -> Option<&Certificate> {
        self.certificates.get(key_id)
    }

    pub fn identity(&self, key_id: &KeyId) -> Option<&Identity> {
        self.certificates.get(key_id).map(|c| &c.identity)
    }

    /// Verify a signature attributed to `key_id`.
    pub fn verify(&self, key_id: &KeyId, payload: &[u8], signature: &Signature) -> Result<&Identity, VerifyFailure> {
        let cert = self.certificates.get(key_id).ok_or(VerifyFailure::UnknownOrg)?;
        verify_signature(cert, &self.roots, payload, signature)?;
        Ok(&cert.identity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEED: [u8; 32] = [7u8; 32];

    #[test]
    fn counts_follow_inputs() {
        let m = generate_org_materials("Org1", 2, 1, false, &SEED).unwrap();
        assert_eq!(m.by_role(Role::Peer).count(), 2);
        assert_eq!(m.by_role(Role::Client).count(), 1);
        assert_eq!(m.by_role(Role::Admin).count(), 1);
        assert_eq!(m.by_role(Role::Orderer).count(), 0);
        m.check().unwrap();
        let root = m.root_public_key();
        assert!(m.certificates.iter().all(|c| c.verify_under(&root)));

        let ordering = generate_org_materials("Org1", 1, 0, true, &SEED).unwrap();
        assert_eq!(ordering.by_role(Role::Orderer).count(), 1);
    }

    #[test]
    fn precondition_errors() {
        assert!(matches!(
            generate_org_materials("Org1", 0, 0, false, &SEED),
            Err(IdentityError::ZeroPeers)
        ));
        assert!(matches!(
            generate_org_materials("", 1, 0, false, &SEED),
            Err(IdentityError::EmptyOrgName)
        ));
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = generate_org_materials("Org1", 2, 1, true, &SEED).unwrap();
        let b = generate_org_materials("Org1", 2, 1, true, &SEED).unwrap();
        assert_eq!(a.certificates, b.certificates);
        assert_eq!(a.root_public_key(), b.root_public_key());
        let c = generate_org_materials("Org2", 2, 1, true, &SEED).unwrap();
        assert_ne!(a.root_public_key(), c.root_public_key());
    }

    #[test]
    fn key_id_is_hash_of_public_key() {
        let m = generate_org_materials("Org1", 1, 0, false, &SEED).unwrap();
        for id in m.identities() {
            assert!(id.key_id_consistent());
        }
    }

    fn roots_of(m: &OrgMaterials) -> BTreeMap<String, [u8; 32]> {
        BTreeMap::from([(m.org.clone(), m.root_public_key())])
    }

    #[test]
    fn sign_and_verify() {
        let m = generate_org_materials("Org1", 1, 1, false, &SEED).unwrap();
        let cert = m.by_role(Role::Client).next().unwrap().clone();
        let sig = m.sign(&cert.key_id(), b"payload").unwrap();
        assert_eq!(verify_signature(&cert, &roots_of(&m), b"payload", &sig), Ok(()));
        assert_eq!(
            verify_signature(&cert, &roots_of(&m), b"paylobd", &sig),
            Err(VerifyFailure::BadSig)
        );
        let other = m.sign(&cert.key_id(), b"payload2").unwrap();
        assert_ne!(sig, other);
    }

    #[test]
    fn unknown_key_cannot_sign() {
        let m = generate_org_materials("Org1", 1, 0, false, &SEED).unwrap();
        assert!(matches!(
            m.sign(&Digest::of(b"nobody"), b"x"),
            Err(IdentityError::UnknownKey(_))
        ));
    }

    #[test]
    fn unknown_org_and_bad_cert() {
        let m = generate_org_materials("Org1", 1, 0, false, &SEED).unwrap();
        let cert = m.admin().clone();
        let sig = m.sign(&cert.key_id(), b"p").unwrap();
        assert_eq!(
            verify_signature(&cert, &BTreeMap::new(), b"p", &sig),
            Err(VerifyFailure::UnknownOrg)
        );
        let mut bad = cert.clone();
        bad.signature[3] ^= 0x01;
        // payload signature is still valid, but the cert check comes first
        assert_eq!(
            verify_signature(&bad, &roots_of(&m), b"p", &sig),
            Err(VerifyFailure::BadCert)
        );
    }

    #[test]
    fn other_org_root_rejects() {
        let m1 = generate_org_materials("Org1", 1, 0, false, &SEED).unwrap();
        let m2 = generate_org_materials("Org2", 1, 0, false, &SEED).unwrap();
        let cert = m1.admin().clone();
        let sig = m1.sign(&cert.key_id(), b"p").unwrap();
        let swapped = BTreeMap::from([("Org1".to_string(), m2.root_public_key())]);
        assert_eq!(
            verify_signature(&cert, &swapped, b"p", &sig),
            Err(VerifyFailure::BadCert)
        );
    }
}
