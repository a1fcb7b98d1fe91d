//! On-disk layout: `crypto/<org>/identities.json` holds the root public key
//! and certificates; `crypto/<org>/secrets.json` holds secret keys and is
//! written owner-only.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ed25519_dalek::SigningKey;
use serde::{Deserialize, Serialize};

use super::{Certificate, IdentityError, KeyId, OrgMaterials};
use crate::canonical::{b64, from_canonical_slice, to_canonical};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentitiesFile {
    org: String,
    #[serde(with = "b64::array")]
    root_public_key: [u8; 32],
    certificates: Vec<Certificate>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SecretsFile {
    org: String,
    #[serde(with = "b64::array")]
    root_secret: [u8; 32],
    keys: BTreeMap<String, String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IdentityError + '_ {
    move |source| IdentityError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, detail: impl ToString) -> IdentityError {
    IdentityError::Malformed {
        path: path.display().to_string(),
        detail: detail.to_string(),
    }
}

pub fn save_org_materials(crypto_dir: &Path, materials: &OrgMaterials) -> Result<(), IdentityError> {
    let dir = crypto_dir.join(&materials.org);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let identities = IdentitiesFile {
        org: materials.org.clone(),
        root_public_key: materials.root_public_key(),
        certificates: materials.certificates.clone(),
    };
    let path = dir.join("identities.json");
    let bytes = to_canonical(&identities).map_err(|e| malformed(&path, e))?;
    fs::write(&path, bytes).map_err(io_err(&path))?;

    let secrets = SecretsFile {
        org: materials.org.clone(),
        root_secret: materials.root_key.to_bytes(),
        keys: materials
            .secret_keys
            .iter()
            .map(|(id, key)| (id.to_hex(), b64::encode(&key.to_bytes())))
            .collect(),
    };
    let path = dir.join("secrets.json");
    let bytes = to_canonical(&secrets).map_err(|e| malformed(&path, e))?;
    write_private(&path, &bytes).map_err(io_err(&path))?;
    Ok(())
}

#[cfg(unix)]
fn write_private(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
    let mut file = fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)?;
    file.write_all(bytes)?;
    fs::set_permissions(path, fs::Permissions::from_mode(0o600))
}

#[cfg(not(unix))]
fn write_private(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    fs::write(path, bytes)
}

pub fn load_org_materials(crypto_dir: &Path, org: &str) -> Result<OrgMaterials, IdentityError> {
    let dir = crypto_dir.join(org);

    let path = dir.join("identities.json");
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let identities: IdentitiesFile = from_canonical_slice(&bytes).map_err(|e| malformed(&path, e))?;

    let path = dir.join("secrets.json");
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let secrets: SecretsFile = from_canonical_slice(&bytes).map_err(|e| malformed(&path, e))?;

    if identities.org != org || secrets.org != org {
        return Err(malformed(&path, "org name does not match directory"));
    }
    let root_key = SigningKey::from_bytes(&secrets.root_secret);
    if root_key.verifying_key().to_bytes() != identities.root_public_key {
        return Err(malformed(&path, "root secret does not match root public key"));
    }
    let mut secret_keys = BTreeMap::new();
    for (id, key) in &secrets.keys {
        let key_id: KeyId = id.parse().map_err(|e| malformed(&path, e))?;
        let raw: [u8; 32] = b64::decode(key)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| malformed(&path, format!("bad secret for {id}")))?;
        secret_keys.insert(key_id, SigningKey::from_bytes(&raw));
    }
    let materials = OrgMaterials {
        org: org.to_string(),
        root_key,
        certificates: identities.certificates,
        secret_keys,
    };
    materials.check()?;
    Ok(materials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::generate_org_materials;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_org_materials("Org1", 2, 1, true, &[3u8; 32]).unwrap();
        save_org_materials(dir.path(), &m).unwrap();
        let loaded = load_org_materials(dir.path(), "Org1").unwrap();
        assert_eq!(loaded.certificates, m.certificates);
        assert_eq!(loaded.secret_keys.len(), m.secret_keys.len());
        assert_eq!(loaded.root_public_key(), m.root_public_key());
    }

    #[cfg(unix)]
    #[test]
    fn secrets_are_owner_only() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let m = generate_org_materials("Org1", 1, 0, false, &[3u8; 32]).unwrap();
        save_org_materials(dir.path(), &m).unwrap();
        let mode = fs::metadata(dir.path().join("Org1/secrets.json"))
            .unwrap()
            .permissions()
            .mode();
        assert_eq!(mode & 0o777, 0o600);
    }

    #[test]
    fn tampered_certificate_is_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_org_materials("Org1", 1, 0, false, &[3u8; 32]).unwrap();
        save_org_materials(dir.path(), &m).unwrap();
        let path = dir.path().join("Org1/identities.json");
        let text = fs::read_to_string(&path).unwrap().replace("peer0.Org1", "peer9.Org1");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_org_materials(dir.path(), "Org1"),
            Err(IdentityError::BadCertificate(_))
        ));
    }
}
