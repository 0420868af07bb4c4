//! Ed25519 keys, self-signed publisher certificates, package signatures and
//! the verified / unverified / invalid publisher classification.
//!
//! Certificate file (`*.mcert`), UTF-8 with LF line endings:
//!
//! ```text
//! MAIR-CERT 1
//! publisher: <display name>
//! id: <reverse-DNS id>
//! pubkey: <64 lowercase hex>
//! not-before: <YYYY-MM-DDTHH:MM:SSZ>
//! not-after: <YYYY-MM-DDTHH:MM:SSZ>
//! self-sig: <128 lowercase hex>
//! ```
//!
//! The self-signature and the fingerprint both cover every byte up to and
//! including the newline that ends the `not-after` line.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::RngCore;

use crate::descriptor;
use crate::digest::Digest;

const CERT_MAGIC: &str = "MAIR-CERT 1";
const KEY_MAGIC: &str = "MAIR-KEY 1";
const SIG_DOMAIN: &[u8] = b"MAIR-SIG1\n";
const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, thiserror::Error)]
pub enum SigningError {
    #[error("seed must be 32 bytes, got {0}")]
    BadSeedLength(usize),
    #[error("not_before must be earlier than not_after")]
    InvalidValidityWindow,
    #[error("publisher name must not be empty")]
    EmptyPublisher,
    #[error("invalid {field}: {reason}")]
    InvalidValue { field: &'static str, reason: String },
    #[error("malformed certificate: {0}")]
    MalformedCertificate(String),
    #[error("malformed key file: {0}")]
    MalformedKey(String),
    #[error("reading trust store {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    seed: [u8; 32],
    public_key: [u8; 32],
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &hex::encode(self.public_key))
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn seed(&self) -> &[u8; 32] {
        &self.seed
    }

    pub fn public_key(&self) -> &[u8; 32] {
        &self.public_key
    }

    fn sign(&self, message: &[u8]) -> [u8; 64] {
        SigningKey::from_bytes(&self.seed).sign(message).to_bytes()
    }

    /// `MAIR-KEY 1\nseed: <64 hex>\n`
    pub fn to_key_file(&self) -> String {
        format!("{KEY_MAGIC}\nseed: {}\n", hex::encode(self.seed))
    }

    pub fn from_key_file(bytes: &[u8]) -> Result<Self, SigningError> {
        let bad = |m: &str| SigningError::MalformedKey(m.to_string());
        let text = std::str::from_utf8(bytes).map_err(|_| bad("not UTF-8"))?;
        let body = text
            .strip_prefix(KEY_MAGIC)
            .and_then(|t| t.strip_prefix("\nseed: "))
            .and_then(|t| t.strip_suffix('\n'))
            .ok_or_else(|| bad("unexpected layout"))?;
        let seed = Digest::from_hex(body).ok_or_else(|| bad("seed is not 64 lowercase hex"))?;
        generate_keypair(Some(&seed.0))
    }
}

/// Derives a key pair from `seed`, or from fresh OS randomness when absent.
pub fn generate_keypair(seed: Option<&[u8]>) -> Result<KeyPair, SigningError> {
    let seed: [u8; 32] = match seed {
        Some(s) => s.try_into().map_err(|_| SigningError::BadSeedLength(s.len()))?,
        None => {
            let mut s = [0u8; 32];
            rand::rngs::OsRng.fill_bytes(&mut s);
            s
        }
    };
    let public_key = SigningKey::from_bytes(&seed).verifying_key().to_bytes();
    Ok(KeyPair { seed, public_key })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub publisher: String,
    pub subject_id: String,
    pub public_key: [u8; 32],
    pub not_before: DateTime<Utc>,
    pub not_after: DateTime<Utc>,
    pub self_signature: [u8; 64],
}

impl Certificate {
    /// The to-be-signed region.
    pub fn tbs_bytes(&self) -> Vec<u8> {
        format!(
            "{CERT_MAGIC}\npublisher: {}\nid: {}\npubkey: {}\nnot-before: {}\nnot-after: {}\n",
            self.publisher,
            self.subject_id,
            hex::encode(self.public_key),
            self.not_before.format(TIME_FORMAT),
            self.not_after.format(TIME_FORMAT),
        )
        .into_bytes()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.tbs_bytes();
        out.extend_from_slice(format!("self-sig: {}\n", hex::encode(self.self_signature)).as_bytes());
        out
    }

    /// SHA-256 of the to-be-signed region.
    pub fn fingerprint(&self) -> Digest {
        Digest::of(&self.tbs_bytes())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, SigningError> {
        let bad = |m: String| SigningError::MalformedCertificate(m);
        let text = std::str::from_utf8(bytes).map_err(|_| bad("not UTF-8".into()))?;
        let body = text
            .strip_suffix('\n')
            .ok_or_else(|| bad("missing final newline".into()))?;
        let lines: Vec<&str> = body.split('\n').collect();
        if lines.len() != 7 || lines[0] != CERT_MAGIC {
            return Err(bad("expected a MAIR-CERT 1 header and six fields".into()));
        }
        let field = |i: usize, key: &str| {
            lines[i]
                .strip_prefix(key)
                .and_then(|l| l.strip_prefix(": "))
                .ok_or_else(|| bad(format!("line {} must be `{key}: …`", i + 1)))
        };
        let time = |i: usize, key: &str| -> Result<DateTime<Utc>, SigningError> {
            let raw = field(i, key)?;
            let t = NaiveDateTime::parse_from_str(raw, TIME_FORMAT)
                .map_err(|e| bad(format!("{key}: {e}")))?
                .and_utc();
            if t.format(TIME_FORMAT).to_string() != raw {
                return Err(bad(format!("{key}: non-canonical timestamp")));
            }
            Ok(t)
        };

        let public_key = Digest::from_hex(field(3, "pubkey")?)
            .ok_or_else(|| bad("pubkey must be 64 lowercase hex".into()))?
            .0;
        let sig_hex = field(6, "self-sig")?;
        let mut self_signature = [0u8; 64];
        if sig_hex.len() != 128
            || sig_hex.bytes().any(|c| c.is_ascii_uppercase())
            || hex::decode_to_slice(sig_hex, &mut self_signature).is_err()
        {
            return Err(bad("self-sig must be 128 lowercase hex".into()));
        }
        Ok(Certificate {
            publisher: field(1, "publisher")?.to_string(),
            subject_id: field(2, "id")?.to_string(),
            public_key,
            not_before: time(4, "not-before")?,
            not_after: time(5, "not-after")?,
            self_signature,
        })
    }
}

pub fn self_sign_certificate(
    key: &KeyPair,
    publisher: &str,
    subject_id: &str,
    not_before: DateTime<Utc>,
    not_after: DateTime<Utc>,
) -> Result<Certificate, SigningError> {
    if publisher.is_empty() {
        return Err(SigningError::EmptyPublisher);
    }
    if publisher.chars().any(char::is_control) {
        return Err(SigningError::InvalidValue {
            field: "publisher",
            reason: "contains control characters".into(),
        });
    }
    if !descriptor::is_valid_id_syntax(subject_id) || subject_id.len() > descriptor::MAX_ID_LEN {
        return Err(SigningError::InvalidValue {
            field: "id",
            reason: format!("`{subject_id}` is not a reverse-DNS identifier"),
        });
    }
    let not_before = truncate_to_seconds(not_before);
    let not_after = truncate_to_seconds(not_after);
    if not_before >= not_after {
        return Err(SigningError::InvalidValidityWindow);
    }

    let mut cert = Certificate {
        publisher: publisher.to_string(),
        subject_id: subject_id.to_string(),
        public_key: key.public_key,
        not_before,
        not_after,
        self_signature: [0; 64],
    };
    cert.self_signature = key.sign(&cert.tbs_bytes());
    Ok(cert)
}

fn truncate_to_seconds(t: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp(t.timestamp(), 0).expect("timestamp in range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InvalidReason {
    BadSelfSignature,
    Expired,
    NotYetValid,
    /// The certificate bytes could not be parsed at all.
    Malformed,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvalidReason::BadSelfSignature => "BadSelfSignature",
            InvalidReason::Expired => "Expired",
            InvalidReason::NotYetValid => "NotYetValid",
            InvalidReason::Malformed => "Malformed",
        })
    }
}

fn ed25519_verify(public_key: &[u8; 32], message: &[u8], signature: &[u8]) -> bool {
    let Ok(sig) = <[u8; 64]>::try_from(signature) else {
        return false;
    };
    VerifyingKey::from_bytes(public_key)
        .map(|vk| vk.verify_strict(message, &Signature::from_bytes(&sig)).is_ok())
        .unwrap_or(false)
}

pub fn verify_certificate(cert: &Certificate, now: DateTime<Utc>) -> Result<(), InvalidReason> {
    if !ed25519_verify(&cert.public_key, &cert.tbs_bytes(), &cert.self_signature) {
        return Err(InvalidReason::BadSelfSignature);
    }
    if now < cert.not_before {
        return Err(InvalidReason::NotYetValid);
    }
    if now > cert.not_after {
        return Err(InvalidReason::Expired);
    }
    Ok(())
}

/// `MAIR-SIG1\n` followed by the SHA-256 of each section: 74 bytes.
fn payload(descriptor_bytes: &[u8], manifest_bytes: &[u8]) -> [u8; 74] {
    let mut out = [0u8; 74];
    out[..10].copy_from_slice(SIG_DOMAIN);
    out[10..42].copy_from_slice(&Digest::of(descriptor_bytes).0);
    out[42..].copy_from_slice(&Digest::of(manifest_bytes).0);
    out
}

pub fn sign_payload(descriptor_bytes: &[u8], manifest_bytes: &[u8], key: &KeyPair) -> [u8; 64] {
    key.sign(&payload(descriptor_bytes, manifest_bytes))
}

pub fn verify_signature(
    descriptor_bytes: &[u8],
    manifest_bytes: &[u8],
    signature: &[u8],
    cert: &Certificate,
) -> bool {
    ed25519_verify(
        &cert.public_key,
        &payload(descriptor_bytes, manifest_bytes),
        signature,
    )
}

/// Fingerprints of publishers treated as verified.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustStore {
    trusted: BTreeSet<Digest>,
}

impl TrustStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every `*.mcert` file in `dir`. A missing directory is an empty
    /// store.
    pub fn from_dir(dir: &Path) -> Result<Self, SigningError> {
        let io = |source| SigningError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut store = TrustStore::new();
        let entries = match std::fs::read_dir(dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(store),
            Err(e) => return Err(io(e)),
        };
        for entry in entries {
            let path = entry.map_err(io)?.path();
            if path.extension().is_some_and(|ext| ext == "mcert") {
                let bytes = std::fs::read(&path).map_err(io)?;
                let cert = Certificate::parse(&bytes)
                    .map_err(|e| SigningError::MalformedCertificate(format!("{}: {e}", path.display())))?;
                store.trust(&cert);
            }
        }
        Ok(store)
    }

    pub fn trust(&mut self, cert: &Certificate) {
        self.trusted.insert(cert.fingerprint());
    }

    pub fn insert(&mut self, fingerprint: Digest) {
        self.trusted.insert(fingerprint);
    }

    pub fn contains(&self, fingerprint: &Digest) -> bool {
        self.trusted.contains(fingerprint)
    }

    pub fn len(&self) -> usize {
        self.trusted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trusted.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PublisherStatus {
    Verified,
    Unverified,
    Invalid(InvalidReason),
}

impl fmt::Display for PublisherStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PublisherStatus::Verified => f.write_str("VERIFIED"),
            PublisherStatus::Unverified => f.write_str("UNVERIFIED"),
            PublisherStatus::Invalid(reason) => write!(f, "INVALID({reason})"),
        }
    }
}

pub fn classify_publisher(cert: &Certificate, trust: &TrustStore, now: DateTime<Utc>) -> PublisherStatus {
    match verify_certificate(cert, now) {
        Err(reason) => PublisherStatus::Invalid(reason),
        Ok(()) if trust.contains(&cert.fingerprint()) => PublisherStatus::Verified,
        Ok(()) => PublisherStatus::Unverified,
    }
}
