//! The `.air` package container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MAIR" | u16 version = 1
//! u64 len | canonical descriptor
//! u64 len | canonical manifest
//! u64 len | canonical certificate
//! u64 len | signature
//! content blobs, concatenated in manifest order
//! ```
//!
//! Manifest text: `MAIR-MANIFEST 1\n` then one `<path>\t<size>\t<sha256 hex>\n`
//! line per file, sorted by path bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::descriptor::{self, AppDescriptor, DescriptorError, Violation};
use crate::digest::Digest;
use crate::relpath;
use crate::signing::{self, Certificate, KeyPair, SigningError};

pub const MAGIC: &[u8; 4] = b"MAIR";
pub const FORMAT_VERSION: u16 = 1;
const MANIFEST_HEADER: &str = "MAIR-MANIFEST 1\n";
const SECTIONS: [&str; 4] = ["descriptor", "manifest", "certificate", "signature"];

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("not a package: bad magic")]
    BadMagic,
    #[error("unsupported package format version {0}")]
    UnsupportedVersion(u16),
    #[error("package is truncated")]
    Truncated,
    #[error("{section} section declares {declared} bytes but only {remaining} remain")]
    SectionOverflow {
        section: &'static str,
        declared: u64,
        remaining: u64,
    },
    #[error("{0} unexpected bytes after the last content blob")]
    TrailingData(usize),
    #[error("malformed manifest: {0}")]
    BadManifest(String),
    #[error("manifest entries not strictly sorted at `{0}`")]
    SortViolation(String),
    #[error("content entry `{0}` is not in the content directory")]
    MissingContentEntry(String),
    #[error("invalid descriptor: {0:?}")]
    InvalidDescriptor(Vec<Violation>),
    #[error("certificate public key does not match the signing key")]
    KeyMismatch,
    #[error("`{0}` is not a regular file")]
    UnsupportedFileType(PathBuf),
    #[error("`{path}` cannot be packaged: {reason}")]
    InvalidPath { path: String, reason: &'static str },
    #[error("refusing to write `{0}` outside the destination")]
    PathEscape(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub size: u64,
    pub digest: Digest,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    fn check(&self) -> Result<(), ArchiveError> {
        for e in &self.entries {
            if let Err(reason) = relpath::check(&e.path) {
                return Err(ArchiveError::InvalidPath {
                    path: e.path.clone(),
                    reason,
                });
            }
            if e.path.contains(['\t', '\n', '\r']) {
                return Err(ArchiveError::InvalidPath {
                    path: e.path.clone(),
                    reason: "path contains a tab or line break",
                });
            }
        }
        for pair in self.entries.windows(2) {
            if pair[0].path.as_bytes() >= pair[1].path.as_bytes() {
                return Err(ArchiveError::SortViolation(pair[1].path.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&ManifestEntry> {
        self.entries
            .binary_search_by(|e| e.path.as_bytes().cmp(path.as_bytes()))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let bad = |m: String| ArchiveError::BadManifest(m);
        let text = std::str::from_utf8(bytes).map_err(|_| bad("not UTF-8".into()))?;
        let body = text
            .strip_prefix(MANIFEST_HEADER)
            .ok_or_else(|| bad("missing header".into()))?;
        let mut entries = Vec::new();
        if !body.is_empty() {
            let body = body
                .strip_suffix('\n')
                .ok_or_else(|| bad("missing final newline".into()))?;
            for (i, line) in body.split('\n').enumerate() {
                let fields: Vec<&str> = line.split('\t').collect();
                let [path, size, digest] = fields[..] else {
                    return Err(bad(format!("entry {i}: expected 3 tab-separated fields")));
                };
                let size_ok = !size.is_empty()
                    && size.bytes().all(|c| c.is_ascii_digit())
                    && (size == "0" || !size.starts_with('0'));
                let size = size
                    .parse::<u64>()
                    .ok()
                    .filter(|_| size_ok)
                    .ok_or_else(|| bad(format!("entry {i}: bad size `{size}`")))?;
                let digest = Digest::from_hex(digest).ok_or_else(|| bad(format!("entry {i}: bad digest")))?;
                entries.push(ManifestEntry {
                    path: path.to_string(),
                    size,
                    digest,
                });
            }
        }
        let m = Manifest { entries };
        m.check()?;
        Ok(m)
    }
}

pub fn canonical_manifest_bytes(m: &Manifest) -> Result<Vec<u8>, ArchiveError> {
    m.check()?;
    let mut out = String::from(MANIFEST_HEADER);
    for e in &m.entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.path, e.size, e.digest));
    }
    Ok(out.into_bytes())
}

/// A parsed container. Nothing here has been verified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageFile {
    pub descriptor_bytes: Vec<u8>,
    pub manifest_bytes: Vec<u8>,
    pub manifest: Manifest,
    pub certificate_bytes: Vec<u8>,
    pub signature: Vec<u8>,
    pub blobs: Vec<Vec<u8>>,
}

impl PackageFile {
    pub fn descriptor(&self) -> Result<AppDescriptor, DescriptorError> {
        descriptor::parse_descriptor(&self.descriptor_bytes)
    }

    pub fn certificate(&self) -> Result<Certificate, SigningError> {
        Certificate::parse(&self.certificate_bytes)
    }

    /// Checks the signature section against the descriptor and manifest
    /// sections under `cert`.
    pub fn signature_valid(&self, cert: &Certificate) -> bool {
        signing::verify_signature(
            &self.descriptor_bytes,
            &self.manifest_bytes,
            &self.signature,
            cert,
        )
    }

    /// The blob for `path`, if the manifest lists it.
    pub fn blob(&self, path: &str) -> Option<&[u8]> {
        let i = self.manifest.entries.iter().position(|e| e.path == path)?;
        self.blobs.get(i).map(Vec::as_slice)
    }
}

/// Collects every regular file under `dir` into a sorted manifest plus blobs.
fn scan_content(dir: &Path) -> Result<(Manifest, Vec<Vec<u8>>), ArchiveError> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).follow_links(false).min_depth(1) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            ArchiveError::Io {
                path,
                source: e.into(),
            }
        })?;
        let ft = entry.file_type();
        if ft.is_dir() {
            continue;
        }
        if !ft.is_file() {
            return Err(ArchiveError::UnsupportedFileType(entry.path().to_path_buf()));
        }
        let rel = entry.path().strip_prefix(dir).expect("walkdir yields children");
        let rel = rel
            .to_str()
            .ok_or_else(|| ArchiveError::InvalidPath {
                path: rel.to_string_lossy().into_owned(),
                reason: "path is not UTF-8",
            })?
            .replace(std::path::MAIN_SEPARATOR, "/");
        files.push((rel, entry.into_path()));
    }
    files.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));

    let mut entries = Vec::with_capacity(files.len());
    let mut blobs = Vec::with_capacity(files.len());
    for (rel, full) in files {
        let bytes = fs::read(&full).map_err(io_err(&full))?;
        entries.push(ManifestEntry {
            path: rel,
            size: bytes.len() as u64,
            digest: Digest::of(&bytes),
        });
        blobs.push(bytes);
    }
    let manifest = Manifest { entries };
    manifest.check()?;
    Ok((manifest, blobs))
}

pub fn build_package(
    content_dir: &Path,
    descriptor: &AppDescriptor,
    cert: &Certificate,
    key: &KeyPair,
) -> Result<Vec<u8>, ArchiveError> {
    let descriptor_bytes = descriptor::canonical_descriptor(descriptor).map_err(|e| match e {
        DescriptorError::InvalidDescriptor(v) => ArchiveError::InvalidDescriptor(v),
        other => unreachable!("canonical_descriptor only reports violations: {other}"),
    })?;
    if cert.public_key != *key.public_key() {
        return Err(ArchiveError::KeyMismatch);
    }
    let (manifest, blobs) = scan_content(content_dir)?;
    if manifest.get(&descriptor.window.content).is_none() {
        return Err(ArchiveError::MissingContentEntry(
            descriptor.window.content.clone(),
        ));
    }
    let manifest_bytes = canonical_manifest_bytes(&manifest)?;
    let signature = signing::sign_payload(&descriptor_bytes, &manifest_bytes, key);
    let certificate_bytes = cert.to_bytes();

    let blob_len: usize = blobs.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(
        6 + 32 + descriptor_bytes.len() + manifest_bytes.len() + certificate_bytes.len() + 64 + blob_len,
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for section in [
        &descriptor_bytes[..],
        &manifest_bytes,
        &certificate_bytes,
        &signature,
    ] {
        out.extend_from_slice(&(section.len() as u64).to_le_bytes());
        out.extend_from_slice(section);
    }
    for blob in &blobs {
        out.extend_from_slice(blob);
    }
    Ok(out)
}

pub fn read_package(bytes: &[u8]) -> Result<PackageFile, ArchiveError> {
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) {
            ArchiveError::Truncated
        } else {
            ArchiveError::BadMagic
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let version = bytes
        .get(4..6)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or(ArchiveError::Truncated)?;
    if version != FORMAT_VERSION {
        return Err(ArchiveError::UnsupportedVersion(version));
    }

    let mut rest = &bytes[6..];
    let mut sections: Vec<Vec<u8>> = Vec::with_capacity(4);
    for section in SECTIONS {
        let (len, tail) = rest.split_at_checked(8).ok_or(ArchiveError::Truncated)?;
        let declared = u64::from_le_bytes(len.try_into().expect("8 bytes"));
        if declared > tail.len() as u64 {
            return Err(ArchiveError::SectionOverflow {
                section,
                declared,
                remaining: tail.len() as u64,
            });
        }
        let (body, tail) = tail.split_at(declared as usize);
        sections.push(body.to_vec());
        rest = tail;
    }
    let [descriptor_bytes, manifest_bytes, certificate_bytes, signature]: [Vec<u8>; 4] =
        sections.try_into().expect("four sections");

    let manifest = Manifest::parse(&manifest_bytes)?;
    let mut blobs = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        if entry.size > rest.len() as u64 {
            return Err(ArchiveError::Truncated);
        }
        let (blob, tail) = rest.split_at(entry.size as usize);
        blobs.push(blob.to_vec());
        rest = tail;
    }
    if !rest.is_empty() {
        return Err(ArchiveError::TrailingData(rest.len()));
    }

    Ok(PackageFile {
        descriptor_bytes,
        manifest_bytes,
        manifest,
        certificate_bytes,
        signature,
        blobs,
    })
}

/// Byte offset where the blob region starts in a serialized package.
pub fn blob_region_offset(bytes: &[u8]) -> Result<usize, ArchiveError> {
    let pkg = read_package(bytes)?;
    let total: usize = pkg.blobs.iter().map(Vec::len).sum();
    Ok(bytes.len() - total)
}

pub fn extract_package(pkg: &PackageFile, dest: &Path) -> Result<Vec<PathBuf>, ArchiveError> {
    if !dest.is_dir() {
        return Err(ArchiveError::Io {
            path: dest.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "destination is not a directory"),
        });
    }
    let mut written = Vec::with_capacity(pkg.manifest.entries.len());
    for (entry, blob) in pkg.manifest.entries.iter().zip(&pkg.blobs) {
        let target =
            relpath::join(dest, &entry.path).map_err(|_| ArchiveError::PathEscape(entry.path.clone()))?;
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&target, blob).map_err(io_err(&target))?;
        written.push(target);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryStatus {
    Ok,
    SizeMismatch { expected: u64, actual: u64 },
    DigestMismatch,
    MissingBlob,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryCheck {
    pub path: String,
    pub status: EntryStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegrityReport {
    pub entries: Vec<EntryCheck>,
    pub ok: bool,
}

impl IntegrityReport {
    pub fn failures(&self) -> impl Iterator<Item = &EntryCheck> {
        self.entries.iter().filter(|e| e.status != EntryStatus::Ok)
    }
}

/// Recomputes every blob's size and digest against the manifest. Signatures
/// are not looked at.
pub fn verify_integrity(pkg: &PackageFile) -> IntegrityReport {
    let entries: Vec<EntryCheck> = pkg
        .manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let status = match pkg.blobs.get(i) {
                None => EntryStatus::MissingBlob,
                Some(blob) if blob.len() as u64 != entry.size => EntryStatus::SizeMismatch {
                    expected: entry.size,
                    actual: blob.len() as u64,
                },
                Some(blob) if Digest::of(blob) != entry.digest => EntryStatus::DigestMismatch,
                Some(_) => EntryStatus::Ok,
            };
            EntryCheck {
                path: entry.path.clone(),
                status,
            }
        })
        .collect();
    let ok =
        entries.iter().all(|e| e.status == EntryStatus::Ok) && pkg.blobs.len() == pkg.manifest.entries.len();
    IntegrityReport { entries, ok }
}
