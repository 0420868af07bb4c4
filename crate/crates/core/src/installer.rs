//! Machine-local application registry: install, update, uninstall, list.
//!
//! Layout under the registry root (`MAIR_HOME`, default `~/.miniair`):
//!
//! ```text
//! registry.tsv                 id, version, fingerprint, status, installed_at
//! apps/<id>/application.xml
//! apps/<id>/publisher.mcert
//! apps/<id>/files/...
//! apps/<id>/data/...
//! ```
//!
//! `registry.tsv` is the source of truth and is only ever replaced with a
//! temp-file rename. Mutations hold an exclusive lock on `.lock` in the root;
//! readers hold a shared one.

use std::cmp::Ordering;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Utc};

use crate::archive::{self, ArchiveError, PackageFile};
use crate::descriptor::{self, AppDescriptor, DescriptorError};
use crate::digest::Digest;
use crate::fsutil;
use crate::signing::{self, Certificate, InvalidReason, PublisherStatus, TrustStore};

const INDEX_FILE: &str = "registry.tsv";
const LOCK_FILE: &str = ".lock";
const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, thiserror::Error)]
pub enum InstallError {
    #[error("unreadable package: {0}")]
    Package(#[from] ArchiveError),
    #[error("integrity check failed for {}", .0.join(", "))]
    IntegrityFailure(Vec<String>),
    #[error("package signature does not verify")]
    SignatureFailure,
    #[error("certificate invalid: {0}")]
    CertificateInvalid(InvalidReason),
    #[error("package descriptor: {0}")]
    Descriptor(#[from] DescriptorError),
    #[error("`{0}` is already installed")]
    AlreadyInstalled(String),
    #[error("`{0}` is not installed")]
    NotInstalled(String),
    #[error("installation was not confirmed")]
    ConsentRefused,
    #[error("package is signed by a different publisher key than the installed version")]
    PublisherKeyMismatch,
    #[error("package version {package} is not newer than installed {installed}")]
    Downgrade { installed: String, package: String },
    #[error("bad version `{0}`")]
    BadVersion(String),
    #[error("corrupt registry index at line {line}: {reason}")]
    CorruptIndex { line: usize, reason: String },
    #[error("corrupt registry entry for `{id}`: {reason}")]
    CorruptApp { id: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> InstallError + '_ {
    move |source| InstallError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Component-wise numeric comparison; missing components count as zero.
pub fn compare_versions(a: &str, b: &str) -> Result<Ordering, InstallError> {
    for v in [a, b] {
        if !descriptor::is_valid_version(v) {
            return Err(InstallError::BadVersion(v.to_string()));
        }
    }
    let mut xs = a.split('.');
    let mut ys = b.split('.');
    for _ in 0..3 {
        let x = xs.next().unwrap_or("0").trim_start_matches('0');
        let y = ys.next().unwrap_or("0").trim_start_matches('0');
        let ord = x.len().cmp(&y.len()).then_with(|| x.cmp(y));
        if ord != Ordering::Equal {
            return Ok(ord);
        }
    }
    Ok(Ordering::Equal)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstalledApp {
    pub id: String,
    pub version: String,
    pub publisher_name: String,
    pub publisher_fingerprint: Digest,
    pub publisher_status_at_install: PublisherStatus,
    pub installed_at: DateTime<Utc>,
    pub files_dir: PathBuf,
    pub data_dir: PathBuf,
}

/// One `registry.tsv` row.
#[derive(Debug, Clone, PartialEq, Eq)]
struct IndexRow {
    id: String,
    version: String,
    fingerprint: Digest,
    status: PublisherStatus,
    installed_at: DateTime<Utc>,
}

impl IndexRow {
    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\n",
            self.id,
            self.version,
            self.fingerprint,
            self.status,
            self.installed_at.format(TIME_FORMAT)
        )
    }

    fn parse(line: &str, n: usize) -> Result<Self, InstallError> {
        let corrupt = |reason: &str| InstallError::CorruptIndex {
            line: n,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, version, fingerprint, status, at] = fields[..] else {
            return Err(corrupt("expected 5 tab-separated fields"));
        };
        if !descriptor::is_valid_id_syntax(id) {
            return Err(corrupt("bad id"));
        }
        if !descriptor::is_valid_version(version) {
            return Err(corrupt("bad version"));
        }
        let fingerprint = Digest::from_hex(fingerprint).ok_or_else(|| corrupt("bad fingerprint"))?;
        let status = match status {
            "VERIFIED" => PublisherStatus::Verified,
            "UNVERIFIED" => PublisherStatus::Unverified,
            _ => return Err(corrupt("bad publisher status")),
        };
        let installed_at = NaiveDateTime::parse_from_str(at, TIME_FORMAT)
            .map_err(|_| corrupt("bad timestamp"))?
            .and_utc();
        Ok(IndexRow {
            id: id.to_string(),
            version: version.to_string(),
            fingerprint,
            status,
            installed_at,
        })
    }
}

/// Everything the user needs to decide whether to grant an app full local
/// access.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disclosure {
    pub app_id: String,
    pub version: String,
    pub publisher_name: String,
    pub status: PublisherStatus,
}

impl Disclosure {
    pub fn lines(&self) -> [String; 4] {
        [
            format!("app: {} {}", self.app_id, self.version),
            format!("publisher: {} ({})", self.publisher_name, self.status),
            "access: full local system access".to_string(),
            "proceed? [y/N]".to_string(),
        ]
    }
}

/// A package that passed integrity, signature and certificate checks.
struct CheckedPackage {
    pkg: PackageFile,
    descriptor: AppDescriptor,
    cert: Certificate,
    status: PublisherStatus,
}

impl CheckedPackage {
    fn open(path: &Path, trust: &TrustStore, now: DateTime<Utc>) -> Result<Self, InstallError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let pkg = archive::read_package(&bytes)?;
        let report = archive::verify_integrity(&pkg);
        if !report.ok {
            return Err(InstallError::IntegrityFailure(
                report.failures().map(|f| f.path.clone()).collect(),
            ));
        }
        let cert = pkg
            .certificate()
            .map_err(|_| InstallError::CertificateInvalid(InvalidReason::Malformed))?;
        if !pkg.signature_valid(&cert) {
            return Err(InstallError::SignatureFailure);
        }
        let status = signing::classify_publisher(&cert, trust, now);
        if let PublisherStatus::Invalid(reason) = status {
            return Err(InstallError::CertificateInvalid(reason));
        }
        let descriptor = pkg.descriptor()?;
        Ok(CheckedPackage {
            pkg,
            descriptor,
            cert,
            status,
        })
    }

    fn disclosure(&self) -> Disclosure {
        Disclosure {
            app_id: self.descriptor.id.clone(),
            version: self.descriptor.version.clone(),
            publisher_name: self.cert.publisher.clone(),
            status: self.status,
        }
    }

    fn index_row(&self, now: DateTime<Utc>) -> IndexRow {
        IndexRow {
            id: self.descriptor.id.clone(),
            version: self.descriptor.version.clone(),
            fingerprint: self.cert.fingerprint(),
            status: self.status,
            installed_at: DateTime::from_timestamp(now.timestamp(), 0).expect("in range"),
        }
    }

    /// Writes descriptor, certificate and extracted content into a fresh
    /// directory under `parent`.
    fn stage(&self, parent: &Path, with_data_dir: bool) -> Result<tempfile::TempDir, InstallError> {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let staging = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(parent)
            .map_err(io_err(parent))?;
        let files = staging.path().join("files");
        fs::create_dir(&files).map_err(io_err(&files))?;
        archive::extract_package(&self.pkg, &files)?;
        let desc = staging.path().join("application.xml");
        fs::write(&desc, &self.pkg.descriptor_bytes).map_err(io_err(&desc))?;
        let cert = staging.path().join("publisher.mcert");
        fs::write(&cert, &self.pkg.certificate_bytes).map_err(io_err(&cert))?;
        if with_data_dir {
            let data = staging.path().join("data");
            fs::create_dir(&data).map_err(io_err(&data))?;
        }
        Ok(staging)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    root: PathBuf,
}

impl Registry {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Registry { root: root.into() }
    }

    /// `MAIR_HOME` if set, otherwise `$HOME/.miniair`.
    pub fn root_from_env(get: impl Fn(&str) -> Option<String>) -> PathBuf {
        if let Some(home) = get("MAIR_HOME").filter(|h| !h.is_empty()) {
            return PathBuf::from(home);
        }
        let home = get("HOME")
            .or_else(|| get("USERPROFILE"))
            .unwrap_or_else(|| ".".to_string());
        Path::new(&home).join(".miniair")
    }

    pub fn from_env() -> Self {
        Registry::new(Self::root_from_env(|k| std::env::var(k).ok()))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join(INDEX_FILE)
    }

    /// Default trust store directory.
    pub fn trust_dir(&self) -> PathBuf {
        self.root.join("trust")
    }

    fn apps_dir(&self) -> PathBuf {
        self.root.join("apps")
    }

    pub fn app_dir(&self, id: &str) -> PathBuf {
        self.apps_dir().join(id)
    }

    pub fn files_dir(&self, id: &str) -> PathBuf {
        self.app_dir(id).join("files")
    }

    pub fn data_dir(&self, id: &str) -> PathBuf {
        self.app_dir(id).join("data")
    }

    fn lock_exclusive(&self) -> Result<fs::File, InstallError> {
        let path = self.root.join(LOCK_FILE);
        fsutil::lock_exclusive(&path).map_err(io_err(&path))
    }

    fn read_index(&self) -> Result<Vec<IndexRow>, InstallError> {
        let path = self.index_path();
        let text = match fs::read(&path) {
            Ok(bytes) => String::from_utf8(bytes).map_err(|_| InstallError::CorruptIndex {
                line: 0,
                reason: "not UTF-8".into(),
            })?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        if !text.is_empty() && !text.ends_with('\n') {
            return Err(InstallError::CorruptIndex {
                line: text.lines().count(),
                reason: "truncated final line".into(),
            });
        }
        let mut rows = text
            .lines()
            .enumerate()
            .map(|(i, line)| IndexRow::parse(line, i + 1))
            .collect::<Result<Vec<_>, _>>()?;
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(pair) = rows.windows(2).find(|p| p[0].id == p[1].id) {
            return Err(InstallError::CorruptIndex {
                line: 0,
                reason: format!("duplicate id `{}`", pair[0].id),
            });
        }
        Ok(rows)
    }

    fn write_index(&self, rows: &mut [IndexRow]) -> Result<(), InstallError> {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        let text: String = rows.iter().map(IndexRow::to_line).collect();
        let path = self.index_path();
        fsutil::atomic_write(&path, text.as_bytes()).map_err(io_err(&path))
    }

    fn to_installed(&self, row: &IndexRow) -> Result<InstalledApp, InstallError> {
        let cert = self.installed_certificate(&row.id)?;
        Ok(InstalledApp {
            id: row.id.clone(),
            version: row.version.clone(),
            publisher_name: cert.publisher,
            publisher_fingerprint: row.fingerprint,
            publisher_status_at_install: row.status,
            installed_at: row.installed_at,
            files_dir: self.files_dir(&row.id),
            data_dir: self.data_dir(&row.id),
        })
    }

    fn installed_certificate(&self, id: &str) -> Result<Certificate, InstallError> {
        let path = self.app_dir(id).join("publisher.mcert");
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        Certificate::parse(&bytes).map_err(|e| InstallError::CorruptApp {
            id: id.to_string(),
            reason: e.to_string(),
        })
    }

    /// The installed descriptor for `id`.
    pub fn descriptor(&self, id: &str) -> Result<AppDescriptor, InstallError> {
        if self.get(id)?.is_none() {
            return Err(InstallError::NotInstalled(id.to_string()));
        }
        let path = self.app_dir(id).join("application.xml");
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        Ok(descriptor::parse_descriptor(&bytes)?)
    }

    pub fn get(&self, id: &str) -> Result<Option<InstalledApp>, InstallError> {
        Ok(self.list_installed()?.into_iter().find(|a| a.id == id))
    }

    /// Raw `registry.tsv` rows, as stored.
    pub fn index_lines(&self) -> Result<Vec<String>, InstallError> {
        let _guard = self.lock_shared_if_present()?;
        Ok(self.read_index()?.iter().map(IndexRow::to_line).collect())
    }

    fn lock_shared_if_present(&self) -> Result<Option<fs::File>, InstallError> {
        if !self.root.is_dir() {
            return Ok(None);
        }
        let path = self.root.join(LOCK_FILE);
        fsutil::lock_shared(&path).map(Some).map_err(io_err(&path))
    }

    pub fn list_installed(&self) -> Result<Vec<InstalledApp>, InstallError> {
        let _guard = self.lock_shared_if_present()?;
        self.read_index()?
            .iter()
            .map(|row| self.to_installed(row))
            .collect()
    }

    /// Verifies the package, asks `consent` with the disclosure, and installs.
    pub fn install(
        &self,
        package_path: &Path,
        trust: &TrustStore,
        consent: &mut dyn FnMut(&Disclosure) -> bool,
        now: DateTime<Utc>,
    ) -> Result<InstalledApp, InstallError> {
        let checked = CheckedPackage::open(package_path, trust, now)?;
        let id = checked.descriptor.id.clone();

        let _guard = self.lock_exclusive()?;
        let mut rows = self.read_index()?;
        if rows.iter().any(|r| r.id == id) {
            return Err(InstallError::AlreadyInstalled(id));
        }
        if !consent(&checked.disclosure()) {
            return Err(InstallError::ConsentRefused);
        }

        let staging = checked.stage(&self.apps_dir(), true)?;
        let app_dir = self.app_dir(&id);
        // A directory without an index row is debris from an interrupted run.
        if app_dir.exists() {
            fs::remove_dir_all(&app_dir).map_err(io_err(&app_dir))?;
        }
        let staged = staging.keep();
        fs::rename(&staged, &app_dir).map_err(|e| {
            let _ = fs::remove_dir_all(&staged);
            io_err(&app_dir)(e)
        })?;

        let row = checked.index_row(now);
        rows.push(row.clone());
        if let Err(e) = self.write_index(&mut rows) {
            let _ = fs::remove_dir_all(&app_dir);
            return Err(e);
        }
        self.to_installed(&row)
    }

    /// Replaces an installed app with a newer package from the same
    /// publisher key. The app's data directory is left untouched.
    pub fn update(
        &self,
        package_path: &Path,
        trust: &TrustStore,
        consent: &mut dyn FnMut(&Disclosure) -> bool,
        force: bool,
        now: DateTime<Utc>,
    ) -> Result<InstalledApp, InstallError> {
        let checked = CheckedPackage::open(package_path, trust, now)?;
        let id = checked.descriptor.id.clone();

        let _guard = self.lock_exclusive()?;
        let mut rows = self.read_index()?;
        let Some(pos) = rows.iter().position(|r| r.id == id) else {
            return Err(InstallError::NotInstalled(id));
        };
        let installed_cert = self.installed_certificate(&id)?;
        if installed_cert.public_key != checked.cert.public_key {
            return Err(InstallError::PublisherKeyMismatch);
        }
        let installed_version = rows[pos].version.clone();
        if !force && compare_versions(&checked.descriptor.version, &installed_version)? != Ordering::Greater {
            return Err(InstallError::Downgrade {
                installed: installed_version,
                package: checked.descriptor.version.clone(),
            });
        }
        if !consent(&checked.disclosure()) {
            return Err(InstallError::ConsentRefused);
        }

        let app_dir = self.app_dir(&id);
        let staging = checked.stage(&app_dir, false)?;
        let files = self.files_dir(&id);
        let old_files = app_dir.join(".files-old");
        let desc_path = app_dir.join("application.xml");
        let cert_path = app_dir.join("publisher.mcert");
        let old_desc = fs::read(&desc_path).map_err(io_err(&desc_path))?;
        let old_cert = fs::read(&cert_path).map_err(io_err(&cert_path))?;

        if old_files.exists() {
            fs::remove_dir_all(&old_files).map_err(io_err(&old_files))?;
        }
        fs::rename(&files, &old_files).map_err(io_err(&files))?;

        let row = checked.index_row(now);
        let mut commit = || -> Result<(), InstallError> {
            fs::rename(staging.path().join("files"), &files).map_err(io_err(&files))?;
            fsutil::atomic_write(&desc_path, &checked.pkg.descriptor_bytes).map_err(io_err(&desc_path))?;
            fsutil::atomic_write(&cert_path, &checked.pkg.certificate_bytes).map_err(io_err(&cert_path))?;
            rows[pos] = row.clone();
            self.write_index(&mut rows)
        };
        if let Err(e) = commit() {
            if files.exists() {
                let _ = fs::remove_dir_all(&files);
            }
            let _ = fs::rename(&old_files, &files);
            let _ = fsutil::atomic_write(&desc_path, &old_desc);
            let _ = fsutil::atomic_write(&cert_path, &old_cert);
            return Err(e);
        }
        let _ = fs::remove_dir_all(&old_files);
        self.to_installed(&row)
    }

    /// Removes the app, including its data directory.
    pub fn uninstall(&self, id: &str) -> Result<InstalledApp, InstallError> {
        let _guard = self.lock_exclusive()?;
        let mut rows = self.read_index()?;
        let Some(pos) = rows.iter().position(|r| r.id == id) else {
            return Err(InstallError::NotInstalled(id.to_string()));
        };
        let removed = self.to_installed(&rows[pos])?;
        rows.remove(pos);
        self.write_index(&mut rows)?;
        let app_dir = self.app_dir(id);
        match fs::remove_dir_all(&app_dir) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(&app_dir)(e)),
        }
        Ok(removed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::WindowConfig;
    use crate::signing::{generate_keypair, self_sign_certificate, KeyPair};
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 6, 1, 12, 0, 0).unwrap()
    }

    struct Fixture {
        _tmp: tempfile::TempDir,
        registry: Registry,
        work: PathBuf,
    }

    fn fixture() -> Fixture {
        let tmp = tempfile::tempdir().unwrap();
        let registry = Registry::new(tmp.path().join("home"));
        let work = tmp.path().join("work");
        fs::create_dir_all(&work).unwrap();
        Fixture {
            _tmp: tmp,
            registry,
            work,
        }
    }

    fn key(n: u8) -> KeyPair {
        generate_keypair(Some(&[n; 32])).unwrap()
    }

    fn package(f: &Fixture, id: &str, version: &str, key: &KeyPair, name: &str) -> PathBuf {
        let content = f.work.join(format!("content-{id}-{version}"));
        fs::create_dir_all(&content).unwrap();
        fs::write(
            content.join("index.feedapp"),
            format!("engine=feedreader\nsource=clipboard\n# {version}\n"),
        )
        .unwrap();
        let cert = self_sign_certificate(
            key,
            "Example Publisher",
            "com.example",
            Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2027, 1, 1, 0, 0, 0).unwrap(),
        )
        .unwrap();
        let d = AppDescriptor {
            id: id.into(),
            name: "App".into(),
            filename: "app".into(),
            version: version.into(),
            window: WindowConfig::new("index.feedapp"),
        };
        let bytes = archive::build_package(&content, &d, &cert, key).unwrap();
        let out = f.work.join(name);
        fs::write(&out, bytes).unwrap();
        out
    }

    fn yes(_: &Disclosure) -> bool {
        true
    }

    fn index_bytes(r: &Registry) -> Option<Vec<u8>> {
        fs::read(r.index_path()).ok()
    }

    #[test]
    fn version_examples() {
        assert_eq!(compare_versions("1.0", "1.0.0").unwrap(), Ordering::Equal);
        assert_eq!(compare_versions("1.2", "1.10").unwrap(), Ordering::Less);
        assert_eq!(compare_versions("2.0.0", "1.9.9").unwrap(), Ordering::Greater);
        assert_eq!(compare_versions("01.0", "1").unwrap(), Ordering::Equal);
        assert_eq!(
            compare_versions("99999999999999999999999", "99999999999999999999998").unwrap(),
            Ordering::Greater
        );
        assert!(matches!(
            compare_versions("1.a", "1"),
            Err(InstallError::BadVersion(_))
        ));
    }

    fn tuple(v: &str) -> [u128; 3] {
        let mut t = [0u128; 3];
        for (slot, part) in t.iter_mut().zip(v.split('.')) {
            *slot = part.parse().unwrap();
        }
        t
    }

    proptest! {
        #[test]
        fn versions_match_tuple_order(
            a in proptest::collection::vec(0u32..1000, 1..=3),
            b in proptest::collection::vec(0u32..1000, 1..=3),
            c in proptest::collection::vec(0u32..1000, 1..=3),
        ) {
            let s = |v: &Vec<u32>| v.iter().map(u32::to_string).collect::<Vec<_>>().join(".");
            let (a, b, c) = (s(&a), s(&b), s(&c));
            let ab = compare_versions(&a, &b).unwrap();
            prop_assert_eq!(ab, tuple(&a).cmp(&tuple(&b)));
            prop_assert_eq!(compare_versions(&b, &a).unwrap(), ab.reverse());
            if ab != Ordering::Greater && compare_versions(&b, &c).unwrap() != Ordering::Greater {
                prop_assert_ne!(compare_versions(&a, &c).unwrap(), Ordering::Greater);
            }
        }
    }

    #[test]
    fn disclosure_lines() {
        let d = Disclosure {
            app_id: "com.mypage.myname".into(),
            version: "1.0".into(),
            publisher_name: "Me".into(),
            status: PublisherStatus::Unverified,
        };
        assert_eq!(
            d.lines(),
            [
                "app: com.mypage.myname 1.0",
                "publisher: Me (UNVERIFIED)",
                "access: full local system access",
                "proceed? [y/N]",
            ]
        );
    }

    #[test]
    fn install_unverified_with_consent() {
        let f = fixture();
        let pkg = package(&f, "com.example.app", "1.0", &key(1), "a.air");
        let mut seen = None;
        let app = f
            .registry
            .install(
                &pkg,
                &TrustStore::new(),
                &mut |d| {
                    seen = Some(d.clone());
                    true
                },
                now(),
            )
            .unwrap();
        assert_eq!(seen.unwrap().status, PublisherStatus::Unverified);
        assert_eq!(app.publisher_status_at_install, PublisherStatus::Unverified);
        assert_eq!(app.publisher_name, "Example Publisher");
        assert!(app.files_dir.join("index.feedapp").is_file());
        assert!(app.data_dir.is_dir());
        assert!(f
            .registry
            .app_dir("com.example.app")
            .join("application.xml")
            .is_file());
        assert_eq!(f.registry.list_installed().unwrap(), vec![app]);
    }

    #[test]
    fn consent_refused_leaves_registry_untouched() {
        let f = fixture();
        let pkg = package(&f, "com.example.app", "1.0", &key(1), "a.air");
        let err = f
            .registry
            .install(&pkg, &TrustStore::new(), &mut |_| false, now())
            .unwrap_err();
        assert!(matches!(err, InstallError::ConsentRefused));
        assert!(index_bytes(&f.registry).is_none());
        assert!(!f.registry.app_dir("com.example.app").exists());
    }

    #[test]
    fn tampered_blob_fails_integrity() {
        let f = fixture();
        let pkg = package(&f, "com.example.app", "1.0", &key(1), "a.air");
        let mut bytes = fs::read(&pkg).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&pkg, bytes).unwrap();
        let err = f
            .registry
            .install(&pkg, &TrustStore::new(), &mut yes, now())
            .unwrap_err();
        assert!(matches!(err, InstallError::IntegrityFailure(p) if p == ["index.feedapp"]));
    }

    #[test]
    fn tampered_signature_fails() {
        let f = fixture();
        let pkg = package(&f, "com.example.app", "1.0", &key(1), "a.air");
        let mut bytes = fs::read(&pkg).unwrap();
        let sig_end = archive::blob_region_offset(&bytes).unwrap();
        bytes[sig_end - 1] ^= 1;
        fs::write(&pkg, bytes).unwrap();
        let err = f
            .registry
            .install(&pkg, &TrustStore::new(), &mut yes, now())
            .unwrap_err();
        assert!(matches!(err, InstallError::SignatureFailure));
    }

    #[test]
    fn expired_certificate_rejected() {
        let f = fixture();
        let pkg = package(&f, "com.example.app", "1.0", &key(1), "a.air");
        let later = Utc.with_ymd_and_hms(2030, 1, 1, 0, 0, 0).unwrap();
        let err = f
            .registry
            .install(&pkg, &TrustStore::new(), &mut yes, later)
            .unwrap_err();
        assert!(matches!(
            err,
            InstallError::CertificateInvalid(InvalidReason::Expired)
        ));
    }

    #[test]
    fn trusted_publisher_is_verified() {
        let f = fixture();
        let pkg = package(&f, "com.example.app", "1.0", &key(1), "a.air");
        let cert = archive::read_package(&fs::read(&pkg).unwrap())
            .unwrap()
            .certificate()
            .unwrap();
        let mut trust = TrustStore::new();
        trust.trust(&cert);
        let app = f.registry.install(&pkg, &trust, &mut yes, now()).unwrap();
        assert_eq!(app.publisher_status_at_install, PublisherStatus::Verified);
    }

    #[test]
    fn double_install_rejected() {
        let f = fixture();
        let pkg = package(&f, "com.example.app", "1.0", &key(1), "a.air");
        f.registry
            .install(&pkg, &TrustStore::new(), &mut yes, now())
            .unwrap();
        let before = index_bytes(&f.registry);
        let mut asked = false;
        let err = f
            .registry
            .install(
                &pkg,
                &TrustStore::new(),
                &mut |_| {
                    asked = true;
                    true
                },
                now(),
            )
            .unwrap_err();
        assert!(matches!(err, InstallError::AlreadyInstalled(_)));
        assert!(!asked);
        assert_eq!(index_bytes(&f.registry), before);
    }

    #[test]
    fn uninstall_and_reinstall() {
        let f = fixture();
        let pkg = package(&f, "com.example.app", "1.0", &key(1), "a.air");
        let first = f
            .registry
            .install(&pkg, &TrustStore::new(), &mut yes, now())
            .unwrap();
        fs::write(first.data_dir.join("user.txt"), b"x").unwrap();
        let removed = f.registry.uninstall("com.example.app").unwrap();
        assert_eq!(removed.id, "com.example.app");
        assert!(f.registry.list_installed().unwrap().is_empty());
        assert!(!f.registry.app_dir("com.example.app").exists());
        assert!(matches!(
            f.registry.uninstall("com.example.app"),
            Err(InstallError::NotInstalled(_))
        ));

        let later = now() + chrono::Duration::hours(1);
        let second = f
            .registry
            .install(&pkg, &TrustStore::new(), &mut yes, later)
            .unwrap();
        assert_eq!(second.installed_at, later);
        assert_eq!(
            InstalledApp {
                installed_at: first.installed_at,
                ..second
            },
            first
        );
        assert!(!second_data_has_user_file(&f.registry));
    }

    fn second_data_has_user_file(r: &Registry) -> bool {
        r.data_dir("com.example.app").join("user.txt").exists()
    }

    #[test]
    fn uninstall_unknown() {
        let f = fixture();
        assert!(matches!(
            f.registry.uninstall("com.nope"),
            Err(InstallError::NotInstalled(_))
        ));
    }

    #[test]
    fn list_sorted_and_corruption_detected() {
        let f = fixture();
        assert!(f.registry.list_installed().unwrap().is_empty());
        let b = package(&f, "org.b", "1.0", &key(1), "b.air");
        let a = package(&f, "com.a", "2.0", &key(2), "a.air");
        f.registry
            .install(&b, &TrustStore::new(), &mut yes, now())
            .unwrap();
        f.registry
            .install(&a, &TrustStore::new(), &mut yes, now())
            .unwrap();
        let ids: Vec<_> = f
            .registry
            .list_installed()
            .unwrap()
            .into_iter()
            .map(|a| a.id)
            .collect();
        assert_eq!(ids, ["com.a", "org.b"]);

        let lines = f.registry.index_lines().unwrap();
        assert_eq!(lines.concat().into_bytes(), index_bytes(&f.registry).unwrap());

        let text = String::from_utf8(index_bytes(&f.registry).unwrap()).unwrap();
        let truncated = &text[..text.find('\n').unwrap() - 10];
        fs::write(f.registry.index_path(), format!("{truncated}\n")).unwrap();
        assert!(matches!(
            f.registry.list_installed(),
            Err(InstallError::CorruptIndex { line: 1, .. })
        ));
        fs::write(f.registry.index_path(), &text[..text.len() - 3]).unwrap();
        assert!(matches!(
            f.registry.list_installed(),
            Err(InstallError::CorruptIndex { .. })
        ));
    }

    #[test]
    fn failed_index_write_leaves_index_identical() {
        let f = fixture();
        let a = package(&f, "com.a", "1.0", &key(1), "a.air");
        let b = package(&f, "com.b", "1.0", &key(1), "b.air");
        f.registry
            .install(&a, &TrustStore::new(), &mut yes, now())
            .unwrap();
        let before = index_bytes(&f.registry).unwrap();

        fsutil::FAIL_BEFORE_RENAME.with(|x| x.set(true));
        assert!(matches!(
            f.registry.install(&b, &TrustStore::new(), &mut yes, now()),
            Err(InstallError::Io { .. })
        ));
        assert_eq!(index_bytes(&f.registry).unwrap(), before);
        assert!(!f.registry.app_dir("com.b").exists());

        fsutil::FAIL_BEFORE_RENAME.with(|x| x.set(true));
        assert!(f.registry.uninstall("com.a").is_err());
        assert_eq!(index_bytes(&f.registry).unwrap(), before);
    }

    #[test]
    fn update_flow() {
        let f = fixture();
        let v10 = package(&f, "com.example.app", "1.0", &key(1), "v10.air");
        let v11 = package(&f, "com.example.app", "1.1", &key(1), "v11.air");
        let other_key = package(&f, "com.example.app", "1.2", &key(2), "evil.air");
        let trust = TrustStore::new();

        assert!(matches!(
            f.registry.update(&v11, &trust, &mut yes, false, now()),
            Err(InstallError::NotInstalled(_))
        ));

        let app = f.registry.install(&v10, &trust, &mut yes, now()).unwrap();
        fs::write(app.data_dir.join("store.tsv"), b"last_feed\thttp://x/\n").unwrap();

        let updated = f.registry.update(&v11, &trust, &mut yes, false, now()).unwrap();
        assert_eq!(updated.version, "1.1");
        assert_eq!(
            fs::read(updated.data_dir.join("store.tsv")).unwrap(),
            b"last_feed\thttp://x/\n"
        );
        let entry = fs::read_to_string(updated.files_dir.join("index.feedapp")).unwrap();
        assert!(entry.contains("# 1.1"));
        assert_eq!(f.registry.descriptor("com.example.app").unwrap().version, "1.1");
        assert!(!f.registry.app_dir("com.example.app").join(".files-old").exists());

        let before = index_bytes(&f.registry);
        assert!(matches!(
            f.registry.update(&other_key, &trust, &mut yes, false, now()),
            Err(InstallError::PublisherKeyMismatch)
        ));
        assert!(matches!(
            f.registry.update(&v10, &trust, &mut yes, false, now()),
            Err(InstallError::Downgrade { .. })
        ));
        assert!(matches!(
            f.registry.update(&v11, &trust, &mut yes, false, now()),
            Err(InstallError::Downgrade { .. })
        ));
        assert!(matches!(
            f.registry.update(&v10, &trust, &mut |_| false, true, now()),
            Err(InstallError::ConsentRefused)
        ));
        assert_eq!(index_bytes(&f.registry), before);

        let forced = f.registry.update(&v10, &trust, &mut yes, true, now()).unwrap();
        assert_eq!(forced.version, "1.0");
        assert!(forced.data_dir.join("store.tsv").exists());
    }

    #[test]
    fn failed_update_rolls_back() {
        let f = fixture();
        let v10 = package(&f, "com.example.app", "1.0", &key(1), "v10.air");
        let v11 = package(&f, "com.example.app", "1.1", &key(1), "v11.air");
        f.registry
            .install(&v10, &TrustStore::new(), &mut yes, now())
            .unwrap();
        let before = index_bytes(&f.registry).unwrap();

        fsutil::FAIL_BEFORE_RENAME.with(|x| x.set(true));
        assert!(f
            .registry
            .update(&v11, &TrustStore::new(), &mut yes, false, now())
            .is_err());
        assert_eq!(index_bytes(&f.registry).unwrap(), before);
        let entry =
            fs::read_to_string(f.registry.files_dir("com.example.app").join("index.feedapp")).unwrap();
        assert!(entry.contains("# 1.0"));
        assert_eq!(f.registry.descriptor("com.example.app").unwrap().version, "1.0");
    }

    #[test]
    fn root_from_env_prefers_mair_home() {
        let env = |pairs: &'static [(&'static str, &'static str)]| {
            move |k: &str| pairs.iter().find(|(n, _)| *n == k).map(|(_, v)| v.to_string())
        };
        assert_eq!(
            Registry::root_from_env(env(&[("MAIR_HOME", "/x"), ("HOME", "/h")])),
            PathBuf::from("/x")
        );
        assert_eq!(
            Registry::root_from_env(env(&[("HOME", "/h")])),
            PathBuf::from("/h/.miniair")
        );
    }
}
