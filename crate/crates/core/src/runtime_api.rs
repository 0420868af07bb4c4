//! The local API an app runs against, gated by where its code came from.
//!
//! Installed application code may use every capability. Code from the
//! network may only use the network. Every operation checks its capability
//! before touching the filesystem.
//!
//! On-disk state under the registry root:
//!
//! - `clipboard.txt`: exact clipboard text, shared by all apps
//! - `bus/<channel>.log`: `seq<TAB>sender<TAB>time<TAB>payload` lines
//! - `apps/<id>/data/store.tsv`: `key<TAB>value` lines, sorted by key
//!
//! Bus payloads and store keys/values percent-encode `%`, TAB, LF and CR.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Utc};

use crate::fsutil::{self, escape_field, unescape_field};
use crate::installer::{InstallError, Registry};
use crate::relpath;

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";
const STORE_FILE: &str = "store.tsv";
const STORE_LOCK: &str = ".store.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Capability {
    FileRead,
    FileWrite,
    Clipboard,
    LocalStore,
    Bus,
    Network,
}

impl Capability {
    pub const ALL: [Capability; 6] = [
        Capability::FileRead,
        Capability::FileWrite,
        Capability::Clipboard,
        Capability::LocalStore,
        Capability::Bus,
        Capability::Network,
    ];
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    /// Code installed on this machine, by app id.
    Application(String),
    /// Code loaded from a URL.
    Network(String),
}

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("sandbox denies {0} to this origin")]
    SandboxDenied(Capability),
    #[error("`{0}` is not installed")]
    NotInstalled(String),
    #[error("not an absolute URL: `{0}`")]
    BadUrl(String),
    #[error("path `{0}` escapes the app's data directory")]
    PathEscape(String),
    #[error("`{0}` not found")]
    NotFound(String),
    #[error("invalid store key")]
    BadKey,
    #[error("invalid channel name `{0}`")]
    BadChannel(String),
    #[error("corrupt {what} at line {line}")]
    Corrupt { what: String, line: usize },
    #[error(transparent)]
    Registry(#[from] InstallError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RuntimeError + '_ {
    move |source| RuntimeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Execution context for one piece of app code.
#[derive(Debug)]
pub struct SandboxContext {
    origin: Origin,
    home: PathBuf,
    data_dir: Option<PathBuf>,
}

pub fn open_context(origin: Origin, registry: &Registry) -> Result<SandboxContext, RuntimeError> {
    let data_dir = match &origin {
        Origin::Application(id) => {
            if registry.get(id)?.is_none() {
                return Err(RuntimeError::NotInstalled(id.clone()));
            }
            let dir = registry.data_dir(id);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            Some(dir)
        }
        Origin::Network(url) => {
            url::Url::parse(url).map_err(|_| RuntimeError::BadUrl(url.clone()))?;
            None
        }
    };
    Ok(SandboxContext {
        origin,
        home: registry.root().to_path_buf(),
        data_dir,
    })
}

impl SandboxContext {
    pub fn origin(&self) -> &Origin {
        &self.origin
    }

    /// The directory file and store access is confined to; `None` for
    /// network code.
    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    pub fn check_access(&self, cap: Capability) -> Access {
        match (&self.origin, cap) {
            (Origin::Application(_), _) => Access::Allow,
            (Origin::Network(_), Capability::Network) => Access::Allow,
            (Origin::Network(_), _) => Access::Deny,
        }
    }

    fn require(&self, cap: Capability) -> Result<&Path, RuntimeError> {
        match (self.check_access(cap), &self.data_dir) {
            (Access::Allow, Some(dir)) => Ok(dir),
            (Access::Allow, None) if cap == Capability::Network => Ok(&self.home),
            _ => Err(RuntimeError::SandboxDenied(cap)),
        }
    }

    fn sender(&self) -> &str {
        match &self.origin {
            Origin::Application(id) => id,
            Origin::Network(url) => url,
        }
    }

    pub fn clipboard_get(&self) -> Result<Option<String>, RuntimeError> {
        self.require(Capability::Clipboard)?;
        Clipboard::new(&self.home).get()
    }

    pub fn clipboard_set(&self, text: &str) -> Result<(), RuntimeError> {
        self.require(Capability::Clipboard)?;
        Clipboard::new(&self.home).set(text)
    }

    pub fn read_file(&self, path: &str) -> Result<Vec<u8>, RuntimeError> {
        let dir = self.require(Capability::FileRead)?;
        let target = resolve_in_scope(dir, path)?;
        match fs::read(&target) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(RuntimeError::NotFound(path.to_string())),
            Err(e) => Err(io_err(&target)(e)),
        }
    }

    pub fn write_file(&self, path: &str, bytes: &[u8]) -> Result<(), RuntimeError> {
        let dir = self.require(Capability::FileWrite)?;
        let target = resolve_in_scope(dir, path)?;
        fsutil::atomic_write(&target, bytes).map_err(io_err(&target))
    }

    pub fn store(&self) -> Result<Store, RuntimeError> {
        let dir = self.require(Capability::LocalStore)?;
        Ok(Store::new(dir))
    }

    pub fn store_put(&self, key: &str, value: &str) -> Result<(), RuntimeError> {
        self.store()?.put(key, value)
    }

    pub fn store_get(&self, key: &str) -> Result<Option<String>, RuntimeError> {
        self.store()?.get(key)
    }

    pub fn store_delete(&self, key: &str) -> Result<(), RuntimeError> {
        self.store()?.delete(key)
    }

    pub fn store_list(&self) -> Result<Vec<String>, RuntimeError> {
        self.store()?.list()
    }

    pub fn bus_publish(&self, channel: &str, payload: &str) -> Result<u64, RuntimeError> {
        self.require(Capability::Bus)?;
        Bus::new(&self.home).publish(channel, self.sender(), payload, Utc::now())
    }

    pub fn bus_poll(&self, channel: &str, after_seq: u64) -> Result<Vec<BusMessage>, RuntimeError> {
        self.require(Capability::Bus)?;
        Bus::new(&self.home).poll(channel, after_seq)
    }
}

/// Joins `rel` under `scope`, refusing `..`, absolute paths and symlinks.
fn resolve_in_scope(scope: &Path, rel: &str) -> Result<PathBuf, RuntimeError> {
    let target = relpath::join(scope, rel).map_err(|_| RuntimeError::PathEscape(rel.to_string()))?;
    let mut cur = scope.to_path_buf();
    for segment in rel.split('/') {
        cur.push(segment);
        match fs::symlink_metadata(&cur) {
            Ok(m) if m.file_type().is_symlink() => return Err(RuntimeError::PathEscape(rel.to_string())),
            Ok(_) => {}
            Err(_) => break,
        }
    }
    Ok(target)
}

/// The runtime-wide text clipboard.
#[derive(Debug, Clone)]
pub struct Clipboard {
    path: PathBuf,
}

impl Clipboard {
    pub fn new(home: &Path) -> Self {
        Clipboard {
            path: home.join("clipboard.txt"),
        }
    }

    /// Current text, or `None` when never set or empty.
    pub fn get(&self) -> Result<Option<String>, RuntimeError> {
        match fs::read(&self.path) {
            Ok(bytes) if bytes.is_empty() => Ok(None),
            Ok(bytes) => String::from_utf8(bytes).map(Some).map_err(|_| RuntimeError::Io {
                path: self.path.clone(),
                source: io::Error::new(io::ErrorKind::InvalidData, "clipboard is not UTF-8"),
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&self.path)(e)),
        }
    }

    pub fn set(&self, text: &str) -> Result<(), RuntimeError> {
        fsutil::atomic_write(&self.path, text.as_bytes()).map_err(io_err(&self.path))
    }
}

/// Single-file key-value store in an app's data directory.
#[derive(Debug, Clone)]
pub struct Store {
    path: PathBuf,
    lock: PathBuf,
}

fn check_key(key: &str) -> Result<(), RuntimeError> {
    if key.is_empty() || key.chars().any(char::is_control) {
        Err(RuntimeError::BadKey)
    } else {
        Ok(())
    }
}

impl Store {
    pub fn new(data_dir: &Path) -> Self {
        Store {
            path: data_dir.join(STORE_FILE),
            lock: data_dir.join(STORE_LOCK),
        }
    }

    fn load(&self) -> Result<BTreeMap<String, String>, RuntimeError> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
            Err(e) => return Err(io_err(&self.path)(e)),
        };
        let corrupt = |line| RuntimeError::Corrupt {
            what: self.path.display().to_string(),
            line,
        };
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let (k, v) = line.split_once('\t').ok_or_else(|| corrupt(i + 1))?;
            let k = unescape_field(k).ok_or_else(|| corrupt(i + 1))?;
            let v = unescape_field(v).ok_or_else(|| corrupt(i + 1))?;
            map.insert(k, v);
        }
        Ok(map)
    }

    fn save(&self, map: &BTreeMap<String, String>) -> Result<(), RuntimeError> {
        let text: String = map
            .iter()
            .map(|(k, v)| format!("{}\t{}\n", escape_field(k), escape_field(v)))
            .collect();
        fsutil::atomic_write(&self.path, text.as_bytes()).map_err(io_err(&self.path))
    }

    fn mutate(&self, f: impl FnOnce(&mut BTreeMap<String, String>) -> bool) -> Result<(), RuntimeError> {
        let _guard = fsutil::lock_exclusive(&self.lock).map_err(io_err(&self.lock))?;
        let mut map = self.load()?;
        if f(&mut map) {
            self.save(&map)?;
        }
        Ok(())
    }

    pub fn put(&self, key: &str, value: &str) -> Result<(), RuntimeError> {
        check_key(key)?;
        self.mutate(|m| {
            m.insert(key.to_string(), value.to_string());
            true
        })
    }

    pub fn get(&self, key: &str) -> Result<Option<String>, RuntimeError> {
        check_key(key)?;
        Ok(self.load()?.remove(key))
    }

    /// Removing an absent key is not an error.
    pub fn delete(&self, key: &str) -> Result<(), RuntimeError> {
        check_key(key)?;
        self.mutate(|m| m.remove(key).is_some())
    }

    /// Keys in ascending order.
    pub fn list(&self) -> Result<Vec<String>, RuntimeError> {
        Ok(self.load()?.into_keys().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusMessage {
    pub seq: u64,
    pub sender: String,
    pub at: DateTime<Utc>,
    pub payload: String,
}

impl BusMessage {
    /// The log line for this message, newline included.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\n",
            self.seq,
            self.sender,
            self.at.format(TIME_FORMAT),
            escape_field(&self.payload)
        )
    }

    fn parse(line: &str) -> Option<Self> {
        let mut fields = line.split('\t');
        let (seq, sender, at, payload) = (fields.next()?, fields.next()?, fields.next()?, fields.next()?);
        if fields.next().is_some() || seq.starts_with('+') {
            return None;
        }
        Some(BusMessage {
            seq: seq.parse().ok().filter(|&s| s > 0)?,
            sender: sender.to_string(),
            at: NaiveDateTime::parse_from_str(at, TIME_FORMAT).ok()?.and_utc(),
            payload: unescape_field(payload)?,
        })
    }
}

pub fn is_valid_channel(name: &str) -> bool {
    (1..=64).contains(&name.len())
        && name
            .bytes()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, b'.' | b'_' | b'-'))
}

/// Per-channel append-only message logs shared by every app on the machine.
#[derive(Debug, Clone)]
pub struct Bus {
    dir: PathBuf,
}

impl Bus {
    pub fn new(home: &Path) -> Self {
        Bus {
            dir: home.join("bus"),
        }
    }

    fn log_path(&self, channel: &str) -> Result<PathBuf, RuntimeError> {
        if !is_valid_channel(channel) {
            return Err(RuntimeError::BadChannel(channel.to_string()));
        }
        Ok(self.dir.join(format!("{channel}.log")))
    }

    /// Appends one message and returns its sequence number.
    pub fn publish(
        &self,
        channel: &str,
        sender: &str,
        payload: &str,
        at: DateTime<Utc>,
    ) -> Result<u64, RuntimeError> {
        let path = self.log_path(channel)?;
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.lock().map_err(io_err(&path))?;

        let mut text = String::new();
        file.seek(SeekFrom::Start(0)).map_err(io_err(&path))?;
        file.read_to_string(&mut text).map_err(io_err(&path))?;
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        if complete != text.len() {
            // A writer died mid-line; drop the fragment before appending.
            file.set_len(complete as u64).map_err(io_err(&path))?;
        }
        let last = match text[..complete].lines().next_back() {
            None => 0,
            Some(line) => {
                let n = text[..complete].lines().count();
                BusMessage::parse(line)
                    .ok_or_else(|| RuntimeError::Corrupt {
                        what: path.display().to_string(),
                        line: n,
                    })?
                    .seq
            }
        };

        let msg = BusMessage {
            seq: last + 1,
            sender: sender.to_string(),
            at: DateTime::from_timestamp(at.timestamp(), 0).expect("in range"),
            payload: payload.to_string(),
        };
        file.write_all(msg.to_line().as_bytes()).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))?;
        Ok(msg.seq)
    }

    /// Messages with `seq > after_seq`, ascending. Unknown channels are empty.
    pub fn poll(&self, channel: &str, after_seq: u64) -> Result<Vec<BusMessage>, RuntimeError> {
        let path = self.log_path(channel)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        let mut out = Vec::new();
        for (i, line) in text[..complete].lines().enumerate() {
            let msg = BusMessage::parse(line).ok_or_else(|| RuntimeError::Corrupt {
                what: path.display().to_string(),
                line: i + 1,
            })?;
            if msg.seq > after_seq {
                out.push(msg);
            }
        }
        Ok(out)
    }
}
