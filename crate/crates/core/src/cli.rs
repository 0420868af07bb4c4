//! The `miniair` command line.
//!
//! Data goes to stdout, diagnostics to stderr as a single `error: ` line.
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | usage error |
//! | 2 | integrity or signature failure |
//! | 3 | certificate invalid |
//! | 4 | sandbox denied |
//! | 5 | not found / not installed / fetch failed |
//! | 6 | parse error (XML, feed, config) |
//! | 7 | precondition failed (empty clipboard, no consent, downgrade, I/O) |

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::{Parser, Subcommand, ValueEnum};

use crate::archive::{self, ArchiveError};
use crate::descriptor;
use crate::digest::Digest;
use crate::feedreader::{self, FeedAppError, FetchPolicy, OutputMode, RunError};
use crate::installer::{Disclosure, InstallError, Registry};
use crate::runtime_api::{self, Clipboard, Origin, RuntimeError};
use crate::signing::{self, KeyPair, PublisherStatus, SigningError, TrustStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INTEGRITY: i32 = 2;
pub const EXIT_CERTIFICATE: i32 = 3;
pub const EXIT_SANDBOX: i32 = 4;
pub const EXIT_NOT_FOUND: i32 = 5;
pub const EXIT_PARSE: i32 = 6;
pub const EXIT_PRECONDITION: i32 = 7;

/// Everything a run of the binary depends on besides the standard streams.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    /// Full argument vector, program name first.
    pub args: Vec<String>,
    pub env: HashMap<String, String>,
    /// Whether stdin is a terminal a prompt can be answered on.
    pub interactive: bool,
}

#[derive(Parser, Debug)]
#[command(
    name = "miniair",
    version,
    about = "Package, sign, install and run miniair applications"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a signing key and a self-signed publisher certificate.
    Certificate {
        #[arg(long)]
        publisher: String,
        #[arg(long)]
        id: String,
        #[arg(long)]
        key_out: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// 64 hex digits; random when omitted.
        #[arg(long)]
        seed: Option<String>,
        #[arg(long, default_value_t = 365)]
        days: u32,
    },
    /// Build a signed package from a content directory.
    Package {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        descriptor: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a package's integrity, signature and publisher.
    Verify {
        package: PathBuf,
        #[arg(long)]
        trust_dir: Option<PathBuf>,
    },
    /// Install a package after showing what it is and who signed it.
    Install {
        package: PathBuf,
        #[arg(long)]
        trust_dir: Option<PathBuf>,
        /// Consent without prompting.
        #[arg(long)]
        yes: bool,
    },
    /// Remove an installed app and its data.
    Uninstall { id: String },
    /// Replace an installed app with a newer package from the same key.
    Update {
        package: PathBuf,
        #[arg(long)]
        trust_dir: Option<PathBuf>,
        /// Allow installing an equal or older version.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        yes: bool,
    },
    /// Print the registry index.
    List,
    /// Run an installed app.
    Run {
        id: String,
        #[arg(long, value_enum)]
        output: Option<Output>,
    },
    /// Read or replace the shared clipboard text.
    #[command(subcommand)]
    Clipboard(ClipboardCmd),
    /// Publish to or poll an inter-app message channel.
    #[command(subcommand)]
    Bus(BusCmd),
}

#[derive(Subcommand, Debug)]
enum ClipboardCmd {
    Get,
    Set {
        #[arg(allow_hyphen_values = true)]
        text: String,
    },
}

#[derive(Subcommand, Debug)]
enum BusCmd {
    Publish {
        channel: String,
        #[arg(allow_hyphen_values = true)]
        message: String,
        /// App id to publish as, or a URL to act as network content.
        #[arg(long = "as")]
        sender: String,
    },
    Poll {
        channel: String,
        #[arg(long, default_value_t = 0)]
        after: u64,
        #[arg(long = "as")]
        sender: String,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Output {
    Html,
    Text,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        fail(EXIT_PRECONDITION, format!("output: {e}"))
    }
}

fn io_failure(path: &Path, e: &io::Error) -> Failure {
    let code = if e.kind() == io::ErrorKind::NotFound {
        EXIT_NOT_FOUND
    } else {
        EXIT_PRECONDITION
    };
    fail(code, format!("{}: {e}", path.display()))
}

fn archive_failure(e: ArchiveError) -> Failure {
    match &e {
        ArchiveError::Io { path, source } => io_failure(path, source),
        ArchiveError::InvalidDescriptor(_) => fail(EXIT_PARSE, format!("descriptor: {e}")),
        ArchiveError::MissingContentEntry(_) => fail(EXIT_NOT_FOUND, e.to_string()),
        ArchiveError::KeyMismatch
        | ArchiveError::UnsupportedFileType(_)
        | ArchiveError::InvalidPath { .. }
        | ArchiveError::PathEscape(_) => fail(EXIT_PRECONDITION, e.to_string()),
        _ => fail(EXIT_INTEGRITY, format!("integrity: {e}")),
    }
}

fn install_failure(e: InstallError) -> Failure {
    match e {
        InstallError::Package(a) => archive_failure(a),
        InstallError::IntegrityFailure(paths) => fail(
            EXIT_INTEGRITY,
            format!("integrity: content mismatch in {}", paths.join(", ")),
        ),
        InstallError::SignatureFailure => fail(EXIT_INTEGRITY, format!("signature: {e}")),
        InstallError::CertificateInvalid(_) => fail(EXIT_CERTIFICATE, e.to_string()),
        InstallError::Descriptor(_) | InstallError::BadVersion(_) => fail(EXIT_PARSE, e.to_string()),
        InstallError::CorruptIndex { .. } | InstallError::CorruptApp { .. } => {
            fail(EXIT_PARSE, e.to_string())
        }
        InstallError::NotInstalled(_) => fail(EXIT_NOT_FOUND, e.to_string()),
        InstallError::Io { ref path, ref source } => io_failure(path, source),
        InstallError::AlreadyInstalled(_)
        | InstallError::ConsentRefused
        | InstallError::PublisherKeyMismatch
        | InstallError::Downgrade { .. } => fail(EXIT_PRECONDITION, e.to_string()),
    }
}

fn runtime_failure(e: RuntimeError) -> Failure {
    match e {
        RuntimeError::SandboxDenied(_) => fail(EXIT_SANDBOX, e.to_string()),
        RuntimeError::NotInstalled(_) | RuntimeError::NotFound(_) => fail(EXIT_NOT_FOUND, e.to_string()),
        RuntimeError::BadUrl(_) | RuntimeError::BadChannel(_) | RuntimeError::BadKey => {
            fail(EXIT_USAGE, e.to_string())
        }
        RuntimeError::Corrupt { .. } => fail(EXIT_PARSE, e.to_string()),
        RuntimeError::Registry(inner) => install_failure(inner),
        RuntimeError::Io { ref path, ref source } => io_failure(path, source),
        RuntimeError::PathEscape(_) => fail(EXIT_PRECONDITION, e.to_string()),
    }
}

fn run_failure(e: RunError) -> Failure {
    let message = e.to_string();
    let code = match e.error {
        FeedAppError::EmptyClipboard => EXIT_PRECONDITION,
        FeedAppError::BadUrl(_) | FeedAppError::BadConfig(_) | FeedAppError::WrongEngine(_) => EXIT_PARSE,
        FeedAppError::Feed(_) => EXIT_PARSE,
        FeedAppError::Fetch(_) => EXIT_NOT_FOUND,
        FeedAppError::Runtime(r) => runtime_failure(r).code,
    };
    fail(code, message)
}

fn signing_failure(path: &Path, e: SigningError) -> Failure {
    match e {
        SigningError::Io { ref path, ref source } => io_failure(Path::new(path), source),
        _ => fail(EXIT_PARSE, format!("{}: {e}", path.display())),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| io_failure(path, &e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| io_failure(path, &e))
}

struct Ctx<'a> {
    registry: Registry,
    interactive: bool,
    stdin: &'a mut dyn BufRead,
    stdout: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn trust(&self, dir: Option<&Path>) -> Result<TrustStore, Failure> {
        let dir = dir.map_or_else(|| self.registry.trust_dir(), Path::to_path_buf);
        TrustStore::from_dir(&dir).map_err(|e| signing_failure(&dir, e))
    }

    /// Shows the disclosure and asks for consent. Without a terminal and
    /// without `--yes` the answer is no.
    fn consent(&mut self, d: &Disclosure, yes: bool) -> bool {
        let [app, publisher, access, prompt] = d.lines();
        let shown = writeln!(self.stdout, "{app}\n{publisher}\n{access}")
            .and_then(|_| write!(self.stdout, "{prompt}"))
            .and_then(|_| self.stdout.flush());
        if shown.is_err() {
            return false;
        }
        if yes {
            let _ = writeln!(self.stdout, " y");
            return true;
        }
        if !self.interactive {
            let _ = writeln!(self.stdout);
            return false;
        }
        let mut answer = String::new();
        if self.stdin.read_line(&mut answer).is_err() {
            return false;
        }
        matches!(answer.trim().to_ascii_lowercase().as_str(), "y" | "yes")
    }

    fn sandbox(&self, sender: &str) -> Result<runtime_api::SandboxContext, Failure> {
        let origin = if sender.contains("://") {
            Origin::Network(sender.to_string())
        } else {
            Origin::Application(sender.to_string())
        };
        runtime_api::open_context(origin, &self.registry).map_err(runtime_failure)
    }
}

fn dispatch(cmd: Command, cx: &mut Ctx<'_>) -> Result<(), Failure> {
    let now = Utc::now();
    match cmd {
        Command::Certificate {
            publisher,
            id,
            key_out,
            out,
            seed,
            days,
        } => {
            let seed = seed
                .map(|s| hex::decode(&s).map_err(|_| fail(EXIT_USAGE, "--seed must be 64 hex digits")))
                .transpose()?;
            let key =
                signing::generate_keypair(seed.as_deref()).map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
            let not_before = now;
            let not_after = now + chrono::Days::new(u64::from(days));
            let cert = signing::self_sign_certificate(&key, &publisher, &id, not_before, not_after)
                .map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
            write_key_file(&key_out, &key)?;
            write(&out, &cert.to_bytes())?;
            writeln!(cx.stdout, "{}", cert.fingerprint())?;
        }

        Command::Package {
            dir,
            descriptor,
            cert,
            key,
            out,
        } => {
            let d = descriptor::parse_descriptor(&read(&descriptor)?)
                .map_err(|e| fail(EXIT_PARSE, format!("descriptor: {e}")))?;
            let cert = signing::Certificate::parse(&read(&cert)?).map_err(|e| signing_failure(&cert, e))?;
            let key = KeyPair::from_key_file(&read(&key)?).map_err(|e| signing_failure(&key, e))?;
            let bytes = archive::build_package(&dir, &d, &cert, &key).map_err(archive_failure)?;
            write(&out, &bytes)?;
            writeln!(cx.stdout, "{}", Digest::of(&bytes))?;
        }

        Command::Verify { package, trust_dir } => {
            let trust = cx.trust(trust_dir.as_deref())?;
            let pkg = archive::read_package(&read(&package)?).map_err(archive_failure)?;
            let report = archive::verify_integrity(&pkg);
            let (signature_ok, status) = match pkg.certificate() {
                Ok(cert) => (
                    pkg.signature_valid(&cert),
                    signing::classify_publisher(&cert, &trust, now),
                ),
                Err(_) => (false, PublisherStatus::Invalid(signing::InvalidReason::Malformed)),
            };
            let ok = |b: bool| if b { "OK" } else { "FAIL" };
            writeln!(cx.stdout, "integrity: {}", ok(report.ok))?;
            writeln!(cx.stdout, "signature: {}", ok(signature_ok))?;
            writeln!(cx.stdout, "publisher: {status}")?;
            if !report.ok {
                let bad: Vec<_> = report.failures().map(|c| c.path.as_str()).collect();
                return Err(fail(
                    EXIT_INTEGRITY,
                    format!("integrity: content mismatch in {}", bad.join(", ")),
                ));
            }
            if !signature_ok {
                return Err(fail(
                    EXIT_INTEGRITY,
                    "signature: package signature does not verify",
                ));
            }
            if let PublisherStatus::Invalid(reason) = status {
                return Err(fail(EXIT_CERTIFICATE, format!("certificate invalid: {reason}")));
            }
        }

        Command::Install {
            package,
            trust_dir,
            yes,
        } => {
            let trust = cx.trust(trust_dir.as_deref())?;
            let registry = cx.registry.clone();
            registry
                .install(&package, &trust, &mut |d| cx.consent(d, yes), now)
                .map_err(install_failure)?;
        }

        Command::Update {
            package,
            trust_dir,
            force,
            yes,
        } => {
            let trust = cx.trust(trust_dir.as_deref())?;
            let registry = cx.registry.clone();
            registry
                .update(&package, &trust, &mut |d| cx.consent(d, yes), force, now)
                .map_err(install_failure)?;
        }

        Command::Uninstall { id } => {
            cx.registry.uninstall(&id).map_err(install_failure)?;
        }

        Command::List => {
            for line in cx.registry.index_lines().map_err(install_failure)? {
                cx.stdout.write_all(line.as_bytes())?;
            }
        }

        Command::Run { id, output } => {
            let d = cx.registry.descriptor(&id).map_err(install_failure)?;
            let content = cx.registry.files_dir(&id).join(&d.window.content);
            let mut cfg = feedreader::parse_feedapp_config(&read(&content)?)
                .map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", d.window.content)))?;
            if let Some(o) = output {
                cfg.output = match o {
                    Output::Html => OutputMode::Html,
                    Output::Text => OutputMode::Text,
                };
            }
            let ctx = cx.sandbox(&id)?;
            let rendered =
                feedreader::run_feed_app(&ctx, &cfg, &FetchPolicy::default()).map_err(run_failure)?;
            cx.stdout.write_all(rendered.as_bytes())?;
        }

        Command::Clipboard(ClipboardCmd::Get) => {
            let text = Clipboard::new(cx.registry.root())
                .get()
                .map_err(runtime_failure)?;
            cx.stdout.write_all(text.unwrap_or_default().as_bytes())?;
        }
        Command::Clipboard(ClipboardCmd::Set { text }) => {
            Clipboard::new(cx.registry.root())
                .set(&text)
                .map_err(runtime_failure)?;
        }

        Command::Bus(BusCmd::Publish {
            channel,
            message,
            sender,
        }) => {
            let seq = cx
                .sandbox(&sender)?
                .bus_publish(&channel, &message)
                .map_err(runtime_failure)?;
            writeln!(cx.stdout, "{seq}")?;
        }
        Command::Bus(BusCmd::Poll {
            channel,
            after,
            sender,
        }) => {
            for msg in cx
                .sandbox(&sender)?
                .bus_poll(&channel, after)
                .map_err(runtime_failure)?
            {
                cx.stdout.write_all(msg.to_line().as_bytes())?;
            }
        }
    }
    cx.stdout.flush()?;
    Ok(())
}

fn write_key_file(path: &Path, key: &KeyPair) -> Result<(), Failure> {
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
    opts.open(path)
        .and_then(|mut f| f.write_all(key.to_key_file().as_bytes()))
        .map_err(|e| io_failure(path, &e))
}

/// Runs one command and returns its exit code.
pub fn run_cli(
    inv: &Invocation,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(&inv.args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            let _ = writeln!(stderr, "error: {first}");
            return EXIT_USAGE;
        }
    };

    let registry = Registry::new(Registry::root_from_env(|k| inv.env.get(k).cloned()));
    let mut cx = Ctx {
        registry,
        interactive: inv.interactive,
        stdin,
        stdout,
    };
    let result = panic::catch_unwind(AssertUnwindSafe(|| dispatch(cli.command, &mut cx)))
        .unwrap_or_else(|_| Err(fail(EXIT_PRECONDITION, "internal error")));
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message.replace('\n', " "));
            f.code
        }
    }
}
