//! Application descriptor (`application.xml`): parsing, validation and the
//! canonical serialization that package signatures cover.
//!
//! Structural problems (missing required elements, values that do not match
//! their grammar) are rejected by [`parse_descriptor`]. Cross-field rules
//! such as chrome/transparency compatibility and size bounds are reported by
//! [`validate_descriptor`].

use std::fmt;

use crate::relpath;
use crate::xml::{self, Element, XmlError};

pub const MAX_ID_LEN: usize = 212;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppDescriptor {
    pub id: String,
    pub name: String,
    pub filename: String,
    pub version: String,
    pub window: WindowConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowConfig {
    /// Package entry launched by `run`.
    pub content: String,
    pub system_chrome: SystemChrome,
    pub transparent: bool,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub min_width: Option<u32>,
    pub min_height: Option<u32>,
    pub max_width: Option<u32>,
    pub max_height: Option<u32>,
}

impl WindowConfig {
    pub fn new(content: impl Into<String>) -> Self {
        WindowConfig {
            content: content.into(),
            system_chrome: SystemChrome::Standard,
            transparent: false,
            width: None,
            height: None,
            min_width: None,
            min_height: None,
            max_width: None,
            max_height: None,
        }
    }
}

/// Window frame drawn by the OS (`Standard`) or by the app itself (`None`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemChrome {
    Standard,
    None,
}

impl SystemChrome {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemChrome::Standard => "standard",
            SystemChrome::None => "none",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DescriptorError {
    #[error(transparent)]
    MalformedXml(#[from] XmlError),
    #[error("missing element `{0}`")]
    MissingElement(String),
    #[error("invalid value at `{path}`: {reason}")]
    InvalidValue { path: String, reason: String },
    #[error("invalid descriptor: {}", join_violations(.0))]
    InvalidDescriptor(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationCode {
    EmptyName,
    BadId,
    IdTooLong,
    BadVersion,
    BadFilename,
    BadContentPath,
    TransparentRequiresCustomChrome,
    ZeroSize,
    MinExceedsSize,
    SizeExceedsMax,
    MinExceedsMax,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::EmptyName => "EMPTY_NAME",
            ViolationCode::BadId => "BAD_ID",
            ViolationCode::IdTooLong => "ID_TOO_LONG",
            ViolationCode::BadVersion => "BAD_VERSION",
            ViolationCode::BadFilename => "BAD_FILENAME",
            ViolationCode::BadContentPath => "BAD_CONTENT_PATH",
            ViolationCode::TransparentRequiresCustomChrome => "TRANSPARENT_REQUIRES_CUSTOM_CHROME",
            ViolationCode::ZeroSize => "ZERO_SIZE",
            ViolationCode::MinExceedsSize => "MIN_EXCEEDS_SIZE",
            ViolationCode::SizeExceedsMax => "SIZE_EXCEEDS_MAX",
            ViolationCode::MinExceedsMax => "MIN_EXCEEDS_MAX",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Violation {
    pub code: ViolationCode,
    /// Descriptor field the rule applies to, e.g. `window.width`.
    pub field: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.code.as_str(), self.field)
    }
}

/// Reverse-DNS identifier grammar: dot-separated labels of ASCII
/// alphanumerics and inner hyphens.
pub fn is_valid_id_syntax(id: &str) -> bool {
    !id.is_empty()
        && id.split('.').all(|label| {
            let b = label.as_bytes();
            !b.is_empty()
                && b.iter().all(|c| c.is_ascii_alphanumeric() || *c == b'-')
                && b[0] != b'-'
                && b[b.len() - 1] != b'-'
        })
}

/// One to three dot-separated runs of ASCII digits.
pub fn is_valid_version(v: &str) -> bool {
    let parts: Vec<&str> = v.split('.').collect();
    (1..=3).contains(&parts.len())
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.bytes().all(|c| c.is_ascii_digit()))
}

pub fn is_valid_filename(f: &str) -> bool {
    !f.is_empty() && !f.contains(['/', '\\', '\0']) && !f.contains("..")
}

/// Lists every violated invariant once; an empty list means `d` is valid.
pub fn validate_descriptor(d: &AppDescriptor) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, field| out.push(Violation { code, field });

    if !is_valid_id_syntax(&d.id) {
        push(ViolationCode::BadId, "id");
    }
    if d.id.len() > MAX_ID_LEN {
        push(ViolationCode::IdTooLong, "id");
    }
    if d.name.is_empty() {
        push(ViolationCode::EmptyName, "name");
    }
    if !is_valid_filename(&d.filename) {
        push(ViolationCode::BadFilename, "filename");
    }
    if !is_valid_version(&d.version) {
        push(ViolationCode::BadVersion, "version");
    }

    let w = &d.window;
    if relpath::check(&w.content).is_err() || w.content.trim() != w.content {
        push(ViolationCode::BadContentPath, "window.content");
    }
    if w.transparent && w.system_chrome != SystemChrome::None {
        push(
            ViolationCode::TransparentRequiresCustomChrome,
            "window.transparent",
        );
    }

    let sizes = [
        ("window.width", w.width),
        ("window.height", w.height),
        ("window.minWidth", w.min_width),
        ("window.minHeight", w.min_height),
        ("window.maxWidth", w.max_width),
        ("window.maxHeight", w.max_height),
    ];
    for (field, value) in sizes {
        if value == Some(0) {
            push(ViolationCode::ZeroSize, field);
        }
    }

    let bounds = [
        ("window.width", w.min_width, w.width, w.max_width),
        ("window.height", w.min_height, w.height, w.max_height),
    ];
    for (field, min, size, max) in bounds {
        if let (Some(min), Some(size)) = (min, size) {
            if min > size {
                push(ViolationCode::MinExceedsSize, field);
            }
        }
        if let (Some(size), Some(max)) = (size, max) {
            if size > max {
                push(ViolationCode::SizeExceedsMax, field);
            }
        }
        if let (Some(min), Some(max)) = (min, max) {
            if min > max {
                push(ViolationCode::MinExceedsMax, field);
            }
        }
    }
    out
}

pub fn parse_descriptor(xml_bytes: &[u8]) -> Result<AppDescriptor, DescriptorError> {
    let root = xml::parse(xml_bytes)?;
    if root.local_name() != "application" {
        return Err(DescriptorError::MissingElement("application".into()));
    }

    let id = required(&root, "application", "id")?.trim().to_string();
    if !is_valid_id_syntax(&id) {
        return Err(invalid("application/id", "not a reverse-DNS identifier"));
    }
    if id.len() > MAX_ID_LEN {
        return Err(invalid(
            "application/id",
            format!("longer than {MAX_ID_LEN} bytes"),
        ));
    }

    // Free-text fields are kept verbatim; grammar-restricted ones are trimmed.
    let name = required(&root, "application", "name")?;
    if name.is_empty() {
        return Err(invalid("application/name", "must not be empty"));
    }

    let filename = required(&root, "application", "filename")?;
    if !is_valid_filename(&filename) {
        return Err(invalid(
            "application/filename",
            "must be non-empty with no path separators or `..`",
        ));
    }

    let version = required(&root, "application", "version")?.trim().to_string();
    if !is_valid_version(&version) {
        return Err(invalid(
            "application/version",
            "expected 1-3 dot-separated non-negative integers",
        ));
    }

    let win = root
        .child("initialWindow")
        .ok_or_else(|| DescriptorError::MissingElement("application/initialWindow".into()))?;
    let content = required(win, "application/initialWindow", "content")?
        .trim()
        .to_string();
    if let Err(reason) = relpath::check(&content) {
        return Err(invalid("application/initialWindow/content", reason));
    }

    let system_chrome = match optional(win, "systemChrome").as_deref() {
        None | Some("standard") => SystemChrome::Standard,
        Some("none") => SystemChrome::None,
        Some(other) => {
            return Err(invalid(
                "application/initialWindow/systemChrome",
                format!("expected `standard` or `none`, found `{other}`"),
            ))
        }
    };
    let transparent = match optional(win, "transparent").as_deref() {
        None | Some("false") => false,
        Some("true") => true,
        Some(other) => {
            return Err(invalid(
                "application/initialWindow/transparent",
                format!("expected `true` or `false`, found `{other}`"),
            ))
        }
    };

    let size = |name: &str| -> Result<Option<u32>, DescriptorError> {
        match optional(win, name) {
            None => Ok(None),
            Some(raw) => match raw.parse::<u32>() {
                Ok(v) if v > 0 && raw.bytes().all(|c| c.is_ascii_digit()) => Ok(Some(v)),
                _ => Err(invalid(
                    &format!("application/initialWindow/{name}"),
                    format!("expected a positive integer, found `{raw}`"),
                )),
            },
        }
    };

    Ok(AppDescriptor {
        id,
        name,
        filename,
        version,
        window: WindowConfig {
            content,
            system_chrome,
            transparent,
            width: size("width")?,
            height: size("height")?,
            min_width: size("minWidth")?,
            min_height: size("minHeight")?,
            max_width: size("maxWidth")?,
            max_height: size("maxHeight")?,
        },
    })
}

fn required(parent: &Element, parent_path: &str, name: &str) -> Result<String, DescriptorError> {
    parent
        .child(name)
        .map(Element::text)
        .ok_or_else(|| DescriptorError::MissingElement(format!("{parent_path}/{name}")))
}

fn optional(parent: &Element, name: &str) -> Option<String> {
    parent.child(name).map(|e| e.text().trim().to_string())
}

fn invalid(path: &str, reason: impl Into<String>) -> DescriptorError {
    DescriptorError::InvalidValue {
        path: path.to_string(),
        reason: reason.into(),
    }
}

/// Deterministic XML form of a valid descriptor.
pub fn canonical_descriptor(d: &AppDescriptor) -> Result<Vec<u8>, DescriptorError> {
    let violations = validate_descriptor(d);
    if !violations.is_empty() {
        return Err(DescriptorError::InvalidDescriptor(violations));
    }

    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<application>\n");
    let mut line = |indent: &str, tag: &str, value: &str| {
        out.push_str(&format!("{indent}<{tag}>{}</{tag}>\n", xml::escape_text(value)));
    };
    line("  ", "id", &d.id);
    line("  ", "name", &d.name);
    line("  ", "filename", &d.filename);
    line("  ", "version", &d.version);

    let w = &d.window;
    let mut window = vec![
        ("content", w.content.clone()),
        ("systemChrome", w.system_chrome.as_str().to_string()),
        ("transparent", w.transparent.to_string()),
    ];
    let sizes = [
        ("width", w.width),
        ("height", w.height),
        ("minWidth", w.min_width),
        ("minHeight", w.min_height),
        ("maxWidth", w.max_width),
        ("maxHeight", w.max_height),
    ];
    window.extend(
        sizes
            .into_iter()
            .filter_map(|(tag, v)| v.map(|v| (tag, v.to_string()))),
    );

    out.push_str("  <initialWindow>\n");
    for (tag, value) in &window {
        out.push_str(&format!("    <{tag}>{}</{tag}>\n", xml::escape_text(value)));
    }
    out.push_str("  </initialWindow>\n</application>\n");
    Ok(out.into_bytes())
}

/// `myname.mypage.com` becomes `com.mypage.myname`.
pub fn reverse_domain_id(host: &str) -> Result<String, DescriptorError> {
    let labels: Vec<&str> = host.split('.').collect();
    if labels.iter().any(|l| l.is_empty()) {
        return Err(invalid("host", "empty label"));
    }
    Ok(labels.into_iter().rev().collect::<Vec<_>>().join("."))
}
