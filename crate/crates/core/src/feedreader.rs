//! The built-in feed reader engine.
//!
//! An installed app whose content file is a `.feedapp` config is run by this
//! engine: take a feed URL from the clipboard (or the config), fetch it,
//! parse it leniently and render every item.
//!
//! Config format, one `key=value` per line:
//!
//! ```text
//! engine=feedreader
//! source=clipboard            # or source=url:http://example.com/feed
//! output=html                 # optional, html (default) or text
//! ```
//!
//! Comments are not part of the format; the ones above are for the reader.

use std::fmt;
use std::io::Read;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::header::LOCATION;
use url::Url;

use crate::rss::{self, FeedError};
use crate::runtime_api::{Access, Capability, RuntimeError, SandboxContext};

pub const EMPTY_CLIPBOARD_MESSAGE: &str = "Please copy a RSS feed link to the clipboard.";

/// Store key recording the most recently resolved feed URL.
pub const LAST_FEED_KEY: &str = "last_feed";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeedSource {
    Clipboard,
    Url(Url),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum OutputMode {
    #[default]
    Html,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedAppConfig {
    pub source: FeedSource,
    pub output: OutputMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FetchPolicy {
    pub max_redirects: u32,
    pub timeout: Duration,
    pub max_body: u64,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        FetchPolicy {
            max_redirects: 5,
            timeout: Duration::from_secs(10),
            max_body: 8 * 1024 * 1024,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("more than {0} redirects")]
    TooManyRedirects(u32),
    #[error("timed out")]
    Timeout,
    #[error("HTTP status {0}")]
    HttpStatus(u16),
    #[error("response body exceeds {0} bytes")]
    BodyTooLarge(u64),
    #[error("connection failed: {0}")]
    ConnectFailure(String),
    #[error("unsupported URL `{0}`")]
    BadUrl(String),
}

#[derive(Debug, thiserror::Error)]
pub enum FeedAppError {
    #[error("bad feedapp config: {0}")]
    BadConfig(String),
    #[error("engine `{0}` is not supported")]
    WrongEngine(String),
    #[error("{EMPTY_CLIPBOARD_MESSAGE}")]
    EmptyClipboard,
    #[error("not an http(s) URL: `{0}`")]
    BadUrl(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Feed(#[from] FeedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Resolve,
    Store,
    Fetch,
    Parse,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Resolve => "resolve",
            Stage::Store => "store",
            Stage::Fetch => "fetch",
            Stage::Parse => "parse",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {error}")]
pub struct RunError {
    pub stage: Stage,
    #[source]
    pub error: FeedAppError,
}

fn at(stage: Stage) -> impl FnOnce(FeedAppError) -> RunError {
    move |error| RunError { stage, error }
}

fn http_url(text: &str) -> Option<Url> {
    Url::parse(text)
        .ok()
        .filter(|u| matches!(u.scheme(), "http" | "https") && u.has_host())
}

pub fn parse_feedapp_config(bytes: &[u8]) -> Result<FeedAppConfig, FeedAppError> {
    let bad = |m: String| FeedAppError::BadConfig(m);
    let text = std::str::from_utf8(bytes).map_err(|_| bad("not UTF-8".into()))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected key=value", n + 1)))?;
        pairs.push((k, v));
    }

    match pairs.iter().find(|(k, _)| *k == "engine") {
        None => return Err(bad("missing `engine`".into())),
        Some((_, "feedreader")) => {}
        Some((_, other)) => return Err(FeedAppError::WrongEngine(other.to_string())),
    }

    let (mut source, mut output, mut engine_seen) = (None, None, false);
    for (k, v) in pairs {
        let dup = match k {
            "engine" => std::mem::replace(&mut engine_seen, true),
            "source" => {
                let s = match v.strip_prefix("url:") {
                    _ if v == "clipboard" => FeedSource::Clipboard,
                    Some(u) => {
                        FeedSource::Url(http_url(u).ok_or_else(|| bad(format!("bad source URL `{u}`")))?)
                    }
                    None => return Err(bad(format!("bad source `{v}`"))),
                };
                source.replace(s).is_some()
            }
            "output" => {
                let o = match v {
                    "html" => OutputMode::Html,
                    "text" => OutputMode::Text,
                    _ => return Err(bad(format!("bad output `{v}`"))),
                };
                output.replace(o).is_some()
            }
            _ => return Err(bad(format!("unknown key `{k}`"))),
        };
        if dup {
            return Err(bad(format!("duplicate key `{k}`")));
        }
    }
    Ok(FeedAppConfig {
        source: source.ok_or_else(|| bad("missing `source`".into()))?,
        output: output.unwrap_or_default(),
    })
}

/// The feed URL to fetch. Clipboard text is trimmed before parsing.
pub fn resolve_feed_url(ctx: &SandboxContext, cfg: &FeedAppConfig) -> Result<Url, FeedAppError> {
    match &cfg.source {
        FeedSource::Url(u) => Ok(u.clone()),
        FeedSource::Clipboard => {
            let text = ctx.clipboard_get()?.unwrap_or_default();
            let text = text.trim();
            if text.is_empty() {
                return Err(FeedAppError::EmptyClipboard);
            }
            http_url(text).ok_or_else(|| FeedAppError::BadUrl(text.to_string()))
        }
    }
}

fn client_for(url: &Url) -> Result<Client, FetchError> {
    let mut b = Client::builder().redirect(reqwest::redirect::Policy::none());
    let loopback = match url.host() {
        Some(url::Host::Ipv4(a)) => a.is_loopback(),
        Some(url::Host::Ipv6(a)) => a.is_loopback(),
        Some(url::Host::Domain(d)) => d.eq_ignore_ascii_case("localhost"),
        None => false,
    };
    if loopback {
        b = b.no_proxy();
    }
    b.build().map_err(|e| FetchError::ConnectFailure(e.to_string()))
}

fn transport(e: reqwest::Error) -> FetchError {
    if e.is_timeout() {
        FetchError::Timeout
    } else {
        FetchError::ConnectFailure(e.to_string())
    }
}

/// GETs `url`, following at most `policy.max_redirects` redirects. Only a
/// final 200 succeeds. The timeout covers the whole exchange.
pub fn fetch_url(url: &Url, policy: &FetchPolicy) -> Result<Vec<u8>, FetchError> {
    let deadline = Instant::now() + policy.timeout;
    let mut current = url.clone();
    let mut redirects = 0;
    loop {
        if !matches!(current.scheme(), "http" | "https") {
            return Err(FetchError::BadUrl(current.to_string()));
        }
        let remaining = deadline
            .checked_duration_since(Instant::now())
            .filter(|d| !d.is_zero())
            .ok_or(FetchError::Timeout)?;
        let resp = client_for(&current)?
            .get(current.clone())
            .timeout(remaining)
            .send()
            .map_err(transport)?;
        let status = resp.status();

        if status.is_redirection() {
            let Some(next) = resp
                .headers()
                .get(LOCATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|loc| current.join(loc).ok())
            else {
                return Err(FetchError::HttpStatus(status.as_u16()));
            };
            redirects += 1;
            if redirects > policy.max_redirects {
                return Err(FetchError::TooManyRedirects(policy.max_redirects));
            }
            current = next;
            continue;
        }
        if status != reqwest::StatusCode::OK {
            return Err(FetchError::HttpStatus(status.as_u16()));
        }
        if resp.content_length().is_some_and(|n| n > policy.max_body) {
            return Err(FetchError::BodyTooLarge(policy.max_body));
        }
        let mut body = Vec::new();
        resp.take(policy.max_body + 1)
            .read_to_end(&mut body)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::TimedOut || Instant::now() >= deadline {
                    FetchError::Timeout
                } else {
                    FetchError::ConnectFailure(e.to_string())
                }
            })?;
        if body.len() as u64 > policy.max_body {
            return Err(FetchError::BodyTooLarge(policy.max_body));
        }
        return Ok(body);
    }
}

/// Resolves, records, fetches, parses and renders. Nothing touches the
/// network unless resolution succeeded.
pub fn run_feed_app(
    ctx: &SandboxContext,
    cfg: &FeedAppConfig,
    policy: &FetchPolicy,
) -> Result<String, RunError> {
    let url = resolve_feed_url(ctx, cfg).map_err(at(Stage::Resolve))?;
    ctx.store_put(LAST_FEED_KEY, url.as_str())
        .map_err(|e| at(Stage::Store)(e.into()))?;
    if ctx.check_access(Capability::Network) == Access::Deny {
        return Err(at(Stage::Fetch)(
            RuntimeError::SandboxDenied(Capability::Network).into(),
        ));
    }
    let body = fetch_url(&url, policy).map_err(|e| at(Stage::Fetch)(e.into()))?;
    let feed = rss::parse_feed(&body).map_err(|e| at(Stage::Parse)(e.into()))?;
    Ok(match cfg.output {
        OutputMode::Html => rss::render_feed_html(&feed),
        OutputMode::Text => rss::render_feed_text(&feed),
    })
}
