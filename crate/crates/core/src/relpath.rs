//! Relative `/`-separated paths as used in manifests, descriptors and the
//! sandboxed file API.

use std::path::{Path, PathBuf};

/// Checks that `p` is a non-empty relative path with `/` separators and no
/// empty, `.` or `..` segments.
pub fn check(p: &str) -> Result<(), &'static str> {
    if p.is_empty() {
        return Err("path is empty");
    }
    if p.starts_with('/') {
        return Err("path is absolute");
    }
    if p.contains('\\') {
        return Err("path contains a backslash");
    }
    if p.contains('\0') {
        return Err("path contains NUL");
    }
    for segment in p.split('/') {
        match segment {
            "" => return Err("path has an empty segment"),
            "." => return Err("path has a `.` segment"),
            ".." => return Err("path has a `..` segment"),
            _ => {}
        }
    }
    Ok(())
}

/// Joins a checked relative path onto `base`.
pub fn join(base: &Path, p: &str) -> Result<PathBuf, &'static str> {
    check(p)?;
    let mut out = base.to_path_buf();
    out.extend(p.split('/'));
    Ok(out)
}
