//! A miniature desktop application runtime.
//!
//! Applications are described by an `application.xml` descriptor, packaged
//! with their content into a signed `.air` container, installed into a
//! machine-local registry after a publisher-trust check, and run against a
//! sandboxed local API (clipboard, scoped files, key-value store and an
//! inter-app message bus). One app engine is built in: a clipboard-driven
//! RSS reader.

pub mod archive;
pub mod cli;
pub mod descriptor;
pub mod digest;
pub mod feedreader;
pub mod fsutil;
pub mod installer;
pub mod relpath;
pub mod rss;
pub mod runtime_api;
pub mod signing;
pub mod xml;
