//! Run manifests: a flat key=value record of everything a run resolved to.
//!
//! A manifest carries the full configuration, every seed, the build version,
//! and a checksum for each file the run wrote. Feeding the recorded
//! configuration back into the same build reproduces those files bit for bit;
//! the `created_unix` stamp is informational and takes no part in that.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{byte:02x}").unwrap();
    }
    hex
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    /// Starts a manifest for the named subcommand, stamping tool version and
    /// wall-clock creation time.
    pub fn new(command: &str) -> Self {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut m = RunManifest { entries: Vec::new() };
        m.set("tool", "fluidrpm");
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("command", command);
        m.set("created_unix", created.to_string());
        m
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        debug_assert!(
            !key.contains(['=', '\n']) && !value.contains('\n'),
            "manifest entries must stay single-line"
        );
        self.entries.push((key.to_string(), value));
    }

    /// Records `file.<name>=<sha256>` for a file the run wrote.
    pub fn add_file(&mut self, name: &str, path: &Path) -> Result<()> {
        let hex = sha256_file(path)?;
        self.set(&format!("file.{name}"), hex);
        Ok(())
    }

    pub fn to_string_lossless(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string_lossless()).map_err(|e| Error::io(path, e))
    }
}
