use std::fmt::Write as _;
use std::path::Path;

use camdepth::io::{write_bytes, IoError};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const MANIFEST_FILE: &str = "run_manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// `key = value` record of one run: command, inputs, seed, resolved config
/// and a SHA-256 of every output file.
#[derive(Clone, Debug, Default)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("seed", seed);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Adds each `key = value` line of `text` under `prefix.`.
    pub fn set_block(&mut self, prefix: &str, text: &str) {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.set(&format!("{prefix}.{}", k.trim()), v.trim());
            }
        }
    }

    /// Hashes every file under `out` (sorted by path), then writes the manifest there.
    pub fn finish(mut self, out: &Path) -> Result<(), IoError> {
        let mut files: Vec<_> = WalkDir::new(out)
            .into_iter()
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file() && e.file_name() != MANIFEST_FILE)
            .map(|e| e.into_path())
            .collect();
        files.sort();
        for path in files {
            let bytes = std::fs::read(&path).map_err(|e| IoError::Io {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let rel = path
                .strip_prefix(out)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            self.set(&format!("sha256.{rel}"), sha256_hex(&bytes));
        }
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        write_bytes(&out.join(MANIFEST_FILE), s.as_bytes())
    }
}
