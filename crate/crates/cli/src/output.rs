//! Output directory writer and run record.
//!
//! Every file goes through [`OutputWriter::write`]: bytes land in a temporary
//! file in the output directory and are renamed into place, then the path and
//! content hash join the manifest. The run record itself is written last and
//! is not part of its own manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const RECORD_FILE: &str = "run_record.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub started: String,
    pub finished: String,
    pub threads: usize,
    pub exit_code: i32,
    pub interrupted: bool,
    pub outputs: Vec<ManifestEntry>,
}

pub struct OutputWriter {
    dir: PathBuf,
    manifest: Vec<ManifestEntry>,
}

impl OutputWriter {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    /// Atomically writes `rel` and records it. Rewriting a path replaces its
    /// manifest entry.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.put(rel, bytes)?;
        let entry = ManifestEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        };
        match self.manifest.iter_mut().find(|m| m.path == rel) {
            Some(m) => *m = entry,
            None => self.manifest.push(entry),
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    fn put(&self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.dir.join(rel);
        let parent = target.parent().unwrap_or(&self.dir);
        let io = |e: std::io::Error| CliError::Io(format!("write {}: {e}", target.display()));
        std::fs::create_dir_all(parent).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(io)?;
        tmp.write_all(bytes).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&target).map_err(|e| io(e.error))?;
        Ok(())
    }

    /// Writes the run record (outside the manifest) and returns it.
    pub fn finish(self, mut record: RunRecord) -> Result<RunRecord, CliError> {
        record.outputs = self.manifest.clone();
        let mut bytes = serde_json::to_vec_pretty(&record).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.put(RECORD_FILE, &bytes)?;
        Ok(record)
    }
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_tracks_hashes_and_rewrites() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = OutputWriter::create(dir.path()).unwrap();
        w.write("a.txt", b"abc").unwrap();
        w.write("sub/b.txt", b"").unwrap();
        w.write("a.txt", b"abcd").unwrap();
        let m = w.manifest();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].path, "a.txt");
        assert_eq!(m[0].bytes, 4);
        assert_eq!(
            m[0].sha256,
            "88d4266fd4e6338d13b845fcf289579d209c897823b9217da3e161936f031589"
        );
        assert_eq!(
            m[1].sha256,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(std::fs::read(dir.path().join("a.txt")).unwrap(), b"abcd");
        assert!(dir.path().join("sub/b.txt").exists());
        // no temporaries left behind
        let n = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(n, 2);
    }
}
