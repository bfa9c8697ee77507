//! Artifact output: CSV metadata lines and all-or-nothing file writes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// `# seed=<seed>, config_hash=<hash>, version=<version>`
pub fn metadata_line(seed: u64, config_hash: &str) -> String {
    format!("# seed={seed}, config_hash={config_hash}, version={ARTIFACT_VERSION}")
}

/// Prepends the metadata comment to a CSV body.
pub fn with_metadata(body: &str, seed: u64, config_hash: &str) -> String {
    let mut out = metadata_line(seed, config_hash);
    out.push('\n');
    out.push_str(body);
    out
}

/// Strips a leading metadata comment, if present.
pub fn csv_body(text: &str) -> &str {
    match text.strip_prefix('#') {
        Some(rest) => rest.split_once('\n').map_or("", |(_, body)| body),
        None => text,
    }
}

/// Files written through one guard are deleted again unless the guard is
/// committed, so a failed command leaves no partial artifacts behind.
#[derive(Debug, Default)]
pub struct OutputGuard {
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new() -> Self {
        Self::default()
    }

    /// Writes `contents` to a temporary sibling and renames it into place.
    pub fn write(&mut self, path: impl AsRef<Path>, contents: &str) -> Result<()> {
        let path = path.as_ref();
        let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
        tmp_name.push(".partial");
        let tmp = path.with_file_name(tmp_name);
        let res = (|| -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(contents.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        })();
        if let Err(e) = res {
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.written
    }

    /// Keeps everything written so far.
    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_round_trip() {
        let text = with_metadata("a,b\n1,2\n", 7, "abc");
        assert_eq!(text.lines().next().unwrap(), format!("# seed=7, config_hash=abc, version={ARTIFACT_VERSION}"));
        assert_eq!(csv_body(&text), "a,b\n1,2\n");
        assert_eq!(csv_body("a,b\n"), "a,b\n");
    }

    #[test]
    fn uncommitted_outputs_are_removed() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        {
            let mut g = OutputGuard::new();
            g.write(&a, "x\n").unwrap();
            assert!(a.exists());
        }
        assert!(!a.exists());
        let mut g = OutputGuard::new();
        g.write(&a, "y\n").unwrap();
        assert_eq!(g.commit(), vec![a.clone()]);
        assert_eq!(fs::read_to_string(&a).unwrap(), "y\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = OutputGuard::new();
        assert!(g.write(dir.path().join("missing/a.csv"), "x").is_err());
        assert!(g.paths().is_empty());
    }
}
