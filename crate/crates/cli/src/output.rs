//! Atomic file output and the per-run record.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut name = path
        .file_name()
        .context("output path has no file name")?
        .to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    {
        let file = File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush()?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: Vec<String>,
    pub scenario: Option<String>,
    pub scenario_sha256: Option<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub version: &'static str,
    pub wall_time_s: f64,
    pub exit_code: u8,
}

/// Collects outputs of one invocation and writes `run.json` at the end.
pub struct Run {
    dir: PathBuf,
    started: Instant,
    record: RunRecord,
}

impl Run {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            record: RunRecord {
                command: std::env::args().collect(),
                scenario: None,
                scenario_sha256: None,
                seed: None,
                outputs: Vec::new(),
                version: env!("CARGO_PKG_VERSION"),
                wall_time_s: 0.0,
                exit_code: 0,
            },
        })
    }

    pub fn scenario(&mut self, path: &Path, text: &str, seed: u64) {
        self.record.scenario = Some(path.display().to_string());
        self.record.scenario_sha256 = Some(sha256_hex(text.as_bytes()));
        self.record.seed = Some(seed);
    }

    pub fn write<F>(&mut self, name: &str, fill: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.dir.join(name);
        write_atomic(&path, fill)?;
        self.record.outputs.push(path.display().to_string());
        Ok(path)
    }

    pub fn finish(mut self, exit_code: u8) -> Result<u8> {
        self.record.wall_time_s = self.started.elapsed().as_secs_f64();
        self.record.exit_code = exit_code;
        let record = &self.record;
        write_atomic(&self.dir.join("run.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, record)?;
            writeln!(w)?;
            Ok(())
        })?;
        Ok(exit_code)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_atomic(&path, |w| Ok(writeln!(w, "x")?)).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "x\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
