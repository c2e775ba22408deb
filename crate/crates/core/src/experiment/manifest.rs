//! Run manifest and all-or-nothing output writing.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, SCHEMA_VERSION};
use super::run::RunOutput;
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &str, contents: &[u8]) -> Self {
        FileDigest {
            path: path.to_string(),
            sha256: hex::encode(Sha256::digest(contents)),
            bytes: contents.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub schema_version: u64,
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub config: Value,
    pub started_at: String,
    pub finished_at: String,
    pub files: Vec<FileDigest>,
    pub summary: Value,
}

impl RunManifest {
    pub fn new(
        cfg: &ExperimentConfig,
        output: &RunOutput,
        started: DateTime<Utc>,
        finished: DateTime<Utc>,
    ) -> Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            schema_version: SCHEMA_VERSION,
            experiment: cfg.kind().tag().into(),
            seeds: cfg.seeds(),
            config: cfg.to_json_value()?,
            started_at: started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished_at: finished.to_rfc3339_opts(SecondsFormat::Millis, true),
            files: output.files.iter().map(|(n, b)| FileDigest::of(n, b)).collect(),
            summary: output.summary.clone(),
        })
    }
}

fn check_name(name: &str) -> Result<()> {
    let p = Path::new(name);
    let plain = p.components().count() == 1 && p.file_name().is_some_and(|f| f == name);
    if !plain || name.starts_with('.') || name == MANIFEST_NAME {
        return Err(Error::Config(format!("invalid output file name `{name}`")));
    }
    Ok(())
}

/// Write every output file plus the manifest into `dir`.
///
/// Files are staged under hidden names and renamed into place only after
/// all of them were written; on error everything this call created is
/// removed.
pub fn write_outputs(dir: &Path, output: &RunOutput, manifest: &RunManifest) -> Result<Vec<PathBuf>> {
    for (name, _) in &output.files {
        check_name(name)?;
    }
    let mut entries: Vec<(String, Vec<u8>)> = output.files.clone();
    let mut manifest_bytes = serde_json::to_vec_pretty(manifest)?;
    manifest_bytes.push(b'\n');
    entries.push((MANIFEST_NAME.into(), manifest_bytes));

    let created_dir = !dir.exists();
    fs::create_dir_all(dir)?;
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let mut placed: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<()> {
        for (name, bytes) in &entries {
            let tmp = dir.join(format!(".{name}.partial"));
            staged.push((tmp.clone(), dir.join(name)));
            fs::write(&tmp, bytes)?;
        }
        for (tmp, fin) in &staged {
            fs::rename(tmp, fin)?;
            placed.push(fin.clone());
        }
        Ok(())
    })();
    if let Err(e) = result {
        for (tmp, _) in &staged {
            let _ = fs::remove_file(tmp);
        }
        for p in &placed {
            let _ = fs::remove_file(p);
        }
        if created_dir {
            let _ = fs::remove_dir(dir);
        }
        return Err(e);
    }
    Ok(placed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty() {
        let d = FileDigest::of("x.csv", b"");
        assert_eq!(d.sha256, "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(d.bytes, 0);
    }

    #[test]
    fn names_are_plain() {
        assert!(check_name("train.csv").is_ok());
        for bad in ["../x.csv", "a/b.csv", ".hidden", "manifest.json", ""] {
            assert!(check_name(bad).is_err(), "{bad}");
        }
    }
}
