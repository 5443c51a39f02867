//! Content-addressed run directories.
//!
//! A run lives in `<root>/<command>-<hash>` where `hash` is the first 12 hex
//! digits of the SHA-256 of the resolved command's JSON. Each directory holds
//! `config.json` (replayable with `--config`) and `manifest.json`, which
//! lists every other file with its size and SHA-256.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::error::CliError;

const CONFIG_FORMAT: &str = "vizaudit-run";
const CONFIG_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub format: String,
    pub version: u32,
    pub command: Command,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            format: CONFIG_FORMAT.into(),
            version: CONFIG_VERSION,
            command,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        if cfg.format != CONFIG_FORMAT || cfg.version != CONFIG_VERSION {
            return Err(CliError::Malformed(format!(
                "{}: format `{}` version {}, expected `{CONFIG_FORMAT}` version {CONFIG_VERSION}",
                path.display(),
                cfg.format,
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// SHA-256 of the command's canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.command).expect("commands serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn dir_name(&self) -> String {
        format!("{}-{}", self.command.name(), &self.hash()[..12])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Passed,
    Failed,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub status: Status,
    /// Why verification failed, when it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub outputs: Vec<OutputEntry>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("inside root").to_path_buf());
        }
    }
    Ok(())
}

/// Every file under `dir` except the manifest, sorted, with hashes.
pub fn hash_outputs(dir: &Path) -> Result<Vec<OutputEntry>, CliError> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.retain(|p| p != Path::new(MANIFEST_FILE));
    files.sort();
    files
        .into_iter()
        .map(|rel| {
            let bytes = fs::read(dir.join(&rel))?;
            Ok(OutputEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            })
        })
        .collect()
}

/// Result of a command body: artifacts are written either way.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Passed,
    Failed(String),
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub status: Status,
    pub failure: Option<String>,
    /// The directory already held a finished run and nothing was executed.
    pub cached: bool,
}

/// Creates (or reuses) the run directory for `cfg` under `root` and runs
/// `body` in it.
pub fn execute(
    cfg: &RunConfig,
    root: &Path,
    force: bool,
    body: impl FnOnce(&Path) -> Result<Verdict, CliError>,
) -> Result<RunOutcome, CliError> {
    let dir = root.join(cfg.dir_name());
    let manifest_path = dir.join(MANIFEST_FILE);
    if !force && manifest_path.exists() {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        return Ok(RunOutcome {
            dir,
            status: m.status,
            failure: m.failure,
            cached: true,
        });
    }
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)? + "\n")?;
    let verdict = match body(&dir) {
        Ok(v) => v,
        Err(e) => {
            // No manifest: the directory is not a finished run.
            let _ = fs::remove_dir_all(&dir);
            return Err(e);
        }
    };
    let (status, failure) = match verdict {
        Verdict::Passed => (Status::Passed, None),
        Verdict::Failed(why) => (Status::Failed, Some(why)),
    };
    let manifest = Manifest {
        command: cfg.command.name().to_string(),
        config_sha256: cfg.hash(),
        status: status.clone(),
        failure: failure.clone(),
        outputs: hash_outputs(&dir)?,
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunOutcome {
        dir,
        status,
        failure,
        cached: false,
    })
}

/// Seed for the named sub-stream of `seed`: the first eight bytes,
/// little-endian, of SHA-256 over `"{seed}/{label}"`.
pub fn subseed(seed: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{label}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::{TheoryArgs, TheoryCmd};

    fn demo(seeds: u64) -> RunConfig {
        RunConfig::new(Command::Theory(TheoryCmd::Demo(TheoryArgs {
            classes: vec![],
            seeds,
            seed: 0,
            n1: 11,
            n2: 5,
        })))
    }

    #[test]
    fn names_follow_the_config() {
        assert!(demo(3).dir_name().starts_with("theory-demo-"));
        assert_eq!(demo(3).dir_name(), demo(3).dir_name());
        assert_ne!(demo(3).dir_name(), demo(4).dir_name());
    }

    #[test]
    fn subseeds_are_distinct_per_label() {
        assert_eq!(subseed(1, "init"), subseed(1, "init"));
        assert_ne!(subseed(1, "init"), subseed(1, "shuffle"));
        assert_ne!(subseed(1, "init"), subseed(2, "init"));
    }

    #[test]
    fn reruns_are_cached_unless_forced() {
        let root = tempfile::tempdir().unwrap();
        let cfg = demo(1);
        let mut calls = 0;
        let mut body = |dir: &Path| {
            calls += 1;
            fs::write(dir.join("a.csv"), "x\n1\n")?;
            Ok(Verdict::Passed)
        };
        let first = execute(&cfg, root.path(), false, &mut body).unwrap();
        assert!(!first.cached);
        let again = execute(&cfg, root.path(), false, &mut body).unwrap();
        assert!(again.cached);
        execute(&cfg, root.path(), true, &mut body).unwrap();
        assert_eq!(calls, 2);
        let m: Manifest =
            serde_json::from_str(&fs::read_to_string(first.dir.join(MANIFEST_FILE)).unwrap()).unwrap();
        let paths: Vec<&str> = m.outputs.iter().map(|o| o.path.as_str()).collect();
        assert_eq!(paths, ["a.csv", "config.json"]);
    }

    #[test]
    fn failing_body_leaves_no_run() {
        let root = tempfile::tempdir().unwrap();
        let cfg = demo(2);
        let err = execute(&cfg, root.path(), false, |_| Err(CliError::Precondition("nope".into())));
        assert!(err.is_err());
        assert!(!root.path().join(cfg.dir_name()).exists());
    }
}
