use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUNS_DIR_ENV: &str = "TTD_RUNS_DIR";
const DEFAULT_RUNS_DIR: &str = "runs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileRecord {
    pub fn of(path: &Path) -> CliResult<Self> {
        let data = std::fs::read(path)?;
        Ok(Self { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&data)), bytes: data.len() as u64 })
    }
}

/// Everything needed to repeat a run: command line, merged config, seeds,
/// and hashes of what went in and came out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &impl Serialize, threads: usize) -> CliResult<Self> {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Ok(Self {
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                args: std::env::args().collect(),
                config: serde_json::to_value(config)?,
                seeds: BTreeMap::new(),
                threads,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix,
                wall_clock_secs: 0.0,
            },
            started: Instant::now(),
        })
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.manifest.seeds.insert(name.into(), seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> CliResult<&mut Self> {
        self.manifest.inputs.push(FileRecord::of(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> CliResult<&mut Self> {
        self.manifest.outputs.push(FileRecord::of(path)?);
        Ok(self)
    }

    pub fn write(mut self, path: &Path) -> CliResult<RunManifest> {
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        std::fs::write(path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(self.manifest)
    }
}

/// Explicit `--out`, or `$TTD_RUNS_DIR/<command>-<hash of config>`.
pub fn run_dir(explicit: Option<&Path>, command: &str, config: &impl Serialize) -> CliResult<PathBuf> {
    let dir = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(RUNS_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_RUNS_DIR.into());
            let digest = Sha256::digest(serde_json::to_vec(config)?);
            root.join(format!("{command}-{}", &hex::encode(digest)[..12]))
        }
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
