//! Artifact layout under the working directory, binary I/O and execution
//! manifests.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use ridership::features::FeatureSetId;
use ridership::ingest::FareClass;
use ridership::io::{sha256_hex, write_atomic};

pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn demand(&self) -> PathBuf {
        self.root.join("ingest/demand.msgpack")
    }

    pub fn events(&self) -> PathBuf {
        self.root.join("ingest/events.msgpack")
    }

    pub fn calendar(&self) -> PathBuf {
        self.root.join("ingest/calendar.msgpack")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("ingest/manifest.json")
    }

    pub fn features(&self, set: FeatureSetId) -> PathBuf {
        self.root.join(format!("features/{set}.msgpack"))
    }

    pub fn tuning(&self, run: &str, station: &str, class: FareClass) -> PathBuf {
        self.root.join(format!("tuning/{run}/{station}-{class}.json"))
    }

    pub fn model(&self, run: &str, station: &str, class: FareClass) -> PathBuf {
        self.root.join(format!("models/{run}/{station}-{class}.model"))
    }

    pub fn predictions(&self, run: &str) -> PathBuf {
        self.root.join(format!("predictions/{run}.msgpack"))
    }

    pub fn predictions_csv(&self, run: &str) -> PathBuf {
        self.root.join(format!("predictions/{run}.csv"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports_dir().join(name)
    }

    pub fn exec_manifest(&self, name: &str) -> PathBuf {
        self.root.join(format!("manifests/{name}.json"))
    }
}

/// Fails with the missing path and the command that produces it.
pub fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing artifact {} (run `ridership {producer}` first)", path.display());
    }
    Ok(())
}

pub fn write_msgpack<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = rmp_serde::to_vec_named(value).context("encoding artifact")?;
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_msgpack<T: DeserializeOwned>(path: &Path, producer: &str) -> Result<T> {
    require(path, producer)?;
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    rmp_serde::from_slice(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, producer: &str) -> Result<T> {
    require(path, producer)?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("decoding {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct ExecutionManifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    settings: &'a serde_json::Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    started_at: String,
    elapsed_seconds: f64,
}

/// Collects inputs and outputs of one command and records them with their
/// hashes once the command succeeds.
pub struct Execution {
    command: String,
    started: SystemTime,
    clock: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Execution {
    pub fn start(command: &str) -> Self {
        Execution {
            command: command.to_string(),
            started: SystemTime::now(),
            clock: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    pub fn finish<S: Serialize>(self, layout: &Layout, name: &str, seed: u64, settings: &S) -> Result<()> {
        let digest = |paths: &[PathBuf]| -> Result<Vec<FileDigest>> {
            paths
                .iter()
                .map(|p| {
                    let bytes = std::fs::read(p).with_context(|| format!("hashing {}", p.display()))?;
                    Ok(FileDigest {
                        path: p.display().to_string(),
                        sha256: sha256_hex(&bytes),
                    })
                })
                .collect()
        };
        let settings = serde_json::to_value(settings)?;
        let m = ExecutionManifest {
            command: &self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            settings: &settings,
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
            started_at: humantime::format_rfc3339_seconds(self.started).to_string(),
            elapsed_seconds: self.clock.elapsed().as_secs_f64(),
        };
        write_json(&layout.exec_manifest(name), &m)
    }
}
