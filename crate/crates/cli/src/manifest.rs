use std::io::Read;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use hred_core::models::EpochMetrics;
use hred_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(Self {
            path: path.display().to_string(),
            sha256: h.finalize().iter().map(|b| format!("{b:02x}")).collect(),
            bytes,
        })
    }
}

/// Record of one artifact-producing run. Everything except `started_at` and
/// `wall_clock_seconds` is reproducible from the inputs and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epochs: Vec<EpochMetrics>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub summary: Value,
    pub started_at: u64,
    pub wall_clock_seconds: f64,
}

pub struct Recorder {
    command: &'static str,
    seed: Option<u64>,
    config: Value,
    started: Instant,
    started_at: u64,
}

impl Recorder {
    pub fn start(command: &'static str, seed: Option<u64>, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            command,
            seed,
            config: serde_json::to_value(config)?,
            started: Instant::now(),
            started_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }

    pub fn finish(
        self,
        inputs: &[&Path],
        outputs: &[&Path],
        epochs: Vec<EpochMetrics>,
        summary: Value,
        path: &Path,
    ) -> Result<RunManifest> {
        let digest = |ps: &[&Path]| ps.iter().map(|p| FileDigest::of(p)).collect::<Result<Vec<_>>>();
        let m = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs: digest(inputs)?,
            outputs: digest(outputs)?,
            epochs,
            summary,
            started_at: self.started_at,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        log::info!("wrote manifest {}", path.display());
        Ok(m)
    }
}

/// `<file>.manifest.json` next to a single-file artifact.
pub fn beside(artifact: &Path) -> std::path::PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}
