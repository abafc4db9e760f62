//! Output plumbing: atomic file writes and the run manifest.

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Environment variable holding the default output directory.
pub const OUTPUT_DIR_ENV: &str = "AMDYN_OUTPUT_DIR";

/// Resolve the output directory: CLI flag, then config, then the
/// environment variable, then `./amdyn-out`.
pub fn resolve_output_dir(flag: Option<&Path>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Some(dir) = cfg.and_then(|c| c.output_dir.clone()) {
        return dir;
    }
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
        return PathBuf::from(dir);
    }
    PathBuf::from("amdyn-out")
}

/// Write a file atomically: to a temporary sibling first, then rename.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{file_name}.tmp.{}", std::process::id()));
    std::fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// Run manifest, emitted next to every experiment's artifacts. Echoes the
/// resolved configuration so the file can be re-fed as a config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    /// Wall-clock duration of the run, in milliseconds.
    pub wall_clock_ms: u64,
    /// Unix timestamp (seconds) of manifest creation.
    pub created_unix: u64,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(seed: u64, wall_clock_ms: u64, config: ExperimentConfig) -> Self {
        Self {
            version: version_string(),
            seed,
            wall_clock_ms,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Property(format!("manifest serialization: {e}")))?;
        json.push('\n');
        atomic_write(path, &json)
    }
}

/// Describe-style version: package version plus an optional build ref
/// injected at compile time.
pub fn version_string() -> String {
    match option_env!("AMDYN_BUILD_REF") {
        Some(r) => format!("amdyn-{}-g{r}", env!("CARGO_PKG_VERSION")),
        None => format!("amdyn-{}", env!("CARGO_PKG_VERSION")),
    }
}
