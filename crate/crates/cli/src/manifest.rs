use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Record of one successful command run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration; passing this file back through
    /// `--config` (or `--spec` for `synth`) reruns the same computation.
    pub config: Value,
    pub seed: Option<u64>,
    pub dataset_fingerprint: Option<String>,
    pub split: Option<String>,
    pub artifacts: Vec<PathBuf>,
    pub tool_version: String,
    pub duration_seconds: f64,
    pub results: Value,
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        ManifestBuilder {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                config: Value::Null,
                seed: None,
                dataset_fingerprint: None,
                split: None,
                artifacts: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                duration_seconds: 0.0,
                results: Value::Null,
            },
        }
    }

    pub fn config(&mut self, config: &impl Serialize) -> Result<&mut Self, CliError> {
        self.manifest.config = serde_json::to_value(config).map_err(hnn_scoring::Error::from)?;
        Ok(self)
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn dataset(&mut self, fingerprint: String) -> &mut Self {
        self.manifest.dataset_fingerprint = Some(fingerprint);
        self
    }

    pub fn split(&mut self, description: String) -> &mut Self {
        self.manifest.split = Some(description);
        self
    }

    pub fn artifact(&mut self, path: &Path) -> &mut Self {
        self.manifest.artifacts.push(path.to_path_buf());
        self
    }

    pub fn results(&mut self, results: &impl Serialize) -> Result<&mut Self, CliError> {
        self.manifest.results = serde_json::to_value(results).map_err(hnn_scoring::Error::from)?;
        Ok(self)
    }

    /// Writes `<out>.manifest.json` next to the primary output, or one JSON
    /// line on stderr when the command had no output file.
    pub fn finish(mut self, out: Option<&Path>, force: bool) -> Result<(), CliError> {
        self.manifest.duration_seconds = self.started.elapsed().as_secs_f64();
        let json = serde_json::to_string_pretty(&self.manifest).map_err(hnn_scoring::Error::from)?;
        match out {
            Some(out) => {
                let mut name = out.as_os_str().to_owned();
                name.push(".manifest.json");
                crate::write_output(Path::new(&name), json.as_bytes(), force)
            }
            None => {
                let line = serde_json::to_string(&self.manifest).map_err(hnn_scoring::Error::from)?;
                eprintln!("{line}");
                Ok(())
            }
        }
    }
}

/// Reads a configuration file, unwrapping the `config` field when the
/// file is a run manifest.
pub fn read_config(path: &Path) -> Result<Value, CliError> {
    let content = std::fs::read_to_string(path).map_err(|e| hnn_scoring::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let value: Value = serde_json::from_str(&content)
        .map_err(|e| hnn_scoring::Error::Validation(format!("{}: {e}", path.display())))?;
    Ok(match value {
        Value::Object(mut map) if map.contains_key("command") && map.contains_key("tool_version") => {
            map.remove("config").unwrap_or(Value::Null)
        }
        other => other,
    })
}
