//! Run configuration shared by the JSON config file and the command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use survkit::datamodel::{load_csv, CsvSchema, SurvivalDataset};
use survkit::registry::FitSpec;
use survkit::{Result, SurvError};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SURVKIT_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// Number of competing event types in the data.
    pub events: u32,
    pub time_col: String,
    pub event_col: String,
    pub fit: FitSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            events: 1,
            time_col: "time".into(),
            event_col: "event".into(),
            fit: FitSpec::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file; a run manifest is accepted too and its `config` entry is used.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SurvError::validation(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let inner = match value.get("config") {
            Some(c) => c.clone(),
            None => value,
        };
        Ok(serde_json::from_value(inner)?)
    }

    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            time_col: self.time_col.clone(),
            event_col: self.event_col.clone(),
            feature_cols: None,
            num_events: self.events,
        }
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(SurvError::validation(format!("{what} file {} does not exist", path.display())))
    }
}

pub fn load(path: &Path, schema: &CsvSchema, what: &str) -> Result<SurvivalDataset> {
    require_file(path, what)?;
    load_csv(path, schema)
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// `--out`, then the environment variable, then `./survkit-out`.
pub fn out_dir(flag: Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("survkit-out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Writes `{command, config, inputs: {path: sha256}, version}` as manifest.json.
pub fn write_manifest(dir: &Path, command: &str, config: &impl Serialize, inputs: &[&Path]) -> Result<()> {
    let mut sums = serde_json::Map::new();
    for p in inputs {
        sums.insert(p.display().to_string(), serde_json::Value::String(sha256_file(p)?));
    }
    let manifest = serde_json::json!({
        "command": command,
        "config": config,
        "inputs": sums,
        "version": env!("CARGO_PKG_VERSION"),
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
