//! Provenance record written next to every output file.

use std::path::Path;

use serde::Serialize;

/// Bumped whenever a JSON or CSV layout changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub case_path: String,
    pub dynamics_path: String,
    /// Echo of every setting that affects the result, defaults included.
    pub config: serde_json::Value,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, case_path: &Path, dynamics_path: &Path, config: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            case_path: case_path.display().to_string(),
            dynamics_path: dynamics_path.display().to_string(),
            config,
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }
}
