use serde::Serialize;
use std::path::Path;

/// Everything needed to repeat a run. Contains no timestamps so replays
/// produce identical files.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub models: Vec<String>,
    pub policies: Vec<String>,
    pub seed: u64,
    pub preset: String,
    pub overrides: Vec<String>,
    pub config: serde_json::Value,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, preset: &str, overrides: &[String]) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            models: Vec::new(),
            policies: Vec::new(),
            seed,
            preset: preset.to_string(),
            overrides: overrides.to_vec(),
            config: serde_json::Value::Null,
            artifacts: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}
