//! Layered settings: process environment first, then the optional TOML file
//! whose top-level keys are the same names as the environment variables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::CliError;

#[derive(Debug, Default, Clone)]
pub struct Settings {
    file: BTreeMap<String, String>,
    overrides: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| e.message().to_string())?;
        let mut file = BTreeMap::new();
        for (k, v) in table {
            let v = match v {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => return Err(format!("{k}: expected a scalar, got {}", other.type_str())),
            };
            file.insert(k, v);
        }
        Ok(Settings {
            file,
            overrides: BTreeMap::new(),
        })
    }

    /// Command-line flags beat both the environment and the file.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.overrides.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.overrides
            .get(key)
            .cloned()
            .or_else(|| std::env::var(key).ok())
            .or_else(|| self.file.get(key).cloned())
            .filter(|v| !v.trim().is_empty())
    }

    pub fn data_dir(&self) -> Option<PathBuf> {
        self.get("DATA_DIR").map(PathBuf::from)
    }

    pub fn require_data_dir(&self) -> Result<PathBuf, CliError> {
        self.data_dir().ok_or_else(|| {
            CliError::Usage("DATA_DIR is not set (flag --data-dir, env or config)".into())
        })
    }

    pub fn admin_key(&self) -> Result<String, CliError> {
        self.get("ADMIN_KEY")
            .ok_or_else(|| CliError::Usage("ADMIN_KEY is not set".into()))
    }

    /// Where a running server is reached: `SERVER_URL`, else `BASE_URL`.
    pub fn server_url(&self) -> String {
        self.get("SERVER_URL")
            .or_else(|| self.get("BASE_URL"))
            .unwrap_or_else(|| "http://127.0.0.1:8080".into())
            .trim_end_matches('/')
            .to_string()
    }
}
