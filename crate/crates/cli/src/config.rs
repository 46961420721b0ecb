//! Merging of TOML configuration files with command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Reads the optional TOML file, overlays every flag that was given on the
/// command line and deserializes the result. Unknown keys are rejected by
/// the target type.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T, CliError> {
    let mut merged = match config {
        Some(path) => read_table(path)?,
        None => Map::new(),
    };
    let given = serde_json::to_value(flags).map_err(|e| CliError::config(e.to_string()))?;
    if let Value::Object(values) = given {
        for (key, value) in values {
            if !value.is_null() {
                merged.insert(key, value);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::config(e.to_string()))
}

fn read_table(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    match serde_json::to_value(table).map_err(|e| CliError::config(e.to_string()))? {
        Value::Object(map) => Ok(map),
        _ => Err(CliError::config("configuration root must be a table")),
    }
}

/// Value of a parameter that has no default.
pub fn required<T: Clone>(value: &Option<T>, name: &str) -> Result<T, CliError> {
    value
        .clone()
        .ok_or_else(|| CliError::config(format!("missing parameter `{name}`")))
}
