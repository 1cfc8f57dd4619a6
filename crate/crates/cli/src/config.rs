use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub fn read_object(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match value {
        Value::Object(map) => Ok(map),
        _ => bail!("{} must contain a JSON object", path.display()),
    }
}

/// Fills every unset flag from `base`. Keys use the flag's snake_case name;
/// keys that name no flag are rejected.
pub fn overlay<T: Serialize + DeserializeOwned>(
    flags: T,
    mut base: Map<String, Value>,
) -> Result<T> {
    let Value::Object(set) = serde_json::to_value(&flags)? else {
        bail!("flags did not serialize to an object");
    };
    if let Some(unknown) = base.keys().find(|k| !set.contains_key(*k)) {
        bail!("unknown config key `{unknown}`");
    }
    for (k, v) in set {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(base))
        .context("config file does not match the command's flags")
}

pub fn with_config<T: Serialize + DeserializeOwned>(flags: T, path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => overlay(flags, read_object(p)?),
        None => Ok(flags),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Flags {
        a: Option<u32>,
        b: Option<String>,
    }

    #[test]
    fn flags_win_over_file() {
        let base = serde_json::json!({"a": 1, "b": "file"})
            .as_object()
            .unwrap()
            .clone();
        let merged = overlay(
            Flags {
                a: None,
                b: Some("flag".into()),
            },
            base,
        )
        .unwrap();
        assert_eq!(
            merged,
            Flags {
                a: Some(1),
                b: Some("flag".into())
            }
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        let base = serde_json::json!({"zzz": 1}).as_object().unwrap().clone();
        assert!(overlay(Flags { a: None, b: None }, base).is_err());
    }
}
