//! JSON configs with `key=value` overrides.
//!
//! A config is assembled as a JSON value (file contents or built-in
//! defaults), patched by flags, then deserialized once. Every config type
//! rejects unknown fields, so a mistyped key fails instead of being ignored.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Reads a JSON object from `path`.
pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if !value.is_object() {
        bail!("config {} must hold a JSON object", path.display());
    }
    Ok(value)
}

/// The defaults of a config type as a JSON value.
pub fn defaults<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("config types serialize to JSON")
}

/// Sets `path` (dot-separated) to `value`, creating the last key if needed.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut parts = path.split('.').peekable();
    let mut node = root;
    while let Some(key) = parts.next() {
        if key.is_empty() {
            bail!("empty key segment in `{path}`");
        }
        let obj: &mut Map<String, Value> = match node {
            Value::Object(o) => o,
            _ => bail!("cannot set `{path}`: `{key}` is inside a non-object value"),
        };
        if parts.peek().is_none() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one segment")
}

/// Parses `key=value`. The value is read as JSON when possible and as a
/// plain string otherwise, so `eps=[0,0.2]` and `scenario=robustness` both work.
pub fn parse_assignment(raw: &str) -> Result<(String, Value)> {
    let Some((key, value)) = raw.split_once('=') else {
        bail!("override `{raw}` is not of the form key=value");
    };
    let key = key.trim();
    if key.is_empty() {
        bail!("override `{raw}` has an empty key");
    }
    let value = serde_json::from_str(value.trim()).unwrap_or_else(|_| Value::String(value.trim().to_string()));
    Ok((key.to_string(), value))
}

pub fn apply_overrides(root: &mut Value, sets: &[String]) -> Result<()> {
    for raw in sets {
        let (key, value) = parse_assignment(raw)?;
        set_path(root, &key, value)?;
    }
    Ok(())
}

/// Deserializes the patched value, naming `what` in errors.
pub fn finish<T: DeserializeOwned>(value: Value, what: &str) -> Result<T> {
    serde_json::from_value(value).with_context(|| format!("invalid {what} config"))
}
