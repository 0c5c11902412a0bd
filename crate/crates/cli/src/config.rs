use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::UsageError;

/// Overlays the JSON object in `file` (if any) onto `base`. Keys missing
/// from the file keep their base values; nested objects merge recursively.
pub fn layered<T: Serialize + DeserializeOwned>(base: T, file: Option<&Path>) -> Result<T> {
    let Some(path) = file else {
        return Ok(base);
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let overlay: Value = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
    let mut merged = serde_json::to_value(base)?;
    merge(&mut merged, overlay);
    serde_json::from_value(merged).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}
