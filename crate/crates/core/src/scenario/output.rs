//! Artifact writers. CSV floats carry 17 significant digits; every file
//! starts with its provenance.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// `#`-prefixed provenance lines followed by the column row.
pub fn csv_header(provenance: &Value, columns: &[String]) -> String {
    let mut out = String::new();
    if let Some(name) = provenance.get("name").and_then(Value::as_str) {
        out.push_str(&format!("# name = {name}\n"));
    }
    if let Some(seed) = provenance.get("seed") {
        out.push_str(&format!("# seed = {seed}\n"));
    }
    if let Some(cfg) = provenance.get("config").and_then(Value::as_object) {
        for (k, v) in cfg {
            out.push_str(&format!("# {k} = {}\n", v.as_str().unwrap_or_default()));
        }
    }
    out.push_str(&columns.join(","));
    out.push('\n');
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_file(path, &text)
}
