//! Flat `key = value` configuration with dotted sections, or the same keys
//! as (possibly nested) JSON.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Every accepted key with its default.
pub const KEYS: &[(&str, &str)] = &[
    ("name", "scenario"),
    ("mode", "simulate"),
    ("output", "out"),
    ("market.b", "0.1"),
    ("market.sigma", "0.2"),
    ("market.delta", "0"),
    ("market.beta", "1"),
    ("market.alpha", "0"),
    ("market.alpha_bar", "1"),
    ("market.T", "1"),
    ("market.x0", "1"),
    ("constraint.kind", "full"),
    ("constraint.lower", ""),
    ("constraint.upper", ""),
    ("constraint.vertices", ""),
    ("grid.steps", "10"),
    ("grid.paths", "10000"),
    ("grid.seed", "42"),
    ("bsde.basis_degree", "3"),
    ("bsde.tol_picard", "1e-6"),
    ("bsde.max_iters", "50"),
    ("bsde.ridge", "1e-8"),
    ("reward.U", "log"),
    ("reward.Ubar", "log"),
    ("reward.power_exponent", "0.5"),
    ("reward.consumption", "0"),
    ("reward.terminal", "wealth"),
    ("dual.kernel_grid", ""),
    ("dual.tol_budget", "1e-3"),
    ("dual.tol_fp", "1e-3"),
    ("dual.damping", "0.5"),
    ("dual.max_outer", "30"),
    ("dual.include_closed_form", "true"),
    ("hjb.z_min", "0.006737946999085467"),
    ("hjb.z_max", "148.4131591025766"),
    ("hjb.nz", "200"),
    ("hjb.nt", "200"),
    ("hjb.a_lo", "-0.1"),
    ("hjb.a_hi", "0.1"),
    ("hjb.scheme", "implicit"),
    ("hjb.na", "41"),
    ("hjb.a_cap", "10"),
    ("hjb.force_zero", "false"),
    ("diag.eta", "2"),
    ("diag.eta_bar", "2"),
    ("diag.gamma", "0.5, 1"),
];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    location: String,
}

/// Parsed configuration: user-supplied entries layered over the defaults.
#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

fn config_error(key: &str, location: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        location: location.to_string(),
        message: message.into(),
    }
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl Config {
    /// Parses either encoding; text whose first non-blank character is `{`
    /// is read as JSON.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Self::parse_json(text)
        } else {
            Self::parse_kv(text)
        }
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let location = format!("line {}", i + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_error(line, &location, "expected `key = value`"));
            };
            cfg.insert(key.trim(), value.trim(), location)?;
        }
        Ok(cfg)
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
            config_error("<json>", &format!("line {}", e.line()), e.to_string())
        })?;
        let mut flat = Vec::new();
        flatten("", &value, &mut flat).map_err(|(k, m)| config_error(&k, "json", m))?;
        let mut cfg = Self::default();
        for (key, value) in flat {
            let leaf = key.rsplit('.').next().unwrap_or(&key);
            let location = text
                .lines()
                .position(|l| l.contains(&format!("\"{leaf}\"")))
                .map_or_else(|| "json".to_string(), |i| format!("line {}", i + 1));
            cfg.insert(&key, &value, location)?;
        }
        Ok(cfg)
    }

    fn insert(&mut self, key: &str, value: &str, location: String) -> Result<()> {
        if !known(key) {
            return Err(config_error(key, &location, "unknown key"));
        }
        if let Some(prev) = self.entries.get(key) {
            return Err(config_error(key, &location, format!("duplicate key, first set at {}", prev.location)));
        }
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                location,
            },
        );
        Ok(())
    }

    /// Applies a `key=value` override, replacing any existing entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(config_error(key, "--set", "unknown key"));
        }
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                location: "--set".to_string(),
            },
        );
        Ok(())
    }

    /// Parses `key=value`.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let Some((k, v)) = assignment.split_once('=') else {
            return Err(config_error(assignment, "--set", "expected key=value"));
        };
        self.set(k.trim(), v.trim())
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn raw(&self, key: &str) -> (&str, String) {
        match self.entries.get(key) {
            Some(e) => (e.value.as_str(), e.location.clone()),
            None => {
                let default = KEYS
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, d)| *d)
                    .unwrap_or_else(|| panic!("no default registered for {key}"));
                (default, "default".to_string())
            }
        }
    }

    /// Every key with its effective value.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        KEYS.iter().map(|(k, _)| (k.to_string(), self.raw(k).0.to_string())).collect()
    }

    pub fn str(&self, key: &str) -> String {
        self.raw(key).0.to_string()
    }

    pub fn fail(&self, key: &str, message: impl Into<String>) -> Error {
        config_error(key, &self.raw(key).1, message)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let (v, loc) = self.raw(key);
        parse_f64(v).map_err(|m| config_error(key, &loc, m))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let (v, loc) = self.raw(key);
        v.parse::<usize>()
            .map_err(|_| config_error(key, &loc, format!("expected a non-negative integer, got `{v}`")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        let (v, loc) = self.raw(key);
        v.parse::<u64>()
            .map_err(|_| config_error(key, &loc, format!("expected an unsigned integer, got `{v}`")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        let (v, loc) = self.raw(key);
        match v {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(config_error(key, &loc, format!("expected true or false, got `{v}`"))),
        }
    }

    /// Comma-separated list; empty text is an empty list.
    pub fn vec(&self, key: &str) -> Result<Vec<f64>> {
        let (v, loc) = self.raw(key);
        parse_list(v).map_err(|m| config_error(key, &loc, m))
    }

    /// Rows separated by `;`, entries by `,`.
    pub fn matrix(&self, key: &str) -> Result<Vec<Vec<f64>>> {
        let (v, loc) = self.raw(key);
        if v.trim().is_empty() {
            return Ok(Vec::new());
        }
        v.split(';')
            .map(|row| parse_list(row).map_err(|m| config_error(key, &loc, m)))
            .collect()
    }

    /// `rate@start` pairs; a bare number is a constant.
    pub fn piecewise(&self, key: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let (v, loc) = self.raw(key);
        let err = |m: String| config_error(key, &loc, m);
        let mut starts = Vec::new();
        let mut values = Vec::new();
        for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('@') {
                Some((rate, start)) => {
                    values.push(parse_f64(rate.trim()).map_err(err)?);
                    starts.push(parse_f64(start.trim()).map_err(err)?);
                }
                None => {
                    values.push(parse_f64(part).map_err(err)?);
                    starts.push(0.0);
                }
            }
        }
        if values.is_empty() {
            return Err(err("expected at least one rate".into()));
        }
        Ok((starts, values))
    }
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| format!("expected a number, got `{}`", v.trim()))
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(parse_f64)
        .collect()
}

fn scalar_text(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn flatten(
    prefix: &str,
    v: &serde_json::Value,
    out: &mut Vec<(String, String)>,
) -> std::result::Result<(), (String, String)> {
    use serde_json::Value;
    let text = match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out)?;
            }
            return Ok(());
        }
        Value::Array(items) if items.iter().all(|i| i.is_array()) => items
            .iter()
            .map(|row| {
                row.as_array()
                    .unwrap()
                    .iter()
                    .map(|x| scalar_text(x).ok_or((prefix.to_string(), "nested value".to_string())))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map(|r| r.join(","))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?
            .join(";"),
        Value::Array(items) => items
            .iter()
            .map(|x| scalar_text(x).ok_or((prefix.to_string(), "nested value".to_string())))
            .collect::<std::result::Result<Vec<_>, _>>()?
            .join(","),
        Value::Null => return Err((prefix.to_string(), "null is not a value".into())),
        other => scalar_text(other).unwrap(),
    };
    out.push((prefix.to_string(), text));
    Ok(())
}
