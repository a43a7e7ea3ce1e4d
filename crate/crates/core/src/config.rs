//! Flat `key = value` configuration files.
//!
//! ```text
//! # comments start with '#'
//! schema_version = 1
//! lr = 0.01
//! model.feature_dim = 16
//! model.smooth_fields = 20, 10, 5
//! model.toggles.smooth = off
//! ```
//!
//! Keys are dotted paths into the target struct. Every key must exist in
//! the struct's defaults, so typos fail instead of being ignored. List
//! values are comma separated; booleans accept `on/off`, `true/false`,
//! `yes/no` and `1/0`.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Parses `text` on top of `T::default()`.
pub fn parse_flat<T: Serialize + DeserializeOwned + Default>(text: &str) -> Result<T> {
    apply_flat(T::default(), text)
}

/// Parses `text` on top of `base`.
pub fn apply_flat<T: Serialize + DeserializeOwned>(base: T, text: &str) -> Result<T> {
    let entries = entries(text)?;
    let mut version = None;
    let mut tree = to_value(&base)?;
    for (line, key, raw) in entries {
        if key == "schema_version" {
            let v: u32 = raw.parse().map_err(|_| {
                Error::Config(format!(
                    "line {line}: schema_version '{raw}' is not an integer"
                ))
            })?;
            if v != CONFIG_SCHEMA_VERSION {
                return Err(Error::Config(format!(
                    "line {line}: schema_version {v} is not supported (expected {CONFIG_SCHEMA_VERSION})"
                )));
            }
            version = Some(v);
            continue;
        }
        set(&mut tree, &key, &raw).map_err(|m| Error::Config(format!("line {line}: {m}")))?;
    }
    if version.is_none() {
        return Err(Error::Config("missing schema_version".into()));
    }
    serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))
}

/// Applies `key=value` overrides (without a schema line) to `base`.
pub fn override_flat<T: Serialize + DeserializeOwned>(
    base: T,
    pairs: &[(String, String)],
) -> Result<T> {
    let mut tree = to_value(&base)?;
    for (key, raw) in pairs {
        set(&mut tree, key, raw).map_err(Error::Config)?;
    }
    serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))
}

/// Renders every field of `value`, schema line first. The output parses
/// back to an equal value.
pub fn to_flat<T: Serialize>(value: &T) -> Result<String> {
    let tree = to_value(value)?;
    let mut out = format!("schema_version = {CONFIG_SCHEMA_VERSION}\n");
    flatten("", &tree, &mut out);
    Ok(out)
}

fn to_value<T: Serialize>(value: &T) -> Result<Value> {
    serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))
}

fn entries(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {line_no}: expected key = value, found '{body}'"
            ))
        })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {line_no}: empty key")));
        }
        if out.iter().any(|(_, seen, _)| *seen == key) {
            return Err(Error::Config(format!(
                "line {line_no}: duplicate key '{key}'"
            )));
        }
        out.push((line_no, key, v.trim().to_string()));
    }
    Ok(out)
}

fn set(tree: &mut Value, key: &str, raw: &str) -> std::result::Result<(), String> {
    let mut node = tree;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map
                .get_mut(part)
                .ok_or_else(|| format!("unknown key '{key}'"))?,
            _ => return Err(format!("unknown key '{key}'")),
        };
    }
    *node = parse_like(node, raw).map_err(|m| format!("{key}: {m}"))?;
    Ok(())
}

fn parse_like(template: &Value, raw: &str) -> std::result::Result<Value, String> {
    match template {
        Value::Bool(_) => match raw {
            "on" | "true" | "yes" | "1" => Ok(Value::Bool(true)),
            "off" | "false" | "no" | "0" => Ok(Value::Bool(false)),
            _ => Err(format!("'{raw}' is not a boolean")),
        },
        Value::Number(n) => parse_number(raw, n.is_f64()),
        Value::String(_) => Ok(Value::String(raw.to_string())),
        Value::Array(items) => {
            let parts: Vec<&str> = if raw.is_empty() {
                Vec::new()
            } else {
                raw.split(',').map(str::trim).collect()
            };
            let element = items
                .first()
                .cloned()
                .unwrap_or(Value::Number(Number::from(0)));
            parts
                .iter()
                .map(|p| parse_like(&element, p))
                .collect::<std::result::Result<_, _>>()
                .map(Value::Array)
        }
        Value::Null => parse_number(raw, true).or_else(|_| Ok(Value::String(raw.to_string()))),
        Value::Object(_) => Err("is a section; set its fields individually".into()),
    }
}

fn parse_number(raw: &str, float: bool) -> std::result::Result<Value, String> {
    if !float {
        if let Ok(v) = raw.parse::<u64>() {
            return Ok(Value::Number(v.into()));
        }
        if let Ok(v) = raw.parse::<i64>() {
            return Ok(Value::Number(v.into()));
        }
        return Err(format!("'{raw}' is not an integer"));
    }
    let v: f64 = raw
        .parse()
        .map_err(|_| format!("'{raw}' is not a number"))?;
    Number::from_f64(v)
        .map(Value::Number)
        .ok_or_else(|| format!("'{raw}' is not finite"))
}

fn flatten(prefix: &str, value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => flatten_map(prefix, map, out),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(scalar).collect();
            out.push_str(&format!("{prefix} = {}\n", parts.join(", ")));
        }
        other => out.push_str(&format!("{prefix} = {}\n", scalar(other))),
    }
}

fn flatten_map(prefix: &str, map: &Map<String, Value>, out: &mut String) {
    for (k, v) in map {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        flatten(&key, v, out);
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => format!("{f:?}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenekit::ScenarioConfig;
    use crate::trainer::TrainConfig;

    #[test]
    fn round_trips_defaults() {
        let cfg = TrainConfig::default();
        let text = to_flat(&cfg).unwrap();
        let back: TrainConfig = parse_flat(&text).unwrap();
        assert_eq!(back, cfg);
        let s = ScenarioConfig::default();
        assert_eq!(
            parse_flat::<ScenarioConfig>(&to_flat(&s).unwrap()).unwrap(),
            s
        );
    }

    #[test]
    fn nested_keys_lists_and_booleans() {
        let cfg: TrainConfig = parse_flat(
            "schema_version = 1\nlr = 0.01 # fast\nmodel.smooth_fields = 8, 4\nmodel.toggles.smooth = off\nmodel.graph_mode = 2d\n",
        )
        .unwrap();
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.model.smooth_fields, vec![8, 4]);
        assert!(!cfg.model.toggles.smooth);
        assert_eq!(cfg.model.graph_mode, crate::geometry::GraphMode::TwoD);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let err = |t: &str| parse_flat::<TrainConfig>(t).unwrap_err().to_string();
        assert!(
            err("schema_version = 1\nlearning_rate = 0.1").contains("unknown key 'learning_rate'")
        );
        assert!(err("lr = 0.1").contains("missing schema_version"));
        assert!(err("schema_version = 2").contains("not supported"));
        assert!(err("schema_version = 1\nbatch_size = 1.5").contains("not an integer"));
        assert!(err("schema_version = 1\nlr = 1\nlr = 2").contains("duplicate"));
        assert!(err("schema_version = 1\nmodel.graph_mode = 4d").contains("4d"));
    }
}
