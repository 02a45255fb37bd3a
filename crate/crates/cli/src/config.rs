//! Flag/config-file resolution: config values form the base, flags override.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub fn read_config(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !v.is_object() {
        return Err(CliError::Usage("config file must hold a JSON object".into()));
    }
    Ok(v)
}

fn strip(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.into_iter()
                .filter(|(_, v)| !v.is_null() && v != &Value::Bool(false) && v != &Value::Array(vec![]))
                .map(|(k, v)| (k, strip(v)))
                .collect(),
        ),
        other => other,
    }
}

/// Top-level config keys, then the section named after the subcommand,
/// then explicit flags.
pub fn resolve<A: Serialize + DeserializeOwned>(
    flags: &A,
    config: Option<&Value>,
    section: &str,
) -> Result<(A, Value), CliError> {
    let mut merged = Map::new();
    if let Some(Value::Object(cfg)) = config {
        for (k, v) in cfg {
            if !v.is_object() {
                merged.insert(k.clone(), v.clone());
            }
        }
        if let Some(Value::Object(sec)) = cfg.get(section) {
            merged.extend(sec.clone());
        }
    }
    let flags = serde_json::to_value(flags).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Value::Object(f) = strip(flags) {
        merged.extend(f);
    }
    let merged = Value::Object(merged);
    let args = serde_json::from_value(merged.clone()).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    let effective = serde_json::to_value(&args).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((args, strip(effective)))
}

pub fn require<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone()
        .ok_or_else(|| CliError::Usage(format!("missing required --{flag} (flag or config key)")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(default)]
    struct A {
        count: Option<u32>,
        out: Option<String>,
        quiet: bool,
    }

    #[test]
    fn flags_override_config() {
        let cfg: Value = serde_json::json!({"count": 5, "out": "x", "gen": {"count": 7}});
        let flags = A {
            count: None,
            out: Some("y".into()),
            quiet: false,
        };
        let (a, eff) = resolve(&flags, Some(&cfg), "gen").unwrap();
        assert_eq!(a, A { count: Some(7), out: Some("y".into()), quiet: false });
        assert_eq!(eff, serde_json::json!({"count": 7, "out": "y"}));
        let (a, _) = resolve(&flags, None, "gen").unwrap();
        assert_eq!(a.count, None);
    }
}
