//! Experiment configuration loading: a single JSON document, dot-path
//! `--set key=value` overrides, strict unknown-key rejection.

use std::fs;
use std::path::Path;

use mtseg_core::trainer::ExperimentConfig;
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

/// Parses `key=value`; the value is interpreted as JSON when possible and as
/// a bare string otherwise (so `--set extractor.kind=cnn` works unquoted).
pub fn parse_override(spec: &str) -> Result<(Vec<String>, serde_json::Value)> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    if key.is_empty() {
        return Err(CliError::Config(format!("override `{spec}` has empty key")));
    }
    let parsed = serde_json::from_str(value)
        .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), parsed))
}

fn apply_override(
    root: &mut serde_json::Value,
    path: &[String],
    value: serde_json::Value,
) -> Result<()> {
    let mut cursor = root;
    for (i, key) in path.iter().enumerate() {
        let map = cursor.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("override path `{}` crosses a non-object", path.join(".")))
        })?;
        if i + 1 == path.len() {
            map.insert(key.clone(), value);
            return Ok(());
        }
        cursor = map
            .entry(key.clone())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("path is nonempty");
}

/// Loads, overrides, deserializes (unknown keys are errors listing the valid
/// ones), and validates.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for spec in overrides {
        let (path, v) = parse_override(spec)?;
        apply_override(&mut value, &path, v)?;
    }
    config_from_value(value)
}

pub fn config_from_value(value: serde_json::Value) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical JSON of a config (serde's stable field order).
pub fn config_json(cfg: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

/// Hex SHA-256 of the canonical config JSON.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut h = Sha256::new();
    h.update(config_json(cfg).as_bytes());
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let mut v = serde_json::json!({"seed": 1, "smoothing": {"m": 0.9}});
        let (p, val) = parse_override("smoothing.m=0.999").unwrap();
        apply_override(&mut v, &p, val).unwrap();
        let (p, val) = parse_override("seed=7").unwrap();
        apply_override(&mut v, &p, val).unwrap();
        assert_eq!(v["smoothing"]["m"], serde_json::json!(0.999));
        assert_eq!(v["seed"], serde_json::json!(7));
    }

    #[test]
    fn unknown_keys_are_rejected_with_expected_list() {
        let v = serde_json::json!({"sed": 3});
        let err = config_from_value(v).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown field `sed`"), "{msg}");
        assert!(msg.contains("expected one of"), "{msg}");
        assert!(msg.contains("seed"), "{msg}");
    }

    #[test]
    fn illegal_combinations_rejected() {
        let v = serde_json::json!({"discriminator": "none", "dynamic_weights": true});
        assert!(matches!(config_from_value(v), Err(CliError::Config(_))));
        let v = serde_json::json!({"discriminator": "none", "smoothing": {"mo_pl": false, "mo_fa": true, "m": 0.999}});
        assert!(matches!(config_from_value(v), Err(CliError::Config(_))));
        // mo_pl alone stays legal without a discriminator
        let v = serde_json::json!({"discriminator": "none", "smoothing": {"mo_pl": true, "mo_fa": false, "m": 0.999}});
        assert!(config_from_value(v).is_ok());
    }

    #[test]
    fn string_values_pass_without_quotes() {
        let (_, v) = parse_override("extractor.kind=cnn").unwrap();
        assert_eq!(v, serde_json::Value::String("cnn".into()));
        let (_, v) = parse_override("dynamic_weights=true").unwrap();
        assert_eq!(v, serde_json::Value::Bool(true));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        b.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a), config_hash(&ExperimentConfig::default()));
    }
}
