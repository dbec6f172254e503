//! Flat dotted-key JSON configuration, e.g. `{"train.epochs": 30, "seed": 1}`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

/// Keys allowed outside a section.
const TOP_LEVEL: &[&str] = &["seed", "arc", "grid", "threads"];
const SECTIONS: &[&str] = &["dataset", "train", "arch", "tv", "phantom", "project", "fbp", "eval", "spectrum"];

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, Value>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "malformed config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn malformed(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Config::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let Value::Object(map) = value else { return Err(malformed("top level must be a JSON object")) };
        for key in map.keys() {
            match key.split_once('.') {
                Some((section, field)) if SECTIONS.contains(&section) && !field.is_empty() => {}
                None if TOP_LEVEL.contains(&key.as_str()) => {}
                _ => return Err(malformed(format!("unknown key {key:?}"))),
            }
        }
        Ok(Config { values: map.into_iter().collect() })
    }

    pub fn top<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        self.values.get(key).map(|v| serde_json::from_value(v.clone()).map_err(|e| malformed(format!("{key}: {e}")))).transpose()
    }

    /// Set a dotted key (flags override the file).
    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn set_opt<V: Into<Value>>(&mut self, key: &str, value: Option<V>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// Deserialize every `section.*` key into `T` (missing fields take
    /// `T`'s defaults; unknown fields are rejected).
    pub fn section<T: DeserializeOwned>(&self, section: &str) -> Result<T> {
        let prefix = format!("{section}.");
        let map: Map<String, Value> =
            self.values.iter().filter_map(|(k, v)| k.strip_prefix(&prefix).map(|f| (f.to_string(), v.clone()))).collect();
        serde_json::from_value(Value::Object(map)).map_err(|e| malformed(format!("section {section}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lact_core::models::TrainConfig;

    #[test]
    fn sections_and_overrides() {
        let mut c = Config::parse(r#"{"train.epochs": 3, "train.lr_start": 0.01, "seed": 4}"#).unwrap();
        c.set("train.epochs", 5);
        let t: TrainConfig = c.section("train").unwrap();
        assert_eq!((t.epochs, t.lr_start, t.batch_size), (5, 0.01, 8));
        assert_eq!(c.top::<u64>("seed").unwrap(), Some(4));
    }

    #[test]
    fn malformed_inputs() {
        assert!(Config::parse("[1]").is_err());
        assert!(Config::parse("{").is_err());
        assert!(Config::parse(r#"{"bogus": 1}"#).is_err());
        let c = Config::parse(r#"{"train.nope": 1}"#).unwrap();
        assert!(c.section::<TrainConfig>("train").is_err());
    }
}
