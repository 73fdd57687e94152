//! Run configuration: an optional JSON file overlaid with command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// JSON object built from the config file, with flags written on top.
pub struct Overlay {
    root: Value,
}

impl Overlay {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let root = match path {
            None => Value::Object(Map::new()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("config {}: {e}", p.display())))?;
                if !v.is_object() {
                    return Err(CliError::config("config file must contain a JSON object"));
                }
                v
            }
        };
        Ok(Overlay { root })
    }

    pub fn from_value(root: Value) -> Self {
        Overlay { root }
    }

    pub fn into_value(self) -> Value {
        self.root
    }

    /// Sets `path` to `value` when the flag was given.
    pub fn set<T: Serialize>(&mut self, path: &[&str], value: Option<T>) {
        let Some(value) = value else { return };
        let value = serde_json::to_value(value).expect("flag values serialize");
        let mut node = &mut self.root;
        for key in &path[..path.len() - 1] {
            if !node.get(*key).is_some_and(Value::is_object) {
                node[*key] = Value::Object(Map::new());
            }
            node = node.get_mut(*key).expect("just inserted");
        }
        node[path[path.len() - 1]] = value;
    }

    pub fn get(&self, path: &[&str]) -> Option<&Value> {
        path.iter().try_fold(&self.root, |v, k| v.get(*k))
    }

    pub fn finish<T: DeserializeOwned>(self) -> Result<T, CliError> {
        serde_json::from_value(self.root).map_err(|e| CliError::config(e.to_string()))
    }
}

/// SHA-256 of the canonical JSON encoding of a resolved configuration.
pub fn spec_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// `<stem>_<hash12>_s<seed>.<ext>`
pub fn output_name(stem: &str, hash: &str, seed: u64, ext: &str) -> String {
    format!("{stem}_{}_s{seed}.{ext}", &hash[..12])
}

/// Comma-separated list of numbers.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| format!("cannot parse `{x}`")))
        .collect()
}

/// `theory`, `cv`, a number, or a comma-separated per-node list.
pub fn gamma_value(spec: &str, c0: Option<f64>, folds: Option<usize>) -> Result<Value, CliError> {
    let bad = |m: String| CliError::config(format!("--gamma: {m}"));
    Ok(match spec {
        "theory" => serde_json::json!({ "theory": { "c0": c0.unwrap_or(0.5) } }),
        "cv" => serde_json::json!({ "cross_validated": {
            "multipliers": mmgm::spatial::log_grid(0.05, 2.0, 9),
            "folds": folds.unwrap_or(5),
        }}),
        s if s.contains(',') => serde_json::json!({ "per_node": parse_list::<f64>(s).map_err(bad)? }),
        s => serde_json::json!({ "fixed": s.parse::<f64>().map_err(|_| bad(format!("cannot parse `{s}`")))? }),
    })
}
