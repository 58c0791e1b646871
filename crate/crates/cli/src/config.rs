//! Layered configuration: defaults < config file (JSON) < environment
//! (`OFLOW_<KEY>`) < command-line flags. `--print-config` on the commands
//! that take a config prints the fully resolved document.

use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::user_error;

/// Recursively overlays `over` onto `base` (objects merge key by key,
/// everything else replaces).
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Environment overrides: `OFLOW_SEED=7` sets the top-level key `seed`.
/// Nested keys use double underscores: `OFLOW_SYNTH__SEED`. Only keys the
/// config already has are applied.
fn env_overlay(base: &mut Value) {
    for (key, raw) in std::env::vars() {
        let Some(path) = key.strip_prefix("OFLOW_") else {
            continue;
        };
        let parsed: Value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        let pointer: String = path
            .split("__")
            .map(|p| format!("/{}", p.to_lowercase()))
            .collect();
        if let Some(slot) = base.pointer_mut(&pointer) {
            *slot = parsed;
        }
    }
}

/// Resolves a command config: `defaults`, overlaid by the optional JSON
/// `file`, the environment, and finally `flags` (a partial JSON object of
/// the explicitly provided command-line options).
pub fn resolve<C: Serialize + DeserializeOwned>(
    defaults: &C,
    file: Option<&Path>,
    flags: Value,
) -> anyhow::Result<C> {
    let mut doc = serde_json::to_value(defaults).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let over: Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return user_error(format!("config file {}: {e}", path.display())),
        };
        merge(&mut doc, over);
    }
    env_overlay(&mut doc);
    merge(&mut doc, flags);
    match serde_json::from_value(doc) {
        Ok(c) => Ok(c),
        Err(e) => user_error(format!("invalid configuration: {e}")),
    }
}

/// Serializes the resolved config for `--print-config` and the manifest.
pub fn pretty<C: Serialize>(config: &C) -> String {
    serde_json::to_string_pretty(config).expect("config serializes")
}
