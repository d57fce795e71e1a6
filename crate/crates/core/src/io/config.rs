use std::path::Path;

use serde::de::DeserializeOwned;
use toml::Value;

use crate::error::{Error, Result};

/// Splits `key.path=value` overrides. Values are read as TOML literals and
/// fall back to plain strings.
pub fn parse_overrides(items: &[String]) -> Result<Vec<(Vec<String>, Value)>> {
    items
        .iter()
        .map(|item| {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
            if path.iter().any(|p| p.is_empty()) {
                return Err(Error::Config(format!("override key `{key}` has an empty segment")));
            }
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| Value::String(raw.to_string()));
            Ok((path, value))
        })
        .collect()
}

/// Sets one dotted path, creating intermediate tables. Replacing a table with
/// a scalar is refused so typos cannot silently drop a section.
pub fn apply_override(doc: &mut toml::Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("override paths are nonempty");
    let mut table = doc;
    for seg in parents {
        let entry = table
            .entry(seg.clone())
            .or_insert_with(|| Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{seg}` in `{}` is not a section", path.join("."))))?;
    }
    if matches!(table.get(last), Some(Value::Table(_))) && !value.is_table() {
        return Err(Error::Config(format!("`{}` is a section, not a scalar", path.join("."))));
    }
    table.insert(last.clone(), value);
    Ok(())
}

/// Reads a TOML file (or starts empty), applies overrides and deserializes.
pub fn load_config<T: DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (key, value) in parse_overrides(overrides)? {
        apply_override(&mut doc, &key, value)?;
    }
    Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}
