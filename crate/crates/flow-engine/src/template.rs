use std::collections::BTreeMap;

use serde_json::Value;

/// A substitution site found in a parameter template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reference {
    /// `$.input.<key>`
    Input(String),
    /// `$.states.<name>.output.<key>`
    StateOutput { state: String, key: String },
}

/// Classify one string leaf. Literals give `None`; `$.`-prefixed strings must
/// parse as one of the two supported paths or the whole string is returned
/// as the error.
fn parse_path(s: &str) -> Result<Option<Reference>, String> {
    if !s.starts_with("$.") {
        return Ok(None);
    }
    let parts: Vec<&str> = s.split('.').collect();
    match parts.as_slice() {
        ["$", "input", key] if !key.is_empty() => Ok(Some(Reference::Input(key.to_string()))),
        ["$", "states", state, "output", key] if !state.is_empty() && !key.is_empty() => {
            Ok(Some(Reference::StateOutput {
                state: state.to_string(),
                key: key.to_string(),
            }))
        }
        _ => Err(s.to_string()),
    }
}

/// All references in a template, in document order. `Err` carries the first
/// malformed `$.` path encountered.
pub fn scan_references(template: &Value) -> Result<Vec<Reference>, String> {
    let mut refs = Vec::new();
    collect(template, &mut refs)?;
    Ok(refs)
}

fn collect(value: &Value, refs: &mut Vec<Reference>) -> Result<(), String> {
    match value {
        Value::String(s) => {
            if let Some(r) = parse_path(s)? {
                refs.push(r);
            }
            Ok(())
        }
        Value::Array(items) => items.iter().try_for_each(|v| collect(v, refs)),
        Value::Object(map) => map.values().try_for_each(|v| collect(v, refs)),
        _ => Ok(()),
    }
}

/// Substitute every reference in `template`. Substitution is whole-string
/// and type-preserving: a leaf `"$.input.count"` becomes whatever JSON value
/// `input.count` holds. Missing keys and malformed paths are errors.
pub fn render(
    template: &Value,
    input: &Value,
    outputs: &BTreeMap<String, Value>,
) -> Result<Value, String> {
    match template {
        Value::String(s) => match parse_path(s)? {
            None => Ok(template.clone()),
            Some(Reference::Input(key)) => input
                .get(&key)
                .cloned()
                .ok_or_else(|| format!("input has no key '{key}'")),
            Some(Reference::StateOutput { state, key }) => outputs
                .get(&state)
                .and_then(|o| o.get(&key))
                .cloned()
                .ok_or_else(|| format!("state '{state}' produced no output '{key}'")),
        },
        Value::Array(items) => items
            .iter()
            .map(|v| render(v, input, outputs))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::Array),
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| render(v, input, outputs).map(|r| (k.clone(), r)))
            .collect::<Result<serde_json::Map<_, _>, _>>()
            .map(Value::Object),
        _ => Ok(template.clone()),
    }
}
