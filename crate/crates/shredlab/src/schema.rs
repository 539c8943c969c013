//! A deliberately small JSON-schema checker covering the subset the shipped
//! schemas use: `type`, `required`, `properties`, `items`, `enum`, and
//! boolean `additionalProperties`. Annotation keys (`$schema`, `title`,
//! `description`) are ignored. Structured CLI outputs are validated against
//! the schemas in `schemas/` before they reach disk.

use serde_json::Value;

/// The schemas shipped with the repository, embedded so the binary can
/// self-validate without knowing where it was installed.
pub const METRICS_SCHEMA: &str = include_str!(concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../schemas/metrics.schema.json"
));
pub const MANIFEST_SCHEMA: &str = include_str!(concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../schemas/manifest.schema.json"
));
pub const ODES_SCHEMA: &str = include_str!(concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../schemas/odes.schema.json"
));

/// Check `instance` against `schema`; returns one message per violation,
/// each prefixed with a JSON-pointer-style path.
pub fn validate(schema: &Value, instance: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    check(schema, instance, "$", &mut errors);
    errors
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) => {
            if n.is_i64() || n.is_u64() {
                "integer"
            } else {
                "number"
            }
        }
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn matches_type(expected: &str, v: &Value) -> bool {
    match expected {
        // Every integer is also a number; a float with zero fraction counts
        // as an integer (JSON has one number type).
        "number" => matches!(v, Value::Number(_)),
        "integer" => match v {
            Value::Number(n) => {
                n.is_i64() || n.is_u64() || n.as_f64().map(|f| f.fract() == 0.0).unwrap_or(false)
            }
            _ => false,
        },
        other => type_name(v) == other,
    }
}

fn check(schema: &Value, instance: &Value, path: &str, errors: &mut Vec<String>) {
    let Some(obj) = schema.as_object() else {
        errors.push(format!("{path}: schema node is not an object"));
        return;
    };

    if let Some(ty) = obj.get("type") {
        let ok = match ty {
            Value::String(s) => matches_type(s, instance),
            Value::Array(options) => options
                .iter()
                .filter_map(|t| t.as_str())
                .any(|s| matches_type(s, instance)),
            _ => false,
        };
        if !ok {
            errors.push(format!(
                "{path}: expected type {ty}, got {}",
                type_name(instance)
            ));
            return;
        }
    }

    if let Some(allowed) = obj.get("enum").and_then(Value::as_array) {
        if !allowed.contains(instance) {
            errors.push(format!("{path}: value {instance} not in enum {allowed:?}"));
        }
    }

    if let Some(map) = instance.as_object() {
        if let Some(required) = obj.get("required").and_then(Value::as_array) {
            for key in required.iter().filter_map(Value::as_str) {
                if !map.contains_key(key) {
                    errors.push(format!("{path}: missing required key {key:?}"));
                }
            }
        }
        let props = obj.get("properties").and_then(Value::as_object);
        if let Some(props) = props {
            for (key, sub) in props {
                if let Some(v) = map.get(key) {
                    check(sub, v, &format!("{path}.{key}"), errors);
                }
            }
        }
        if obj.get("additionalProperties") == Some(&Value::Bool(false)) {
            for key in map.keys() {
                let declared = props.map(|p| p.contains_key(key)).unwrap_or(false);
                if !declared {
                    errors.push(format!("{path}: unexpected key {key:?}"));
                }
            }
        }
    }

    if let (Some(items), Some(arr)) = (obj.get("items"), instance.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            check(items, v, &format!("{path}[{i}]"), errors);
        }
    }
}

/// Parse one of the embedded schema strings.
pub fn parse_schema(text: &str) -> Value {
    serde_json::from_str(text).expect("shipped schema is valid JSON")
}
