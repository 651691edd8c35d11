//! Canonical JSON serialization and content hashing.
//!
//! Cache keys and manifests must not depend on JSON formatting, so values are
//! canonicalized before hashing: object keys sorted, no insignificant
//! whitespace, numbers rendered through a single normalization rule.

use serde_json::Value;
use sha2::{Digest, Sha256};

/// Renders a JSON value with sorted object keys and normalized numbers.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            // Integral floats print as integers so 1.0 and 1 hash alike.
            if let Some(f) = n.as_f64() {
                if f.fract() == 0.0 && f.abs() < 9e15 {
                    out.push_str(&format!("{}", f as i64));
                } else {
                    out.push_str(&format!("{}", f));
                }
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serializes"));
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("string serializes"));
                out.push(':');
                write_canonical(&map[*key], out);
            }
            out.push('}');
        }
    }
}

/// SHA-256 of arbitrary bytes, lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// SHA-256 of the canonical rendering of a JSON value.
pub fn hash_value(value: &Value) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sorts_keys_and_normalizes_numbers() {
        let a = canonical_json(&json!({"b": 1.0, "a": [0.5, 2]}));
        let b = canonical_json(&json!({"a": [0.5, 2.0], "b": 1}));
        assert_eq!(a, b);
        assert_eq!(a, r#"{"a":[0.5,2],"b":1}"#);
    }

    #[test]
    fn formatting_does_not_change_hash() {
        let v1: Value = serde_json::from_str(r#"{ "name": "crop_image", "x": 1.0 }"#).unwrap();
        let v2: Value = serde_json::from_str(r#"{"x":1,"name":"crop_image"}"#).unwrap();
        assert_eq!(hash_value(&v1), hash_value(&v2));
    }
}
