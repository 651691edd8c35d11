//! Tool argument schemas and validation.
//!
//! A small, closed subset of JSON Schema covering exactly what the tool
//! signatures declare: object parameters with typed properties, required
//! lists, array arity bounds, and integer minimums. Unknown keys are
//! rejected so a tool that takes no arguments cannot be smuggled a query.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamSpec {
    String,
    Integer { minimum: Option<i64> },
    /// Array of numbers with inclusive arity bounds.
    NumberArray { min_items: usize, max_items: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub parameters: BTreeMap<String, ParamSpec>,
    pub required: Vec<String>,
}

/// First failing constraint when arguments do not match a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
pub enum SchemaViolation {
    #[error("missing required parameter `{0}`")]
    MissingRequired(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParameter(String),
    #[error("parameter `{name}` must be a {expected}")]
    WrongType { name: String, expected: String },
    #[error("parameter `{name}` must have at least {min_items} items")]
    MinItems { name: String, min_items: usize },
    #[error("parameter `{name}` must have at most {max_items} items")]
    MaxItems { name: String, max_items: usize },
    #[error("parameter `{name}` must be >= {minimum}")]
    Minimum { name: String, minimum: i64 },
}

impl ToolSchema {
    /// Validates a JSON arguments object against this schema, reporting the
    /// first violation encountered (required fields first, then per-field
    /// constraints in key order).
    pub fn validate(&self, arguments: &serde_json::Value) -> Result<(), SchemaViolation> {
        let obj = arguments.as_object().ok_or_else(|| SchemaViolation::WrongType {
            name: "arguments".into(),
            expected: "object".into(),
        })?;
        for req in &self.required {
            if !obj.contains_key(req) {
                return Err(SchemaViolation::MissingRequired(req.clone()));
            }
        }
        for (key, value) in obj {
            let spec = self
                .parameters
                .get(key)
                .ok_or_else(|| SchemaViolation::UnexpectedParameter(key.clone()))?;
            check_param(key, spec, value)?;
        }
        Ok(())
    }
}

fn check_param(name: &str, spec: &ParamSpec, value: &serde_json::Value) -> Result<(), SchemaViolation> {
    match spec {
        ParamSpec::String => {
            if !value.is_string() {
                return Err(SchemaViolation::WrongType {
                    name: name.into(),
                    expected: "string".into(),
                });
            }
        }
        ParamSpec::Integer { minimum } => {
            let n = value.as_i64().ok_or_else(|| SchemaViolation::WrongType {
                name: name.into(),
                expected: "integer".into(),
            })?;
            if let Some(min) = minimum {
                if n < *min {
                    return Err(SchemaViolation::Minimum { name: name.into(), minimum: *min });
                }
            }
        }
        ParamSpec::NumberArray { min_items, max_items } => {
            let items = value.as_array().ok_or_else(|| SchemaViolation::WrongType {
                name: name.into(),
                expected: "array of numbers".into(),
            })?;
            if items.len() < *min_items {
                return Err(SchemaViolation::MinItems { name: name.into(), min_items: *min_items });
            }
            if items.len() > *max_items {
                return Err(SchemaViolation::MaxItems { name: name.into(), max_items: *max_items });
            }
            for item in items {
                if !item.is_number() {
                    return Err(SchemaViolation::WrongType {
                        name: name.into(),
                        expected: "array of numbers".into(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Registry of tool schemas keyed by tool name.
#[derive(Debug, Clone, Default)]
pub struct SchemaRegistry {
    schemas: BTreeMap<String, ToolSchema>,
}

impl SchemaRegistry {
    pub fn new(schemas: impl IntoIterator<Item = ToolSchema>) -> Self {
        let mut map = BTreeMap::new();
        for schema in schemas {
            map.insert(schema.name.clone(), schema);
        }
        Self { schemas: map }
    }

    /// Empty registry: every tool call is unknown (direct-answer workflow).
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&ToolSchema> {
        self.schemas.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.schemas.keys().map(|s| s.as_str())
    }
}

pub const WEB_SEARCH: &str = "web_search";
pub const CROP_IMAGE: &str = "crop_image";
pub const IMAGE_SEARCH: &str = "image_search";

pub fn web_search_schema() -> ToolSchema {
    ToolSchema {
        name: WEB_SEARCH.into(),
        parameters: BTreeMap::from([("query".into(), ParamSpec::String)]),
        required: vec!["query".into()],
    }
}

pub fn crop_image_schema() -> ToolSchema {
    ToolSchema {
        name: CROP_IMAGE.into(),
        parameters: BTreeMap::from([
            ("bbox".into(), ParamSpec::NumberArray { min_items: 4, max_items: 4 }),
            ("image_index".into(), ParamSpec::Integer { minimum: Some(1) }),
        ]),
        required: vec!["bbox".into(), "image_index".into()],
    }
}

pub fn image_search_schema() -> ToolSchema {
    ToolSchema {
        name: IMAGE_SEARCH.into(),
        parameters: BTreeMap::new(),
        required: vec![],
    }
}

/// All three tools, as exposed by the agentic workflow.
pub fn agentic_registry() -> SchemaRegistry {
    SchemaRegistry::new([web_search_schema(), crop_image_schema(), image_search_schema()])
}

/// web_search + crop_image, as exposed by the RAG workflow.
pub fn rag_registry() -> SchemaRegistry {
    SchemaRegistry::new([web_search_schema(), crop_image_schema()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn crop_bbox_arity() {
        let schema = crop_image_schema();
        let err = schema
            .validate(&json!({"bbox": [0.1, 0.2, 0.5], "image_index": 1}))
            .unwrap_err();
        assert_eq!(err, SchemaViolation::MinItems { name: "bbox".into(), min_items: 4 });
    }

    #[test]
    fn crop_image_index_minimum() {
        let schema = crop_image_schema();
        let err = schema
            .validate(&json!({"bbox": [0.1, 0.2, 0.5, 0.8], "image_index": 0}))
            .unwrap_err();
        assert_eq!(err, SchemaViolation::Minimum { name: "image_index".into(), minimum: 1 });
    }

    #[test]
    fn web_search_accepts_query() {
        assert!(web_search_schema().validate(&json!({"query": "capital of France"})).is_ok());
    }

    #[test]
    fn image_search_rejects_text_query() {
        let err = image_search_schema().validate(&json!({"query": "who is this"})).unwrap_err();
        assert_eq!(err, SchemaViolation::UnexpectedParameter("query".into()));
    }

    #[test]
    fn missing_required_reported_first() {
        let schema = crop_image_schema();
        let err = schema.validate(&json!({"image_index": 1})).unwrap_err();
        assert_eq!(err, SchemaViolation::MissingRequired("bbox".into()));
    }
}
