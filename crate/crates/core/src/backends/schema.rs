//! A small JSON-schema subset validator (type, properties, required, items,
//! enum, minLength, minItems) and the parse-validate-retry loop for
//! structured LLM output.

use serde_json::Value;

use super::{BackendError, LlmBackend, LlmRequest, LlmResponse, ResponseFormat};

pub fn validate(value: &Value, schema: &Value) -> Result<(), String> {
    validate_at(value, schema, "$")
}

fn validate_at(value: &Value, schema: &Value, path: &str) -> Result<(), String> {
    if let Some(ty) = schema.get("type").and_then(Value::as_str) {
        let ok = match ty {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "number" => value.is_number(),
            "integer" => value.is_i64() || value.is_u64(),
            "boolean" => value.is_boolean(),
            "null" => value.is_null(),
            other => return Err(format!("{path}: unsupported schema type {other}")),
        };
        if !ok {
            return Err(format!("{path}: expected {ty}"));
        }
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.contains(value) {
            return Err(format!("{path}: value not in enum"));
        }
    }
    if let (Some(min), Some(s)) = (schema.get("minLength").and_then(Value::as_u64), value.as_str()) {
        if (s.chars().count() as u64) < min {
            return Err(format!("{path}: string shorter than {min}"));
        }
    }
    if let Some(obj) = value.as_object() {
        if let Some(required) = schema.get("required").and_then(Value::as_array) {
            for key in required.iter().filter_map(Value::as_str) {
                if !obj.contains_key(key) {
                    return Err(format!("{path}: missing required field {key}"));
                }
            }
        }
        if let Some(props) = schema.get("properties").and_then(Value::as_object) {
            for (key, sub) in props {
                if let Some(v) = obj.get(key) {
                    validate_at(v, sub, &format!("{path}.{key}"))?;
                }
            }
        }
    }
    if let Some(items) = value.as_array() {
        if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                return Err(format!("{path}: fewer than {min} items"));
            }
        }
        if let Some(item_schema) = schema.get("items") {
            for (i, item) in items.iter().enumerate() {
                validate_at(item, item_schema, &format!("{path}[{i}]"))?;
            }
        }
    }
    Ok(())
}

/// Strips a surrounding markdown code fence, which chat models often add.
pub fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Requests structured output, re-asking up to `attempts` times in total when
/// the reply does not parse or violate the declared schema.
pub fn complete_json(
    llm: &dyn LlmBackend,
    req: &LlmRequest,
    attempts: u32,
) -> Result<(Value, LlmResponse), BackendError> {
    let ResponseFormat::JsonSchema { schema, .. } = &req.response_format else {
        return Err(BackendError::InvalidRequest(
            "complete_json needs a json_schema response format".into(),
        ));
    };
    let mut last = String::from("no attempts made");
    for attempt in 0..attempts.max(1) {
        let resp = llm.complete(req)?;
        match serde_json::from_str::<Value>(strip_code_fence(&resp.text)) {
            Ok(value) => match validate(&value, schema) {
                Ok(()) => return Ok((value, resp)),
                Err(e) => last = e,
            },
            Err(e) => last = format!("not JSON: {e}"),
        }
        tracing::warn!(tag = %req.tag, attempt, violation = %last, "structured output rejected");
    }
    Err(BackendError::SchemaViolation(last))
}
