//! Recovering a JSON value from free-form model output.

use serde_json::Value;

/// Parses `text` as JSON, tolerating Markdown code fences and prose around a
/// single top-level object or array.
pub fn extract_json(text: &str) -> Result<Value, serde_json::Error> {
    let trimmed = strip_fence(text.trim());
    match serde_json::from_str(trimmed) {
        Ok(v) => Ok(v),
        Err(first) => {
            let start = trimmed.find(['{', '[']);
            let end = trimmed.rfind(['}', ']']);
            match (start, end) {
                (Some(s), Some(e)) if e > s => {
                    serde_json::from_str(&trimmed[s..=e]).map_err(|_| first)
                }
                _ => Err(first),
            }
        }
    }
}

fn strip_fence(text: &str) -> &str {
    let Some(rest) = text.strip_prefix("```") else {
        return text;
    };
    let body = rest.split_once('\n').map(|(_, b)| b).unwrap_or("");
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn plain_fenced_and_wrapped_json() {
        assert_eq!(extract_json(r#"{"a": 1}"#).unwrap(), json!({"a": 1}));
        assert_eq!(extract_json("```json\n[1, 2]\n```").unwrap(), json!([1, 2]));
        assert_eq!(
            extract_json("Here you go: {\"a\": [1]} hope it helps").unwrap(),
            json!({"a": [1]})
        );
        assert!(extract_json("no json here").is_err());
        assert!(extract_json("{\"a\": ").is_err());
    }
}
