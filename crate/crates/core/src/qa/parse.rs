use serde_json::{Map, Value};

use super::{AnswerValue, FieldAnswer};
use crate::json_text::extract_json;
use crate::schema::{answer_key, fold_answer_key, AnswerPlace, AnswerType, FormField};
use crate::values::parse_number;

/// Token the model is told to use for entries the article does not support.
pub const UNKNOWN_TOKEN: &str = "Unknown";

/// Reads a QA reply into one answer per answer place of `fields`.
///
/// Never fails: a reply that is not a JSON object, or that lacks an entry,
/// gives `Unknown` for the affected places.
pub fn parse_answers(model_text: &str, fields: &[&FormField]) -> Vec<FieldAnswer> {
    let object = match extract_json(model_text) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    };
    let folded: Vec<(String, &Value)> = object
        .iter()
        .flat_map(|m| m.iter())
        .map(|(k, v)| (fold_answer_key(k), v))
        .collect();

    fields
        .iter()
        .flat_map(|field| field.answer_places().map(move |place| (*field, place)))
        .map(|(field, place)| {
            let key = answer_key(field.field_id(), place.name());
            let (value, raw) = match &object {
                None => (AnswerValue::Unknown, model_text.to_string()),
                Some(map) => match find_entry(map, &folded, field, place, &key) {
                    Some(entry) => (parse_value(entry, place), raw_text(entry)),
                    None => (AnswerValue::Unknown, String::new()),
                },
            };
            FieldAnswer {
                field_id: field.field_id().to_string(),
                answer_place: place.name().to_string(),
                value,
                raw_model_text: raw,
            }
        })
        .collect()
}

fn find_entry<'v>(
    map: &'v Map<String, Value>,
    folded: &[(String, &'v Value)],
    field: &FormField,
    place: &AnswerPlace,
    key: &str,
) -> Option<&'v Value> {
    if let Some(v) = map.get(key) {
        return Some(v);
    }
    let want = fold_answer_key(key);
    if let Some((_, v)) = folded.iter().find(|(k, _)| *k == want) {
        return Some(v);
    }
    // Nested `{"6": {"Time": ...}}`.
    let nested = map.get(field.field_id())?.as_object()?;
    nested.get(place.name()).or_else(|| {
        let want = fold_answer_key(place.name());
        nested
            .iter()
            .find(|(k, _)| fold_answer_key(k) == want)
            .map(|(_, v)| v)
    })
}

fn raw_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn is_unknown_text(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case(UNKNOWN_TOKEN)
}

/// Converts one reply entry to a typed answer for `place`.
pub fn parse_value(v: &Value, place: &AnswerPlace) -> AnswerValue {
    let text = match v {
        Value::Null | Value::Array(_) | Value::Object(_) => return AnswerValue::Unknown,
        Value::String(s) if is_unknown_text(s) => return AnswerValue::Unknown,
        Value::String(s) => s.trim().to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
    };
    match place.answer_type() {
        AnswerType::Text => AnswerValue::Text(text),
        AnswerType::Digit => match v {
            Value::Bool(_) => AnswerValue::Unknown,
            Value::Number(n) => n
                .as_f64()
                .filter(|d| d.is_finite())
                .map_or(AnswerValue::Unknown, AnswerValue::Digit),
            _ => parse_number(&text).map_or(AnswerValue::Unknown, AnswerValue::Digit),
        },
        AnswerType::Choice => {
            resolve_choice(place, &text).map_or(AnswerValue::Unknown, AnswerValue::Choice)
        }
    }
}

/// A code, an exact label, or `code - label` where both agree.
fn resolve_choice(place: &AnswerPlace, text: &str) -> Option<String> {
    let choices = place.choices();
    if let Some(code) = choices.resolve(text) {
        return Some(code.to_string());
    }
    let (code, label) = text.split_once(['-', '.', ':', ')', '='])?;
    let code = choices.resolve(code.trim())?;
    let expected = choices.label(code)?;
    let label = label.trim().trim_start_matches(['-', ' ']).trim();
    expected
        .trim()
        .eq_ignore_ascii_case(label)
        .then(|| code.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FormSchema;

    fn fields<'a>(schema: &'a FormSchema, ids: &[&str]) -> Vec<&'a FormField> {
        schema.slice(ids.iter().copied())
    }

    #[test]
    fn time_answer_splits_into_digit_and_choice() {
        let schema = FormSchema::form57();
        let out = parse_answers(
            r#"{"6/Time": "14:30", "6/AM-PM": "PM"}"#,
            &fields(&schema, &["6"]),
        );
        assert_eq!(out[0].value, AnswerValue::Digit(1430.0));
        assert_eq!(out[1].value, AnswerValue::Choice("PM".into()));
        assert_eq!(out[0].raw_model_text, "14:30");
    }

    #[test]
    fn unknown_and_missing_entries() {
        let schema = FormSchema::form57();
        let out = parse_answers(
            r#"{"14/Estimated mph at impact": "unknown"}"#,
            &fields(&schema, &["14", "15"]),
        );
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|a| a.value.is_unknown()));
        assert_eq!(out[0].raw_model_text, "unknown");
        assert_eq!(out[1].raw_model_text, "");
    }

    #[test]
    fn labels_codes_and_units() {
        let schema = FormSchema::form57();
        let text = r#"{"15/direction": "south", "14/Estimated mph at impact": "about 55 mph",
                       "39/Gender": "1 - Male", "23/Weather": "Drizzle"}"#;
        let out = parse_answers(text, &fields(&schema, &["14", "15", "23", "39"]));
        let values: Vec<_> = out.iter().map(|a| a.value.clone()).collect();
        assert_eq!(
            values,
            [
                AnswerValue::Digit(55.0),
                AnswerValue::Choice("2".into()),
                AnswerValue::Unknown,
                AnswerValue::Choice("1".into()),
            ]
        );
        assert_eq!(out[2].raw_model_text, "Drizzle");
    }

    #[test]
    fn malformed_reply_keeps_the_text() {
        let schema = FormSchema::form57();
        let out = parse_answers("I could not find anything.", &fields(&schema, &["9"]));
        assert!(out[0].value.is_unknown());
        assert_eq!(out[0].raw_model_text, "I could not find anything.");
    }

    #[test]
    fn nested_and_slash_keys_are_accepted() {
        let schema = FormSchema::form57();
        let out = parse_answers(
            r#"{"6": {"Time": 930}, "6/AM/PM": "am"}"#,
            &fields(&schema, &["6"]),
        );
        assert_eq!(out[0].value, AnswerValue::Digit(930.0));
        assert_eq!(out[1].value, AnswerValue::Choice("AM".into()));
    }
}
