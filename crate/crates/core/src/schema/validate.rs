use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{
    choice_code_problem, AnswerPlace, AnswerType, ChoiceSet, FormField, FormSchema, SchemaVariant,
    NAIVE_PLACE_NAME,
};

/// Category of a structural defect found in a transcription or grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectClass {
    NotJson,
    WrongKind,
    MissingKey,
    ForeignKey,
    EmptyName,
    UnknownAnswerType,
    EmptyChoices,
    ChoicesOnNonChoice,
    InvalidChoiceCode,
    EmptyChoiceLabel,
    NoAnswerPlaces,
    NoFields,
    DuplicateFieldId,
    EmptyGroupName,
    DuplicateGroupName,
    EmptyGroup,
    UnknownFieldId,
    FieldInTwoGroups,
    FieldWithoutGroup,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub path: String,
    pub reason: String,
    pub class: DefectClass,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "issues", rename_all = "snake_case")]
pub enum ValidationResult {
    Pass,
    Fail(Vec<ValidationIssue>),
}

impl ValidationResult {
    pub(crate) fn from_issues(issues: Vec<ValidationIssue>) -> Self {
        if issues.is_empty() {
            ValidationResult::Pass
        } else {
            ValidationResult::Fail(issues)
        }
    }

    pub fn is_pass(&self) -> bool {
        matches!(self, ValidationResult::Pass)
    }

    pub fn issues(&self) -> &[ValidationIssue] {
        match self {
            ValidationResult::Pass => &[],
            ValidationResult::Fail(issues) => issues,
        }
    }

    pub fn has_class(&self, class: DefectClass) -> bool {
        self.issues().iter().any(|i| i.class == class)
    }
}

/// Checks that `raw` strictly follows the requested schema layout: required
/// keys present, nothing extra, known answer types, and choices consistent
/// with the answer type.
pub fn validate_transcription_format(raw: &Value, variant: SchemaVariant) -> ValidationResult {
    ValidationResult::from_issues(check_schema(raw, variant).0)
}

#[derive(Default)]
pub(crate) struct Issues(pub Vec<ValidationIssue>);

impl Issues {
    pub(crate) fn push(
        &mut self,
        path: impl Into<String>,
        class: DefectClass,
        reason: impl Into<String>,
    ) {
        self.0.push(ValidationIssue {
            path: path.into(),
            reason: reason.into(),
            class,
        });
    }
}

pub(crate) fn kind_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Walks the document once, collecting every defect and building the schema
/// when there are none.
pub(crate) fn check_schema(
    raw: &Value,
    variant: SchemaVariant,
) -> (Vec<ValidationIssue>, Option<FormSchema>) {
    let mut issues = Issues::default();
    let Some(entries) = raw.as_array() else {
        issues.push(
            "$",
            DefectClass::WrongKind,
            format!("expected an array of fields, found {}", kind_name(raw)),
        );
        return (issues.0, None);
    };
    if entries.is_empty() {
        issues.push(
            "$",
            DefectClass::NoFields,
            "a form needs at least one field",
        );
        return (issues.0, None);
    }

    let mut fields = Vec::with_capacity(entries.len());
    let mut seen_ids = HashSet::new();
    for (index, entry) in entries.iter().enumerate() {
        let path = format!("$[{index}]");
        let Some(obj) = entry.as_object() else {
            issues.push(
                &path,
                DefectClass::WrongKind,
                format!("expected a field object, found {}", kind_name(entry)),
            );
            continue;
        };
        if let Some(field) = check_field(obj, &path, variant, &mut issues) {
            if !seen_ids.insert(field.field_id().to_string()) {
                issues.push(
                    format!("{path}.name"),
                    DefectClass::DuplicateFieldId,
                    format!("duplicate field id `{}`", field.field_id()),
                );
                continue;
            }
            fields.push(field);
        }
    }

    if !issues.0.is_empty() {
        return (issues.0, None);
    }
    match FormSchema::new(fields) {
        Ok(schema) => (Vec::new(), Some(schema)),
        Err(e) => {
            issues.push(e.path, DefectClass::DuplicateFieldId, e.reason);
            (issues.0, None)
        }
    }
}

fn check_field(
    obj: &Map<String, Value>,
    path: &str,
    variant: SchemaVariant,
    issues: &mut Issues,
) -> Option<FormField> {
    let allowed: &[&str] = match variant {
        SchemaVariant::HumanCentric => &["name", "answer_places"],
        SchemaVariant::Naive => &["name", "answer_type", "choices"],
    };
    let before = issues.0.len();
    check_foreign_keys(obj, path, allowed, issues);
    let name = check_name(
        obj.get("name"),
        &format!("{path}.name"),
        "field name",
        issues,
    );

    let places = match variant {
        SchemaVariant::HumanCentric => check_answer_places(
            obj.get("answer_places"),
            &format!("{path}.answer_places"),
            issues,
        ),
        SchemaVariant::Naive => {
            check_place_body(obj, NAIVE_PLACE_NAME, path, issues).map(|p| vec![p])
        }
    };

    if issues.0.len() != before {
        return None;
    }
    let (name, places) = (name?, places?);
    match FormField::new(name, places) {
        Ok(field) => Some(field),
        Err(e) => {
            issues.push(
                format!("{path}.{}", e.path),
                DefectClass::WrongKind,
                e.reason,
            );
            None
        }
    }
}

fn check_foreign_keys(obj: &Map<String, Value>, path: &str, allowed: &[&str], issues: &mut Issues) {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            issues.push(
                format!("{path}.{key}"),
                DefectClass::ForeignKey,
                format!("unexpected key `{key}`"),
            );
        }
    }
}

fn check_name(
    value: Option<&Value>,
    path: &str,
    what: &str,
    issues: &mut Issues,
) -> Option<String> {
    match value {
        None => {
            issues.push(path, DefectClass::MissingKey, format!("missing {what}"));
            None
        }
        Some(Value::String(s)) if s.trim().is_empty() => {
            issues.push(path, DefectClass::EmptyName, format!("{what} is empty"));
            None
        }
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => {
            issues.push(
                path,
                DefectClass::WrongKind,
                format!("{what} must be a string, found {}", kind_name(other)),
            );
            None
        }
    }
}

fn check_answer_places(
    value: Option<&Value>,
    path: &str,
    issues: &mut Issues,
) -> Option<Vec<AnswerPlace>> {
    let obj = match value {
        None => {
            issues.push(path, DefectClass::MissingKey, "missing answer_places");
            return None;
        }
        Some(Value::Object(obj)) => obj,
        Some(other) => {
            issues.push(
                path,
                DefectClass::WrongKind,
                format!(
                    "answer_places must be an object, found {}",
                    kind_name(other)
                ),
            );
            return None;
        }
    };
    if obj.is_empty() {
        issues.push(
            path,
            DefectClass::NoAnswerPlaces,
            "field has no answer places",
        );
        return None;
    }
    let mut places = Vec::with_capacity(obj.len());
    for (name, body) in obj {
        let place_path = format!("{path}[{name:?}]");
        if name.trim().is_empty() {
            issues.push(
                &place_path,
                DefectClass::EmptyName,
                "answer place name is empty",
            );
            continue;
        }
        let Some(body) = body.as_object() else {
            issues.push(
                &place_path,
                DefectClass::WrongKind,
                format!("answer place must be an object, found {}", kind_name(body)),
            );
            continue;
        };
        check_foreign_keys(body, &place_path, &["answer_type", "choices"], issues);
        if let Some(place) = check_place_body(body, name, &place_path, issues) {
            places.push(place);
        }
    }
    Some(places)
}

/// `answer_type` + `choices` pair, shared by both layouts.
fn check_place_body(
    obj: &Map<String, Value>,
    name: &str,
    path: &str,
    issues: &mut Issues,
) -> Option<AnswerPlace> {
    let type_path = format!("{path}.answer_type");
    let answer_type = match obj.get("answer_type") {
        None => {
            issues.push(&type_path, DefectClass::MissingKey, "missing answer_type");
            None
        }
        Some(Value::String(s)) => {
            let parsed = AnswerType::parse(s);
            if parsed.is_none() {
                issues.push(
                    &type_path,
                    DefectClass::UnknownAnswerType,
                    format!("answer_type `{s}` is not one of text, digit, choice"),
                );
            }
            parsed
        }
        Some(other) => {
            issues.push(
                &type_path,
                DefectClass::WrongKind,
                format!("answer_type must be a string, found {}", kind_name(other)),
            );
            None
        }
    };

    let choices_path = format!("{path}.choices");
    let choices = match obj.get("choices") {
        None => {
            issues.push(&choices_path, DefectClass::MissingKey, "missing choices");
            None
        }
        Some(Value::Object(map)) => check_choices(map, &choices_path, issues),
        Some(other) => {
            issues.push(
                &choices_path,
                DefectClass::WrongKind,
                format!("choices must be an object, found {}", kind_name(other)),
            );
            None
        }
    };

    let (answer_type, choices) = (answer_type?, choices?);
    match (answer_type, choices.is_empty()) {
        (AnswerType::Choice, true) => {
            issues.push(
                &choices_path,
                DefectClass::EmptyChoices,
                "choice answer place has no choices",
            );
            None
        }
        (AnswerType::Text | AnswerType::Digit, false) => {
            issues.push(
                &choices_path,
                DefectClass::ChoicesOnNonChoice,
                format!("{answer_type} answer place must not list choices"),
            );
            None
        }
        _ => AnswerPlace::new(name, answer_type, choices).ok(),
    }
}

fn check_choices(map: &Map<String, Value>, path: &str, issues: &mut Issues) -> Option<ChoiceSet> {
    let before = issues.0.len();
    let mut set = ChoiceSet::new();
    for (code, label) in map {
        let entry_path = format!("{path}[{code:?}]");
        if let Some(reason) = choice_code_problem(code) {
            issues.push(&entry_path, DefectClass::InvalidChoiceCode, reason);
            continue;
        }
        match label {
            Value::String(l) if l.trim().is_empty() => {
                issues.push(
                    &entry_path,
                    DefectClass::EmptyChoiceLabel,
                    "choice label is empty",
                );
            }
            Value::String(l) => {
                let _ = set.insert(code.clone(), l.clone());
            }
            other => {
                issues.push(
                    &entry_path,
                    DefectClass::WrongKind,
                    format!("choice label must be a string, found {}", kind_name(other)),
                );
            }
        }
    }
    (issues.0.len() == before).then_some(set)
}
