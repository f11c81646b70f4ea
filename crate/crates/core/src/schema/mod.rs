//! Typed model of Form 57 and the two JSON layouts used to transcribe it.
//!
//! A schema document is a JSON array of field objects. In the
//! [`SchemaVariant::HumanCentric`] layout every field lists its answer places:
//!
//! ```json
//! [
//!   {
//!     "name": "6. Time of Accident/Incident",
//!     "answer_places": {
//!       "Time": { "answer_type": "digit", "choices": {} },
//!       "AM/PM": { "answer_type": "choice", "choices": { "AM": "AM", "PM": "PM" } }
//!     }
//!   }
//! ]
//! ```
//!
//! The [`SchemaVariant::Naive`] layout carries `answer_type` and `choices`
//! directly on the field and is loaded as a single implicit answer place
//! named [`NAIVE_PLACE_NAME`].

mod grouping;
mod validate;

pub use grouping::{validate_groups_format, GroupingAssignment};
pub use validate::{validate_transcription_format, DefectClass, ValidationIssue, ValidationResult};

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Name given to the single answer place of a field loaded from the naive layout.
pub const NAIVE_PLACE_NAME: &str = "answer";

/// Longest accepted choice code.
pub const MAX_CHOICE_CODE_LEN: usize = 8;

/// Human-centric Form 57 transcription with all 66 fields, used as the gold
/// reference when scoring model transcriptions.
pub const FORM57_SCHEMA_JSON: &str = include_str!("../../fixtures/form57.schema.json");

/// Six-group partition of [`FORM57_SCHEMA_JSON`].
pub const FORM57_GROUPING_JSON: &str = include_str!("../../fixtures/form57.grouping.json");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {reason}")]
pub struct SchemaFormatError {
    pub path: String,
    pub reason: String,
}

impl SchemaFormatError {
    pub fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaVariant {
    /// One answer type per field.
    Naive,
    /// One entry per writable or markable area of a field.
    #[default]
    HumanCentric,
}

impl FromStr for SchemaVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(SchemaVariant::Naive),
            "human-centric" | "human_centric" | "humancentric" => Ok(SchemaVariant::HumanCentric),
            other => Err(format!("unknown schema variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerType {
    Text,
    Digit,
    Choice,
}

impl AnswerType {
    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::Text => "text",
            AnswerType::Digit => "digit",
            AnswerType::Choice => "choice",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match raw {
            "text" => Some(AnswerType::Text),
            "digit" => Some(AnswerType::Digit),
            "choice" => Some(AnswerType::Choice),
            _ => None,
        }
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered `code -> label` list of a choice answer place.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChoiceSet {
    entries: IndexMap<String, String>,
}

impl ChoiceSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, C, L>(pairs: I) -> Result<Self, SchemaFormatError>
    where
        I: IntoIterator<Item = (C, L)>,
        C: Into<String>,
        L: Into<String>,
    {
        let mut set = ChoiceSet::new();
        for (code, label) in pairs {
            set.insert(code.into(), label.into())?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, code: String, label: String) -> Result<(), SchemaFormatError> {
        if let Some(reason) = choice_code_problem(&code) {
            return Err(SchemaFormatError::new(format!("choices[{code:?}]"), reason));
        }
        if label.trim().is_empty() {
            return Err(SchemaFormatError::new(
                format!("choices[{code:?}]"),
                "choice label is empty",
            ));
        }
        if self.entries.contains_key(&code) {
            return Err(SchemaFormatError::new(
                format!("choices[{code:?}]"),
                "duplicate choice code",
            ));
        }
        self.entries.insert(code, label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label(&self, code: &str) -> Option<&str> {
        self.entries.get(code).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(c, l)| (c.as_str(), l.as_str()))
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Resolves a free-form answer to a canonical code. Matches a code or an
    /// exact label, ignoring case and surrounding whitespace.
    pub fn resolve(&self, raw: &str) -> Option<&str> {
        let needle = raw.trim();
        if needle.is_empty() {
            return None;
        }
        self.entries
            .keys()
            .find(|code| code.eq_ignore_ascii_case(needle))
            .or_else(|| {
                let folded = needle.to_lowercase();
                self.entries
                    .iter()
                    .find(|(_, label)| label.trim().to_lowercase() == folded)
                    .map(|(code, _)| code)
            })
            .map(String::as_str)
    }

    fn to_json(&self) -> Value {
        Value::Object(
            self.entries
                .iter()
                .map(|(c, l)| (c.clone(), Value::String(l.clone())))
                .collect(),
        )
    }
}

/// Returns why `code` is not an acceptable choice code, if it is not.
pub(crate) fn choice_code_problem(code: &str) -> Option<&'static str> {
    if code.is_empty() {
        Some("choice code is empty")
    } else if code.chars().any(char::is_whitespace) {
        Some("choice code contains whitespace")
    } else if code.chars().count() > MAX_CHOICE_CODE_LEN {
        Some("choice code is longer than 8 characters")
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerPlace {
    name: String,
    answer_type: AnswerType,
    choices: ChoiceSet,
}

impl AnswerPlace {
    pub fn new(
        name: impl Into<String>,
        answer_type: AnswerType,
        choices: ChoiceSet,
    ) -> Result<Self, SchemaFormatError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(SchemaFormatError::new(
                "answer_places",
                "answer place name is empty",
            ));
        }
        match (answer_type, choices.is_empty()) {
            (AnswerType::Choice, true) => Err(SchemaFormatError::new(
                format!("answer_places[{name:?}].choices"),
                "choice answer place has no choices",
            )),
            (AnswerType::Text | AnswerType::Digit, false) => Err(SchemaFormatError::new(
                format!("answer_places[{name:?}].choices"),
                format!("{answer_type} answer place must not list choices"),
            )),
            _ => Ok(Self {
                name,
                answer_type,
                choices,
            }),
        }
    }

    pub fn text(name: impl Into<String>) -> Result<Self, SchemaFormatError> {
        Self::new(name, AnswerType::Text, ChoiceSet::new())
    }

    pub fn digit(name: impl Into<String>) -> Result<Self, SchemaFormatError> {
        Self::new(name, AnswerType::Digit, ChoiceSet::new())
    }

    pub fn choice(name: impl Into<String>, choices: ChoiceSet) -> Result<Self, SchemaFormatError> {
        Self::new(name, AnswerType::Choice, choices)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn answer_type(&self) -> AnswerType {
        self.answer_type
    }

    pub fn choices(&self) -> &ChoiceSet {
        &self.choices
    }

    fn body_json(&self) -> Map<String, Value> {
        let mut body = Map::new();
        body.insert(
            "answer_type".into(),
            Value::String(self.answer_type.as_str().into()),
        );
        body.insert("choices".into(), self.choices.to_json());
        body
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormField {
    field_id: String,
    name: String,
    answer_places: IndexMap<String, AnswerPlace>,
}

impl FormField {
    /// Builds a field; the identifier is the entry number printed before the
    /// first `.` of `name` (see [`field_id_from_name`]).
    pub fn new(
        name: impl Into<String>,
        places: impl IntoIterator<Item = AnswerPlace>,
    ) -> Result<Self, SchemaFormatError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(SchemaFormatError::new("name", "field name is empty"));
        }
        let mut answer_places = IndexMap::new();
        for place in places {
            if answer_places.contains_key(place.name()) {
                return Err(SchemaFormatError::new(
                    format!("answer_places[{:?}]", place.name()),
                    "duplicate answer place name",
                ));
            }
            answer_places.insert(place.name().to_string(), place);
        }
        if answer_places.is_empty() {
            return Err(SchemaFormatError::new(
                "answer_places",
                "field has no answer places",
            ));
        }
        Ok(Self {
            field_id: field_id_from_name(&name),
            name,
            answer_places,
        })
    }

    pub fn field_id(&self) -> &str {
        &self.field_id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn answer_places(&self) -> impl ExactSizeIterator<Item = &AnswerPlace> {
        self.answer_places.values()
    }

    pub fn answer_place(&self, name: &str) -> Option<&AnswerPlace> {
        self.answer_places.get(name)
    }

    pub fn place_count(&self) -> usize {
        self.answer_places.len()
    }
}

/// Key naming one answer place in model output and on disk:
/// `"{field_id}/{place}"`, with any `/` inside the place name written as `-`
/// so the first `/` always separates the two parts (`"6/AM-PM"`).
pub fn answer_key(field_id: &str, place: &str) -> String {
    format!("{field_id}/{}", place.replace('/', "-"))
}

/// Loose form of an answer key for matching what a model wrote: lowercase,
/// no whitespace, every `/` as `-`.
pub fn fold_answer_key(key: &str) -> String {
    key.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| if c == '/' { '-' } else { c })
        .flat_map(char::to_lowercase)
        .collect()
}

/// Entry number printed in front of a field name: `"20a. Hazmat"` gives
/// `"20a"`. Names without such a prefix are their own identifier.
pub fn field_id_from_name(name: &str) -> String {
    let trimmed = name.trim();
    if let Some((prefix, _)) = trimmed.split_once('.') {
        let prefix = prefix.trim();
        let looks_numbered = prefix.len() <= 4
            && prefix.starts_with(|c: char| c.is_ascii_digit())
            && prefix.chars().all(|c| c.is_ascii_alphanumeric());
        if looks_numbered {
            return prefix.to_string();
        }
    }
    trimmed.to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FormSchema {
    fields: IndexMap<String, FormField>,
}

impl FormSchema {
    pub fn new(fields: impl IntoIterator<Item = FormField>) -> Result<Self, SchemaFormatError> {
        let mut map = IndexMap::new();
        for (index, field) in fields.into_iter().enumerate() {
            if map.contains_key(field.field_id()) {
                return Err(SchemaFormatError::new(
                    format!("$[{index}].name"),
                    format!("duplicate field id `{}`", field.field_id()),
                ));
            }
            map.insert(field.field_id().to_string(), field);
        }
        Ok(Self { fields: map })
    }

    /// The canonical 66-field Form 57 transcription.
    pub fn form57() -> Self {
        let raw: Value =
            serde_json::from_str(FORM57_SCHEMA_JSON).expect("bundled Form 57 schema is JSON");
        parse_schema(&raw, SchemaVariant::HumanCentric).expect("bundled Form 57 schema is valid")
    }

    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> impl ExactSizeIterator<Item = &FormField> {
        self.fields.values()
    }

    pub fn field(&self, field_id: &str) -> Option<&FormField> {
        self.fields.get(field_id)
    }

    pub fn field_ids(&self) -> impl Iterator<Item = &str> {
        self.fields.keys().map(String::as_str)
    }

    pub fn contains(&self, field_id: &str) -> bool {
        self.fields.contains_key(field_id)
    }

    /// Every `(field, answer place)` pair in document order.
    pub fn places(&self) -> impl Iterator<Item = (&FormField, &AnswerPlace)> {
        self.fields
            .values()
            .flat_map(|f| f.answer_places().map(move |p| (f, p)))
    }

    pub fn place_count(&self) -> usize {
        self.fields.values().map(FormField::place_count).sum()
    }

    /// Answer keys of every place, in document order.
    pub fn answer_keys(&self) -> impl Iterator<Item = String> + '_ {
        self.places()
            .map(|(f, p)| answer_key(f.field_id(), p.name()))
    }

    /// Resolves an answer key to its field and place.
    pub fn lookup_key(&self, key: &str) -> Option<(&FormField, &AnswerPlace)> {
        let (field_id, place) = key.split_once('/')?;
        let field = self.fields.get(field_id)?;
        field
            .answer_places()
            .find(|p| p.name().replace('/', "-") == place)
            .map(|p| (field, p))
    }

    /// Fields with the given identifiers, in the order requested.
    pub fn slice<I, S>(&self, ids: I) -> Vec<&FormField>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        ids.into_iter()
            .filter_map(|id| self.fields.get(id.as_ref()))
            .collect()
    }
}

/// Loads a schema document in the requested layout.
pub fn parse_schema(raw: &Value, variant: SchemaVariant) -> Result<FormSchema, SchemaFormatError> {
    let (issues, schema) = validate::check_schema(raw, variant);
    match (issues.into_iter().next(), schema) {
        (Some(issue), _) => Err(SchemaFormatError::new(issue.path, issue.reason)),
        (None, Some(schema)) => Ok(schema),
        (None, None) => Err(SchemaFormatError::new("$", "schema could not be built")),
    }
}

pub fn parse_schema_str(
    raw: &str,
    variant: SchemaVariant,
) -> Result<FormSchema, SchemaFormatError> {
    let value: Value = serde_json::from_str(raw)
        .map_err(|e| SchemaFormatError::new("$", format!("not valid JSON: {e}")))?;
    parse_schema(&value, variant)
}

/// Parses model output that must strictly follow the requested layout,
/// returning every defect on failure.
pub fn check_transcription(
    raw: &Value,
    variant: SchemaVariant,
) -> Result<FormSchema, ValidationResult> {
    match validate::check_schema(raw, variant) {
        (issues, Some(schema)) if issues.is_empty() => Ok(schema),
        (issues, _) => Err(ValidationResult::from_issues(issues)),
    }
}

/// Parses a grouping that must partition the fields of `schema`.
pub fn check_grouping(
    raw: &Value,
    schema: &FormSchema,
) -> Result<GroupingAssignment, ValidationResult> {
    match grouping::check_groups(raw, schema) {
        (issues, Some(grouping)) if issues.is_empty() => Ok(grouping),
        (issues, _) => Err(ValidationResult::from_issues(issues)),
    }
}

/// Writes a schema in the requested layout. The naive layout can only hold
/// fields that have exactly one answer place named [`NAIVE_PLACE_NAME`].
pub fn serialize_schema(
    schema: &FormSchema,
    variant: SchemaVariant,
) -> Result<Value, SchemaFormatError> {
    let mut out = Vec::with_capacity(schema.field_count());
    for (index, field) in schema.fields().enumerate() {
        let mut obj = Map::new();
        obj.insert("name".into(), Value::String(field.name.clone()));
        match variant {
            SchemaVariant::HumanCentric => {
                let places = field
                    .answer_places()
                    .map(|p| (p.name.clone(), Value::Object(p.body_json())))
                    .collect();
                obj.insert("answer_places".into(), Value::Object(places));
            }
            SchemaVariant::Naive => {
                let place = match field.answer_places.get(NAIVE_PLACE_NAME) {
                    Some(place) if field.place_count() == 1 => place,
                    _ => {
                        return Err(SchemaFormatError::new(
                            format!("$[{index}]"),
                            "field does not have a single implicit answer place",
                        ))
                    }
                };
                obj.extend(place.body_json());
            }
        }
        out.push(Value::Object(obj));
    }
    Ok(Value::Array(out))
}

/// Pretty-printed document with a trailing newline, the on-disk format.
pub fn schema_to_string(
    schema: &FormSchema,
    variant: SchemaVariant,
) -> Result<String, SchemaFormatError> {
    let value = serialize_schema(schema, variant)?;
    Ok(crate::io::to_pretty_json(&value))
}
