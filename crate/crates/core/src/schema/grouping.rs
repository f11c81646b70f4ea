use std::collections::HashMap;

use indexmap::IndexMap;
use serde_json::Value;

use super::validate::{kind_name, Issues};
use super::{DefectClass, FormSchema, SchemaFormatError, ValidationResult};

/// Partition of a schema's fields into named groups, e.g.
/// `{"time & location": ["5", "6", ...], "highway user": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupingAssignment {
    groups: IndexMap<String, Vec<String>>,
}

/// Checks that `raw` maps non-empty, unique group names to field id lists
/// that together cover every field of `schema` exactly once.
pub fn validate_groups_format(raw: &Value, schema: &FormSchema) -> ValidationResult {
    ValidationResult::from_issues(check_groups(raw, schema).0)
}

pub(super) fn check_groups(
    raw: &Value,
    schema: &FormSchema,
) -> (
    Vec<crate::schema::ValidationIssue>,
    Option<GroupingAssignment>,
) {
    let mut issues = Issues::default();
    let Some(obj) = raw.as_object() else {
        issues.push(
            "$",
            DefectClass::WrongKind,
            format!("expected an object of groups, found {}", kind_name(raw)),
        );
        return (issues.0, None);
    };

    let mut owner: HashMap<&str, &str> = HashMap::new();
    let mut groups = IndexMap::new();
    let mut seen_names = HashMap::new();
    for (name, members) in obj {
        let path = format!("$[{name:?}]");
        if name.trim().is_empty() {
            issues.push(&path, DefectClass::EmptyGroupName, "group name is empty");
        }
        // Object keys are unique already; names differing only by surrounding
        // whitespace or case are still the same group.
        let folded = name.trim().to_lowercase();
        if let Some(prev) = seen_names.insert(folded, name.as_str()) {
            issues.push(
                &path,
                DefectClass::DuplicateGroupName,
                format!("group name duplicates `{prev}`"),
            );
        }
        let Some(members) = members.as_array() else {
            issues.push(
                &path,
                DefectClass::WrongKind,
                format!(
                    "group members must be an array, found {}",
                    kind_name(members)
                ),
            );
            continue;
        };
        if members.is_empty() {
            issues.push(&path, DefectClass::EmptyGroup, "group has no fields");
        }
        let mut ids = Vec::with_capacity(members.len());
        for (i, member) in members.iter().enumerate() {
            let member_path = format!("{path}[{i}]");
            let Some(id) = member.as_str() else {
                issues.push(
                    &member_path,
                    DefectClass::WrongKind,
                    format!("field id must be a string, found {}", kind_name(member)),
                );
                continue;
            };
            let Some(field) = schema.field(id) else {
                issues.push(
                    &member_path,
                    DefectClass::UnknownFieldId,
                    format!("`{id}` is not a field of the schema"),
                );
                continue;
            };
            if let Some(prev) = owner.insert(field.field_id(), name.as_str()) {
                issues.push(
                    &member_path,
                    DefectClass::FieldInTwoGroups,
                    format!("field `{id}` already belongs to group `{prev}`"),
                );
                continue;
            }
            ids.push(id.to_string());
        }
        groups.insert(name.clone(), ids);
    }

    for id in schema.field_ids() {
        if !owner.contains_key(id) {
            issues.push(
                "$",
                DefectClass::FieldWithoutGroup,
                format!("field `{id}` is not assigned to any group"),
            );
        }
    }

    if issues.0.is_empty() {
        (issues.0, Some(GroupingAssignment { groups }))
    } else {
        (issues.0, None)
    }
}

impl GroupingAssignment {
    /// Parses and validates a grouping document against `schema`.
    pub fn parse(raw: &Value, schema: &FormSchema) -> Result<Self, SchemaFormatError> {
        let (issues, grouping) = check_groups(raw, schema);
        match (issues.into_iter().next(), grouping) {
            (Some(issue), _) => Err(SchemaFormatError::new(issue.path, issue.reason)),
            (None, Some(g)) => Ok(g),
            (None, None) => Err(SchemaFormatError::new("$", "grouping could not be built")),
        }
    }

    pub fn parse_str(raw: &str, schema: &FormSchema) -> Result<Self, SchemaFormatError> {
        let value: Value = serde_json::from_str(raw)
            .map_err(|e| SchemaFormatError::new("$", format!("not valid JSON: {e}")))?;
        Self::parse(&value, schema)
    }

    /// The bundled six-group partition of [`FormSchema::form57`].
    pub fn form57() -> Self {
        Self::parse_str(super::FORM57_GROUPING_JSON, &FormSchema::form57())
            .expect("bundled Form 57 grouping is valid")
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> impl ExactSizeIterator<Item = (&str, &[String])> {
        self.groups
            .iter()
            .map(|(n, ids)| (n.as_str(), ids.as_slice()))
    }

    pub fn group_names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn members(&self, group: &str) -> Option<&[String]> {
        self.groups.get(group).map(Vec::as_slice)
    }

    pub fn group_of(&self, field_id: &str) -> Option<&str> {
        self.groups
            .iter()
            .find(|(_, ids)| ids.iter().any(|id| id == field_id))
            .map(|(n, _)| n.as_str())
    }

    pub fn to_json(&self) -> Value {
        Value::Object(
            self.groups
                .iter()
                .map(|(n, ids)| (n.clone(), Value::from(ids.clone())))
                .collect(),
        )
    }

    pub fn to_json_string(&self) -> String {
        crate::io::to_pretty_json(&self.to_json())
    }
}

impl serde::Serialize for GroupingAssignment {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.groups.serialize(serializer)
    }
}

impl<'de> serde::Deserialize<'de> for GroupingAssignment {
    /// Structural deserialization only; use [`GroupingAssignment::parse`] to
    /// check the partition against a schema.
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let groups = IndexMap::<String, Vec<String>>::deserialize(deserializer)?;
        Ok(Self { groups })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{AnswerPlace, FormField};
    use serde_json::json;

    fn three_fields() -> FormSchema {
        FormSchema::new(
            ["5. Date", "6. Time", "13. Type"]
                .map(|n| FormField::new(n, [AnswerPlace::text("value").unwrap()]).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn partition_passes() {
        let raw = json!({"time & location": ["5", "6"], "highway user": ["13"]});
        assert!(validate_groups_format(&raw, &three_fields()).is_pass());
        let g = GroupingAssignment::parse(&raw, &three_fields()).unwrap();
        assert_eq!(g.group_of("13"), Some("highway user"));
        assert_eq!(g.to_json(), raw);
    }

    #[test]
    fn omitted_field_is_not_a_cover() {
        let raw = json!({"time & location": ["5", "6"]});
        let result = validate_groups_format(&raw, &three_fields());
        assert!(result.has_class(DefectClass::FieldWithoutGroup));
    }

    #[test]
    fn field_in_two_groups_is_not_disjoint() {
        let raw = json!({"time & location": ["5", "6"], "highway user": ["13", "6"]});
        let result = validate_groups_format(&raw, &three_fields());
        assert!(result.has_class(DefectClass::FieldInTwoGroups));
    }

    #[test]
    fn unknown_ids_and_blank_names_fail() {
        let raw = json!({" ": ["5", "6", "13"], "train": ["99"]});
        let result = validate_groups_format(&raw, &three_fields());
        assert!(result.has_class(DefectClass::EmptyGroupName));
        assert!(result.has_class(DefectClass::UnknownFieldId));
    }

    #[test]
    fn bundled_grouping_has_six_groups() {
        let g = GroupingAssignment::form57();
        assert_eq!(g.group_count(), 6);
        let names: Vec<_> = g.group_names().collect();
        assert!(names.contains(&"casualties"));
        assert!(names.contains(&"environment"));
    }
}
