//! Filling the form from a news article.
//!
//! Fields are asked in batches: one field per request ([`BatchingMode::Single`]),
//! the whole form at once ([`BatchingMode::All`]), or one group of the field
//! grouping per request ([`BatchingMode::Group`]). Whatever the model
//! replies, every answer place ends up with an answer; anything the reply
//! does not support becomes [`AnswerValue::Unknown`].

mod article;
mod parse;

pub use article::{
    load_articles, ArticleDoc, ArticleError, ArticleLoad, ArticleMeta, LocationHint,
};
pub use parse::{parse_answers, parse_value, UNKNOWN_TOKEN};

use std::fmt;
use std::str::FromStr;

use futures::stream::{self, StreamExt, TryStreamExt};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::gateway::{
    complete_with_retry, GatewayError, ModelGateway, ModelRequest, ModelRole, RetryPolicy,
    UserPart, DETERMINISTIC_TEMPERATURE,
};
use crate::prompts::{PromptError, PromptKind, PromptSet};
use crate::schema::{answer_key, AnswerType, FormField, FormSchema, GroupingAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchingMode {
    Single,
    All,
    #[default]
    Group,
}

impl BatchingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BatchingMode::Single => "single",
            BatchingMode::All => "all",
            BatchingMode::Group => "group",
        }
    }
}

impl fmt::Display for BatchingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BatchingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(BatchingMode::Single),
            "all" => Ok(BatchingMode::All),
            "group" => Ok(BatchingMode::Group),
            other => Err(format!(
                "unknown batching mode `{other}` (expected single, all or group)"
            )),
        }
    }
}

/// A typed answer. Digits are finite; choice codes belong to the answer
/// place's choice set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum AnswerValue {
    Text(String),
    Digit(f64),
    Choice(String),
    Unknown,
}

impl AnswerValue {
    pub fn is_unknown(&self) -> bool {
        matches!(self, AnswerValue::Unknown)
    }

    /// Human-readable form used in reports.
    pub fn display(&self) -> String {
        match self {
            AnswerValue::Text(s) | AnswerValue::Choice(s) => s.clone(),
            AnswerValue::Digit(d) => format_number(*d),
            AnswerValue::Unknown => UNKNOWN_TOKEN.to_string(),
        }
    }
}

/// Whole numbers without a trailing `.0`.
pub fn format_number(d: f64) -> String {
    if d.fract() == 0.0 && d.abs() < 1e15 {
        format!("{}", d as i64)
    } else {
        d.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldAnswer {
    pub field_id: String,
    pub answer_place: String,
    pub value: AnswerValue,
    /// What the model wrote for this entry, or its whole reply when that
    /// could not be read as JSON.
    pub raw_model_text: String,
}

impl FieldAnswer {
    pub fn key(&self) -> String {
        answer_key(&self.field_id, &self.answer_place)
    }
}

/// One article's answers for every answer place of the schema, keyed by
/// answer key in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulatedForm {
    pub article_id: String,
    pub batching_mode: BatchingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping_used: Option<GroupingAssignment>,
    pub answers: IndexMap<String, FieldAnswer>,
}

impl PopulatedForm {
    pub fn answer(&self, key: &str) -> Option<&FieldAnswer> {
        self.answers.get(key)
    }

    pub fn unknown_count(&self) -> usize {
        self.answers
            .values()
            .filter(|a| a.value.is_unknown())
            .count()
    }

    /// True when the answer keys are exactly the schema's, in order.
    pub fn covers(&self, schema: &FormSchema) -> bool {
        self.answers.keys().cloned().eq(schema.answer_keys())
    }

    /// Replaces the answers for the given places, leaving all others alone.
    pub fn replace_answers(&mut self, answers: impl IntoIterator<Item = FieldAnswer>) {
        for answer in answers {
            if let Some(slot) = self.answers.get_mut(&answer.key()) {
                *slot = answer;
            }
        }
    }

    pub fn to_json_string(&self) -> String {
        crate::io::to_pretty_json(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaConfig {
    /// Requests in flight at once for one article.
    pub max_concurrency: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub retry_policy: RetryPolicy,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            max_concurrency: 4,
            temperature: DETERMINISTIC_TEMPERATURE,
            max_output_tokens: 8192,
            retry_policy: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QaError {
    #[error("group mode needs a field grouping")]
    MissingGrouping,
    #[error("grouping does not fit the schema: {0}")]
    InvalidGrouping(String),
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("batch `{batch}` of article {article_id}: {source}")]
    Gateway {
        article_id: String,
        batch: String,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl QaError {
    pub fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            QaError::Gateway { source, .. } => Some(source),
            _ => None,
        }
    }
}

fn describe_place(field: &FormField, place: &crate::schema::AnswerPlace) -> String {
    let key = answer_key(field.field_id(), place.name());
    let kind = match place.answer_type() {
        AnswerType::Choice => {
            let options = place
                .choices()
                .iter()
                .map(|(code, label)| format!("{code} = {label}"))
                .collect::<Vec<_>>()
                .join("; ");
            format!("choice: {options}")
        }
        other => other.as_str().to_string(),
    };
    format!("{key}: {} / {} ({kind})", field.name().trim(), place.name())
}

/// The QA request for one batch of fields.
///
/// # Panics
///
/// Panics if `fields` is empty.
pub fn build_qa_prompt(
    prompts: &PromptSet,
    fields: &[&FormField],
    article: &ArticleDoc,
    config: &QaConfig,
) -> Result<ModelRequest, PromptError> {
    assert!(!fields.is_empty(), "a QA batch needs at least one field");
    let listing = fields
        .iter()
        .flat_map(|f| f.answer_places().map(move |p| describe_place(f, p)))
        .collect::<Vec<_>>()
        .join("\n");
    let published = article.published_label();
    let rendered = prompts.render(
        PromptKind::Qa,
        &[
            ("published_at", &published),
            ("source", &article.source_name),
            ("article", article.body.trim()),
            ("fields", &listing),
        ],
    )?;
    Ok(ModelRequest::new(
        ModelRole::Qa,
        rendered.system,
        vec![UserPart::Text(rendered.user)],
    )
    .expect("request has a text part")
    .with_temperature(config.temperature)
    .with_max_output_tokens(config.max_output_tokens))
}

/// Fills the form with the given batching.
pub struct QaEngine<'a> {
    gateway: &'a dyn ModelGateway,
    prompts: &'a PromptSet,
    config: &'a QaConfig,
}

struct Batch<'s> {
    label: String,
    fields: Vec<&'s FormField>,
}

impl<'a> QaEngine<'a> {
    pub fn new(
        gateway: &'a dyn ModelGateway,
        prompts: &'a PromptSet,
        config: &'a QaConfig,
    ) -> Self {
        Self {
            gateway,
            prompts,
            config,
        }
    }

    /// Asks one batch of fields and parses the reply.
    pub async fn answer_batch(
        &self,
        fields: &[&FormField],
        article: &ArticleDoc,
    ) -> Result<Vec<FieldAnswer>, QaError> {
        let req = build_qa_prompt(self.prompts, fields, article, self.config)?;
        let label = match fields {
            [one] => one.field_id().to_string(),
            _ => format!("{} fields", fields.len()),
        };
        let resp = complete_with_retry(self.gateway, &req, &self.config.retry_policy)
            .await
            .map_err(|source| QaError::Gateway {
                article_id: article.article_id.clone(),
                batch: label,
                source,
            })?;
        Ok(parse_answers(&resp.text, fields))
    }

    fn batches<'s>(
        schema: &'s FormSchema,
        grouping: Option<&GroupingAssignment>,
        mode: BatchingMode,
    ) -> Result<Vec<Batch<'s>>, QaError> {
        Ok(match mode {
            BatchingMode::Single => schema
                .fields()
                .map(|f| Batch {
                    label: f.field_id().to_string(),
                    fields: vec![f],
                })
                .collect(),
            BatchingMode::All => vec![Batch {
                label: "all".into(),
                fields: schema.fields().collect(),
            }],
            BatchingMode::Group => {
                let grouping = grouping.ok_or(QaError::MissingGrouping)?;
                check_grouping_fits(schema, grouping)?;
                grouping
                    .groups()
                    .map(|(name, members)| Batch {
                        label: name.to_string(),
                        fields: schema.slice(members),
                    })
                    .collect()
            }
        })
    }

    /// Fills every answer place. Gateway calls: one per field, one, or one
    /// per group depending on `mode`. Any failed batch fails the form.
    pub async fn populate_form(
        &self,
        schema: &FormSchema,
        grouping: Option<&GroupingAssignment>,
        article: &ArticleDoc,
        mode: BatchingMode,
    ) -> Result<PopulatedForm, QaError> {
        let batches = Self::batches(schema, grouping, mode)?;
        let results: Vec<Vec<FieldAnswer>> = stream::iter(batches.iter().map(|b| async move {
            tracing::debug!(article = %article.article_id, batch = %b.label, "asking batch");
            self.answer_batch(&b.fields, article).await
        }))
        .buffered(self.config.max_concurrency.max(1))
        .try_collect()
        .await?;

        let mut by_key: IndexMap<String, FieldAnswer> = results
            .into_iter()
            .flatten()
            .map(|a| (a.key(), a))
            .collect();
        let answers = schema
            .places()
            .map(|(f, p)| {
                let key = answer_key(f.field_id(), p.name());
                let answer = by_key.shift_remove(&key).unwrap_or_else(|| FieldAnswer {
                    field_id: f.field_id().to_string(),
                    answer_place: p.name().to_string(),
                    value: AnswerValue::Unknown,
                    raw_model_text: String::new(),
                });
                (key, answer)
            })
            .collect();
        Ok(PopulatedForm {
            article_id: article.article_id.clone(),
            batching_mode: mode,
            grouping_used: (mode == BatchingMode::Group)
                .then(|| grouping.cloned())
                .flatten(),
            answers,
        })
    }

    /// Re-asks one group and returns its fresh answers. The caller decides
    /// whether to store them.
    pub async fn rerun_group(
        &self,
        schema: &FormSchema,
        grouping: &GroupingAssignment,
        group: &str,
        article: &ArticleDoc,
    ) -> Result<Vec<FieldAnswer>, QaError> {
        let members = grouping
            .members(group)
            .ok_or_else(|| QaError::UnknownGroup(group.to_string()))?;
        let fields = schema.slice(members);
        if fields.is_empty() {
            return Err(QaError::InvalidGrouping(format!(
                "group `{group}` has no fields in the schema"
            )));
        }
        self.answer_batch(&fields, article).await
    }
}

fn check_grouping_fits(schema: &FormSchema, grouping: &GroupingAssignment) -> Result<(), QaError> {
    let result = crate::schema::validate_groups_format(&grouping.to_json(), schema);
    match result.issues().first() {
        None => Ok(()),
        Some(issue) => Err(QaError::InvalidGrouping(issue.to_string())),
    }
}
