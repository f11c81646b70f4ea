//! Form transcription and field grouping.
//!
//! [`KiePipeline::run`] performs, in order:
//!
//! 1. `N` independent transcriptions of the form image, each re-requested
//!    until it strictly follows the schema layout;
//! 2. one merge call that reconciles the samples into `T_final`;
//! 3. `N` independent groupings of `T_final`'s fields, each re-requested
//!    until it is a partition;
//! 4. one merge call that reconciles them into `G_final`.
//!
//! Every re-request loop is bounded by
//! [`KiePipelineConfig::max_validation_retries`]; running out is an error.

mod scoring;

pub use scoring::{count_kie_errors, KieErrorReport, SchemaMismatch};

use std::fmt;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{
    complete_with_retry, GatewayError, ImageRef, ModelGateway, ModelRequest, ModelRole,
    RetryPolicy, UserPart, DETERMINISTIC_TEMPERATURE, SAMPLING_TEMPERATURE,
};
use crate::json_text::extract_json;
use crate::prompts::{PromptError, PromptKind, PromptSet};
use crate::schema::{
    check_grouping, check_transcription, serialize_schema, DefectClass, FormSchema,
    GroupingAssignment, SchemaVariant, ValidationIssue, ValidationResult,
};

const HUMAN_CENTRIC_LAYOUT: &str = r#"{
  "name": "<entry number and printed field name>",
  "answer_places": {
    "<short name of one box or checkbox list>": {
      "answer_type": "<text/digit/choice>",
      "choices": {
        "<choice code>": "<choice label>"
      }
    }
  }
}"#;

const NAIVE_LAYOUT: &str = r#"{
  "name": "<entry number and printed field name>",
  "answer_type": "<text/digit/choice>",
  "choices": {
    "<choice code>": "<choice label>"
  }
}"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KiePipelineConfig {
    /// Independent samples per phase.
    pub n_samples: usize,
    /// Requests allowed per artifact before giving up on a valid one.
    pub max_validation_retries: usize,
    pub sampling_temperature: f64,
    pub merge_temperature: f64,
    /// Layout the model is asked to produce. The naive layout exists for
    /// ablations; it is not the default.
    pub schema_variant: SchemaVariant,
    pub max_output_tokens: u32,
    /// Transport-level retries around each request.
    pub retry_policy: RetryPolicy,
}

impl Default for KiePipelineConfig {
    fn default() -> Self {
        Self {
            n_samples: 5,
            max_validation_retries: 5,
            sampling_temperature: SAMPLING_TEMPERATURE,
            merge_temperature: DETERMINISTIC_TEMPERATURE,
            schema_variant: SchemaVariant::HumanCentric,
            max_output_tokens: 16_384,
            retry_policy: RetryPolicy::default(),
        }
    }
}

impl KiePipelineConfig {
    pub fn check(&self) -> Result<(), KieError> {
        if self.n_samples == 0 {
            return Err(KieError::InvalidConfig(
                "n_samples must be at least 1".into(),
            ));
        }
        if self.max_validation_retries == 0 {
            return Err(KieError::InvalidConfig(
                "max_validation_retries must be at least 1".into(),
            ));
        }
        for (name, t) in [
            ("sampling_temperature", self.sampling_temperature),
            ("merge_temperature", self.merge_temperature),
        ] {
            if !(t.is_finite() && t >= 0.0) {
                return Err(KieError::InvalidConfig(format!(
                    "{name} must be a non-negative number"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Sample(usize),
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KiePhase {
    TranscriptionSamples,
    TranscriptionMerge,
    GroupingSamples,
    GroupingMerge,
}

impl fmt::Display for KiePhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KiePhase::TranscriptionSamples => "transcription sampling",
            KiePhase::TranscriptionMerge => "transcription merge",
            KiePhase::GroupingSamples => "grouping sampling",
            KiePhase::GroupingMerge => "grouping merge",
        })
    }
}

/// A schema produced by the model that passed layout validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub schema: FormSchema,
    pub variant: SchemaVariant,
    pub provenance: Provenance,
    pub attempts_used: usize,
}

impl Transcription {
    pub fn to_json(&self) -> Value {
        serialize_schema(&self.schema, self.variant)
            .expect("validated transcription serializes in its own layout")
    }

    pub fn to_json_string(&self) -> String {
        crate::io::to_pretty_json(&self.to_json())
    }

    /// Re-runs layout validation on the serialized form.
    pub fn revalidate(&self) -> ValidationResult {
        crate::schema::validate_transcription_format(&self.to_json(), self.variant)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingSample {
    pub grouping: GroupingAssignment,
    pub provenance: Provenance,
    pub attempts_used: usize,
}

/// Request counts per phase; `attempts[i]` is the number of validation
/// attempts artifact `i` needed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTelemetry {
    pub phase: KiePhase,
    pub attempts: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KieTelemetry {
    pub phases: Vec<PhaseTelemetry>,
}

impl KieTelemetry {
    fn record(&mut self, phase: KiePhase, attempts: Vec<usize>) {
        self.phases.push(PhaseTelemetry { phase, attempts });
    }

    /// Validation attempts across all phases; equals the number of model
    /// calls when no transport retries happened.
    pub fn total_attempts(&self) -> usize {
        self.phases.iter().flat_map(|p| &p.attempts).sum()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KieError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("{phase}{}: no valid output after {attempts} attempts ({})", sample_label(*.sample_index), first_issue(.last))]
    ValidationRetriesExhausted {
        phase: KiePhase,
        sample_index: Option<usize>,
        attempts: usize,
        last: ValidationResult,
    },
    #[error("{phase}{}: {source}", sample_label(*.sample_index))]
    Gateway {
        phase: KiePhase,
        sample_index: Option<usize>,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl KieError {
    pub fn phase(&self) -> Option<KiePhase> {
        match self {
            KieError::ValidationRetriesExhausted { phase, .. }
            | KieError::Gateway { phase, .. } => Some(*phase),
            _ => None,
        }
    }
}

fn sample_label(index: Option<usize>) -> String {
    index
        .map(|i| format!(" (sample {})", i + 1))
        .unwrap_or_default()
}

fn first_issue(result: &ValidationResult) -> String {
    result
        .issues()
        .first()
        .map(ToString::to_string)
        .unwrap_or_else(|| "no issues recorded".into())
}

/// Failure of a full run, with whatever finished before it.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct KieRunError {
    #[source]
    pub error: KieError,
    /// Present when the failure happened after the transcription merge.
    pub t_final: Option<Transcription>,
    pub telemetry: KieTelemetry,
}

#[derive(Debug, Clone)]
pub struct KieOutput {
    pub t_final: Transcription,
    pub g_final: GroupingSample,
    pub transcription_samples: Vec<Transcription>,
    pub grouping_samples: Vec<GroupingSample>,
    pub telemetry: KieTelemetry,
}

pub struct KiePipeline<'a> {
    gateway: &'a dyn ModelGateway,
    prompts: &'a PromptSet,
    config: &'a KiePipelineConfig,
}

struct Exhausted {
    attempts: usize,
    cause: AttemptFailure,
}

enum AttemptFailure {
    Invalid(ValidationResult),
    Gateway(GatewayError),
}

impl<'a> KiePipeline<'a> {
    pub fn new(
        gateway: &'a dyn ModelGateway,
        prompts: &'a PromptSet,
        config: &'a KiePipelineConfig,
    ) -> Self {
        Self {
            gateway,
            prompts,
            config,
        }
    }

    fn layout(&self) -> &'static str {
        match self.config.schema_variant {
            SchemaVariant::HumanCentric => HUMAN_CENTRIC_LAYOUT,
            SchemaVariant::Naive => NAIVE_LAYOUT,
        }
    }

    fn request(
        &self,
        role: ModelRole,
        kind: PromptKind,
        vars: &[(&str, &str)],
        doc: &ImageRef,
        temperature: f64,
    ) -> Result<ModelRequest, KieError> {
        let prompt = self.prompts.render(kind, vars)?;
        let parts = vec![UserPart::Text(prompt.user), UserPart::Image(doc.clone())];
        let req = ModelRequest::new(role, prompt.system, parts)
            .expect("request has a text part")
            .with_temperature(temperature)
            .with_max_output_tokens(self.config.max_output_tokens);
        Ok(req)
    }

    /// Re-sends `req` until `accept` takes the reply or the budget runs out.
    async fn until_valid<T>(
        &self,
        req: &ModelRequest,
        accept: impl Fn(&Value) -> Result<T, ValidationResult>,
    ) -> Result<(T, usize), Exhausted> {
        let budget = self.config.max_validation_retries;
        let mut last = ValidationResult::Pass;
        for attempt in 1..=budget {
            let resp = complete_with_retry(self.gateway, req, &self.config.retry_policy)
                .await
                .map_err(|e| Exhausted {
                    attempts: attempt,
                    cause: AttemptFailure::Gateway(e),
                })?;
            let outcome = match extract_json(&resp.text) {
                Ok(value) => accept(&value),
                Err(e) => Err(ValidationResult::Fail(vec![ValidationIssue {
                    path: "$".into(),
                    reason: format!("not valid JSON: {e}"),
                    class: DefectClass::NotJson,
                }])),
            };
            match outcome {
                Ok(value) => return Ok((value, attempt)),
                Err(result) => {
                    tracing::debug!(
                        attempt,
                        issues = result.issues().len(),
                        "model output failed validation"
                    );
                    last = result;
                }
            }
        }
        Err(Exhausted {
            attempts: budget,
            cause: AttemptFailure::Invalid(last),
        })
    }

    fn fail(phase: KiePhase, sample_index: Option<usize>, err: Exhausted) -> KieError {
        match err.cause {
            AttemptFailure::Invalid(last) => KieError::ValidationRetriesExhausted {
                phase,
                sample_index,
                attempts: err.attempts,
                last,
            },
            AttemptFailure::Gateway(source) => KieError::Gateway {
                phase,
                sample_index,
                source,
            },
        }
    }

    /// `N` validated transcriptions, requested concurrently.
    pub async fn generate_transcription_samples(
        &self,
        doc: &ImageRef,
    ) -> Result<Vec<Transcription>, KieError> {
        self.config.check()?;
        let variant = self.config.schema_variant;
        let req = self.request(
            ModelRole::Transcriber,
            PromptKind::Transcribe,
            &[("schema_layout", self.layout())],
            doc,
            self.config.sampling_temperature,
        )?;
        let accept = |v: &Value| check_transcription(v, variant);
        let runs =
            join_all((0..self.config.n_samples).map(|_| self.until_valid(&req, accept))).await;
        runs.into_iter()
            .enumerate()
            .map(|(i, run)| {
                run.map(|(schema, attempts_used)| Transcription {
                    schema,
                    variant,
                    provenance: Provenance::Sample(i),
                    attempts_used,
                })
                .map_err(|e| Self::fail(KiePhase::TranscriptionSamples, Some(i), e))
            })
            .collect()
    }

    /// Reconciles samples into one validated transcription.
    pub async fn merge_transcriptions(
        &self,
        doc: &ImageRef,
        samples: &[Transcription],
    ) -> Result<Transcription, KieError> {
        self.config.check()?;
        if samples.is_empty() {
            return Err(KieError::InvalidConfig(
                "cannot merge zero transcriptions".into(),
            ));
        }
        let variant = self.config.schema_variant;
        let rendered = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                format!(
                    "Transcription {}:\n{}",
                    i + 1,
                    s.to_json_string().trim_end()
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let count = samples.len().to_string();
        let req = self.request(
            ModelRole::Merger,
            PromptKind::MergeTranscriptions,
            &[
                ("schema_layout", self.layout()),
                ("samples", &rendered),
                ("sample_count", &count),
            ],
            doc,
            self.config.merge_temperature,
        )?;
        let (schema, attempts_used) = self
            .until_valid(&req, |v| check_transcription(v, variant))
            .await
            .map_err(|e| Self::fail(KiePhase::TranscriptionMerge, None, e))?;
        Ok(Transcription {
            schema,
            variant,
            provenance: Provenance::Merged,
            attempts_used,
        })
    }

    fn transcription_vars(t_final: &Transcription) -> (String, String) {
        let ids = t_final
            .schema
            .field_ids()
            .map(|id| format!("\"{id}\""))
            .collect::<Vec<_>>()
            .join(", ");
        (t_final.to_json_string().trim_end().to_string(), ids)
    }

    /// `N` validated groupings of `t_final`'s fields, requested concurrently.
    pub async fn generate_grouping_samples(
        &self,
        doc: &ImageRef,
        t_final: &Transcription,
    ) -> Result<Vec<GroupingSample>, KieError> {
        self.config.check()?;
        let (transcription, ids) = Self::transcription_vars(t_final);
        let req = self.request(
            ModelRole::Grouper,
            PromptKind::Group,
            &[("transcription", &transcription), ("field_ids", &ids)],
            doc,
            self.config.sampling_temperature,
        )?;
        let accept = |v: &Value| check_grouping(v, &t_final.schema);
        let runs =
            join_all((0..self.config.n_samples).map(|_| self.until_valid(&req, accept))).await;
        runs.into_iter()
            .enumerate()
            .map(|(i, run)| {
                run.map(|(grouping, attempts_used)| GroupingSample {
                    grouping,
                    provenance: Provenance::Sample(i),
                    attempts_used,
                })
                .map_err(|e| Self::fail(KiePhase::GroupingSamples, Some(i), e))
            })
            .collect()
    }

    /// Reconciles grouping samples into `G_final`.
    pub async fn merge_groupings(
        &self,
        doc: &ImageRef,
        t_final: &Transcription,
        samples: &[GroupingSample],
    ) -> Result<GroupingSample, KieError> {
        self.config.check()?;
        if samples.is_empty() {
            return Err(KieError::InvalidConfig(
                "cannot merge zero groupings".into(),
            ));
        }
        let (transcription, ids) = Self::transcription_vars(t_final);
        let rendered = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                format!(
                    "Grouping {}:\n{}",
                    i + 1,
                    s.grouping.to_json_string().trim_end()
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let count = samples.len().to_string();
        let req = self.request(
            ModelRole::Merger,
            PromptKind::MergeGroups,
            &[
                ("transcription", &transcription),
                ("field_ids", &ids),
                ("samples", &rendered),
                ("sample_count", &count),
            ],
            doc,
            self.config.merge_temperature,
        )?;
        let (grouping, attempts_used) = self
            .until_valid(&req, |v| check_grouping(v, &t_final.schema))
            .await
            .map_err(|e| Self::fail(KiePhase::GroupingMerge, None, e))?;
        Ok(GroupingSample {
            grouping,
            provenance: Provenance::Merged,
            attempts_used,
        })
    }

    /// Runs all four phases in order and returns `(T_final, G_final)` with
    /// the intermediate samples.
    pub async fn run(&self, doc: &ImageRef) -> Result<KieOutput, KieRunError> {
        let mut telemetry = KieTelemetry::default();
        let fail = |error, t_final: Option<&Transcription>, telemetry: &KieTelemetry| KieRunError {
            error,
            t_final: t_final.cloned(),
            telemetry: telemetry.clone(),
        };

        let transcription_samples = self
            .generate_transcription_samples(doc)
            .await
            .map_err(|e| fail(e, None, &telemetry))?;
        telemetry.record(
            KiePhase::TranscriptionSamples,
            transcription_samples
                .iter()
                .map(|t| t.attempts_used)
                .collect(),
        );

        let t_final = self
            .merge_transcriptions(doc, &transcription_samples)
            .await
            .map_err(|e| fail(e, None, &telemetry))?;
        telemetry.record(KiePhase::TranscriptionMerge, vec![t_final.attempts_used]);

        let grouping_samples = self
            .generate_grouping_samples(doc, &t_final)
            .await
            .map_err(|e| fail(e, Some(&t_final), &telemetry))?;
        telemetry.record(
            KiePhase::GroupingSamples,
            grouping_samples.iter().map(|g| g.attempts_used).collect(),
        );

        let g_final = self
            .merge_groupings(doc, &t_final, &grouping_samples)
            .await
            .map_err(|e| fail(e, Some(&t_final), &telemetry))?;
        telemetry.record(KiePhase::GroupingMerge, vec![g_final.attempts_used]);

        Ok(KieOutput {
            t_final,
            g_final,
            transcription_samples,
            grouping_samples,
            telemetry,
        })
    }
}
