//! Populating FRA Form 57 from news text.
//!
//! The crate covers the whole offline pipeline:
//!
//! * [`schema`]: typed Form 57 model and its two JSON layouts, with strict
//!   structural validation of model output.
//! * [`gateway`]: chat-completion backends (live HTTP and scripted tapes).
//! * [`kie`]: sample-and-merge transcription of the blank form into a
//!   schema, followed by sample-and-merge field grouping.
//! * [`qa`]: question answering over article text in single, all-in-one, or
//!   per-group batches.
//! * [`linkage`]: matching articles to official incident records.
//! * [`eval`]: accuracy and coverage scoring against linked records.

pub mod crosswalk;
pub mod eval;
pub mod gateway;
pub mod io;
pub mod json_text;
pub mod kie;
pub mod linkage;
pub mod prompts;
pub mod qa;
pub mod schema;
pub mod values;

pub use schema::{
    answer_key, parse_schema, serialize_schema, validate_groups_format,
    validate_transcription_format, AnswerPlace, AnswerType, ChoiceSet, FormField, FormSchema,
    GroupingAssignment, SchemaFormatError, SchemaVariant, ValidationResult,
};
