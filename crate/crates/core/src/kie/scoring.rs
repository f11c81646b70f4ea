use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Transcription;
use crate::schema::{AnswerPlace, FormField};

/// Number of fields in which a transcription differs from the gold one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KieErrorReport {
    pub errors: usize,
    /// In gold document order.
    pub erroneous_field_ids: Vec<String>,
    pub total_fields: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transcriptions are not comparable: {reason}")]
pub struct SchemaMismatch {
    pub reason: String,
    pub only_in_pred: Vec<String>,
    pub only_in_gold: Vec<String>,
}

/// Counts fields with at least one mistranscribed element. A field counts
/// once however many of its answer places or choices are wrong.
///
/// Names and labels are compared after collapsing whitespace; choice codes
/// are additionally compared without case. Answer place and choice order
/// does not matter.
pub fn count_kie_errors(
    pred: &Transcription,
    gold: &Transcription,
) -> Result<KieErrorReport, SchemaMismatch> {
    if pred.variant != gold.variant {
        return Err(SchemaMismatch {
            reason: format!("layouts differ ({:?} vs {:?})", pred.variant, gold.variant),
            only_in_pred: vec![],
            only_in_gold: vec![],
        });
    }
    let only_in_pred: Vec<String> = pred
        .schema
        .field_ids()
        .filter(|id| !gold.schema.contains(id))
        .map(str::to_string)
        .collect();
    let only_in_gold: Vec<String> = gold
        .schema
        .field_ids()
        .filter(|id| !pred.schema.contains(id))
        .map(str::to_string)
        .collect();
    if !only_in_pred.is_empty() || !only_in_gold.is_empty() {
        return Err(SchemaMismatch {
            reason: "field id sets differ".into(),
            only_in_pred,
            only_in_gold,
        });
    }

    let erroneous_field_ids: Vec<String> = gold
        .schema
        .fields()
        .filter(|g| {
            let p = pred
                .schema
                .field(g.field_id())
                .expect("field id sets are equal");
            normalize_field(p) != normalize_field(g)
        })
        .map(|f| f.field_id().to_string())
        .collect();
    Ok(KieErrorReport {
        errors: erroneous_field_ids.len(),
        erroneous_field_ids,
        total_fields: gold.schema.field_count(),
    })
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(PartialEq, Eq)]
struct NormalizedPlace {
    answer_type: crate::schema::AnswerType,
    choices: BTreeMap<String, String>,
}

fn normalize_place(place: &AnswerPlace) -> NormalizedPlace {
    NormalizedPlace {
        answer_type: place.answer_type(),
        choices: place
            .choices()
            .iter()
            .map(|(code, label)| (collapse_ws(code).to_lowercase(), collapse_ws(label)))
            .collect(),
    }
}

fn normalize_field(field: &FormField) -> (String, BTreeMap<String, NormalizedPlace>) {
    let places = field
        .answer_places()
        .map(|p| (collapse_ws(p.name()), normalize_place(p)))
        .collect();
    (collapse_ws(field.name()), places)
}
