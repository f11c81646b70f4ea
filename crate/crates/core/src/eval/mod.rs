//! Accuracy and coverage of populated forms against linked FRA records.
//!
//! * Coverage is `attempted / answerable`: of the answer places a reader
//!   marked answerable from the article, the share the model did not
//!   answer `Unknown`.
//! * Accuracy is `match / (match + mismatch)` over non-`Unknown` answers
//!   that have ground truth. A second figure also counts `Unknown` on an
//!   answerable place with ground truth as a miss.
//!
//! All figures pool verdicts across articles (micro-averaging).

mod annotations;
mod judge;
mod table;

pub use annotations::{load_annotations, AnnotationError, AnswerabilityAnnotation};
pub use judge::{
    judge_field, offline_text_match, Judge, TextJudgeKind, SPEED_TOLERANCE_MPH,
    TEXT_OVERLAP_THRESHOLD, TIME_TOLERANCE_MINUTES,
};
pub use table::{accuracy_by_type_table, performance_table, MeanStd, PipelineRuns};

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::crosswalk::{Crosswalk, GoldLookup};
use crate::linkage::FraRecord;
use crate::qa::{AnswerValue, PopulatedForm};
use crate::schema::{answer_key, AnswerType, FormSchema};
use crate::values::Meridiem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Match,
    Mismatch,
    NotAttempted,
    NoGroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeRule {
    ExactChoice,
    DigitTolerance,
    TimeTolerance,
    FuzzyText,
    UnknownSkip,
}

/// Answer categories reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerCategory {
    SingleChoice,
    Digit,
    FreeText,
}

impl AnswerCategory {
    pub const ALL: [AnswerCategory; 3] = [
        AnswerCategory::SingleChoice,
        AnswerCategory::Digit,
        AnswerCategory::FreeText,
    ];

    pub fn of(t: AnswerType) -> Self {
        match t {
            AnswerType::Choice => AnswerCategory::SingleChoice,
            AnswerType::Digit => AnswerCategory::Digit,
            AnswerType::Text => AnswerCategory::FreeText,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AnswerCategory::SingleChoice => "Single choice",
            AnswerCategory::Digit => "Digit",
            AnswerCategory::FreeText => "Free text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub article_id: String,
    pub key: String,
    pub field_id: String,
    pub answer_place: String,
    pub category: AnswerCategory,
    pub verdict: Verdict,
    pub rule_applied: JudgeRule,
    pub answerable: bool,
    pub predicted: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_judge: Option<TextJudgeKind>,
}

/// Accuracy over a subset of verdicts. `accuracy` is 0 when undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub accuracy: f64,
    pub defined: bool,
    pub n_match: usize,
    pub n_mismatch: usize,
}

impl Rate {
    fn from_counts(n_match: usize, n_mismatch: usize) -> Self {
        let total = n_match + n_mismatch;
        Self {
            accuracy: if total == 0 {
                0.0
            } else {
                n_match as f64 / total as f64
            },
            defined: total > 0,
            n_match,
            n_mismatch,
        }
    }

    pub fn value(&self) -> Option<f64> {
        self.defined.then_some(self.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Headline accuracy; `Unknown` answers are left out.
    pub accuracy: f64,
    pub accuracy_defined: bool,
    /// Accuracy with `Unknown` on answerable places that have ground truth
    /// counted as misses.
    pub accuracy_unknown_as_error: f64,
    pub accuracy_unknown_as_error_defined: bool,
    pub coverage: f64,
    pub coverage_defined: bool,
    pub n_articles: usize,
    pub n_answerable: usize,
    pub n_attempted: usize,
    pub n_match: usize,
    pub n_mismatch: usize,
    pub n_no_ground_truth: usize,
    pub by_answer_type: IndexMap<AnswerCategory, Rate>,
    pub by_field: IndexMap<String, Rate>,
    pub verdicts: Vec<JudgeVerdict>,
}

impl EvalReport {
    /// Recomputes every figure from the verdict list.
    pub fn from_verdicts(verdicts: Vec<JudgeVerdict>) -> Self {
        let count = |f: &dyn Fn(&JudgeVerdict) -> bool| verdicts.iter().filter(|v| f(v)).count();
        let n_match = count(&|v| v.verdict == Verdict::Match);
        let n_mismatch = count(&|v| v.verdict == Verdict::Mismatch);
        let n_answerable = count(&|v| v.answerable);
        let n_attempted = count(&|v| v.answerable && v.verdict != Verdict::NotAttempted);
        let missed =
            count(&|v| v.answerable && v.verdict == Verdict::NotAttempted && v.gold.is_some());
        let headline = Rate::from_counts(n_match, n_mismatch);
        let strict = Rate::from_counts(n_match, n_mismatch + missed);

        let rate_where = |f: &dyn Fn(&JudgeVerdict) -> bool| {
            Rate::from_counts(
                verdicts
                    .iter()
                    .filter(|v| f(v) && v.verdict == Verdict::Match)
                    .count(),
                verdicts
                    .iter()
                    .filter(|v| f(v) && v.verdict == Verdict::Mismatch)
                    .count(),
            )
        };
        let by_answer_type = AnswerCategory::ALL
            .iter()
            .map(|c| (*c, rate_where(&|v| v.category == *c)))
            .collect();
        let mut by_field = IndexMap::new();
        for v in &verdicts {
            if !by_field.contains_key(&v.field_id) {
                by_field.insert(
                    v.field_id.clone(),
                    rate_where(&|w| w.field_id == v.field_id),
                );
            }
        }
        let n_articles = verdicts
            .iter()
            .map(|v| v.article_id.as_str())
            .collect::<BTreeSet<_>>()
            .len();
        Self {
            accuracy: headline.accuracy,
            accuracy_defined: headline.defined,
            accuracy_unknown_as_error: strict.accuracy,
            accuracy_unknown_as_error_defined: strict.defined,
            coverage: if n_answerable == 0 {
                0.0
            } else {
                n_attempted as f64 / n_answerable as f64
            },
            coverage_defined: n_answerable > 0,
            n_articles,
            n_answerable,
            n_attempted,
            n_match,
            n_mismatch,
            n_no_ground_truth: count(&|v| v.verdict == Verdict::NoGroundTruth),
            by_answer_type,
            by_field,
            verdicts,
        }
    }

    pub fn accuracy_value(&self) -> Option<f64> {
        self.accuracy_defined.then_some(self.accuracy)
    }

    pub fn coverage_value(&self) -> Option<f64> {
        self.coverage_defined.then_some(self.coverage)
    }

    /// Fields by ascending accuracy (undefined ones left out), ties by
    /// field order.
    pub fn worst_fields(&self, n: usize) -> Vec<(&str, Rate)> {
        let mut rated: Vec<(&str, Rate)> = self
            .by_field
            .iter()
            .filter(|(_, r)| r.defined)
            .map(|(k, r)| (k.as_str(), *r))
            .collect();
        rated.sort_by(|a, b| a.1.accuracy.total_cmp(&b.1.accuracy));
        rated.truncate(n);
        rated
    }

    pub fn to_json_string(&self) -> String {
        crate::io::to_pretty_json(self)
    }
}

/// Scores one article's form. `record` is the linked FRA row (none when the
/// article is unlinked, which makes every attempted answer lack ground
/// truth); `annotation` lists the answerable places.
pub async fn compute_report(
    schema: &FormSchema,
    form: &PopulatedForm,
    record: Option<&FraRecord>,
    annotation: Option<&AnswerabilityAnnotation>,
    crosswalk: &Crosswalk,
    judge: &Judge<'_>,
) -> EvalReport {
    let mut verdicts = Vec::with_capacity(schema.place_count());
    for (field, place) in schema.places() {
        let key = answer_key(field.field_id(), place.name());
        let pred = form
            .answer(&key)
            .cloned()
            .unwrap_or_else(|| crate::qa::FieldAnswer {
                field_id: field.field_id().to_string(),
                answer_place: place.name().to_string(),
                value: AnswerValue::Unknown,
                raw_model_text: String::new(),
            });
        let gold = record.and_then(|r| match crosswalk.gold_for(&key, r) {
            Ok(g) => Some(g),
            Err(GoldLookup::CrosswalkMissing(_) | GoldLookup::BlankCell(_)) => None,
            Err(e) => {
                tracing::debug!(key = %key, error = %e, "ground truth unreadable");
                None
            }
        });
        let meridiem = field
            .answer_places()
            .filter(|p| p.answer_type() == AnswerType::Choice && p.name() != place.name())
            .find_map(
                |p| match &form.answer(&answer_key(field.field_id(), p.name()))?.value {
                    AnswerValue::Choice(code) => Meridiem::parse(code),
                    _ => None,
                },
            );
        let (verdict, rule, text_judge) =
            judge_field(&pred, gold.as_ref(), place, field.name(), meridiem, judge).await;
        verdicts.push(JudgeVerdict {
            article_id: form.article_id.clone(),
            field_id: field.field_id().to_string(),
            answer_place: place.name().to_string(),
            category: AnswerCategory::of(place.answer_type()),
            verdict,
            rule_applied: rule,
            answerable: annotation.is_some_and(|a| a.contains(&key)),
            predicted: pred.value.display(),
            gold: gold.map(|g| g.value),
            text_judge,
            key,
        });
    }
    EvalReport::from_verdicts(verdicts)
}

/// Pools the verdicts of several articles. The result does not depend on
/// the order of `reports`.
pub fn aggregate_reports(reports: &[EvalReport]) -> EvalReport {
    let mut ordered: Vec<&EvalReport> = reports.iter().collect();
    ordered.sort_by(|a, b| first_article(a).cmp(first_article(b)));
    let mut verdicts: Vec<JudgeVerdict> = ordered
        .iter()
        .flat_map(|r| r.verdicts.iter().cloned())
        .collect();
    verdicts.sort_by(|a, b| a.article_id.cmp(&b.article_id));
    EvalReport::from_verdicts(verdicts)
}

fn first_article(r: &EvalReport) -> &str {
    r.verdicts
        .first()
        .map(|v| v.article_id.as_str())
        .unwrap_or("")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(
        article: &str,
        field: &str,
        v: Verdict,
        answerable: bool,
        gold: bool,
    ) -> JudgeVerdict {
        JudgeVerdict {
            article_id: article.into(),
            key: format!("{field}/x"),
            field_id: field.into(),
            answer_place: "x".into(),
            category: AnswerCategory::Digit,
            verdict: v,
            rule_applied: JudgeRule::DigitTolerance,
            answerable,
            predicted: "1".into(),
            gold: gold.then(|| "1".into()),
            text_judge: None,
        }
    }

    #[test]
    fn nine_of_ten_answerable_attempted() {
        let mut vs: Vec<_> = (0..9)
            .map(|i| verdict("a", &i.to_string(), Verdict::Match, true, true))
            .collect();
        vs.push(verdict("a", "9", Verdict::NotAttempted, true, true));
        let r = EvalReport::from_verdicts(vs);
        assert!((r.coverage - 0.9).abs() < 1e-12);
        assert_eq!(r.accuracy, 1.0);
        assert!((r.accuracy_unknown_as_error - 0.9).abs() < 1e-12);
    }

    #[test]
    fn all_unknown_is_degenerate() {
        let vs: Vec<_> = (0..4)
            .map(|i| verdict("a", &i.to_string(), Verdict::NotAttempted, true, true))
            .collect();
        let r = EvalReport::from_verdicts(vs);
        assert_eq!((r.coverage, r.coverage_defined), (0.0, true));
        assert_eq!((r.accuracy, r.accuracy_defined), (0.0, false));
        let empty = EvalReport::from_verdicts(vec![verdict("a", "1", Verdict::Match, false, true)]);
        assert!(!empty.coverage_defined);
    }

    #[test]
    fn pooled_coverage_over_equal_denominators() {
        let mut a: Vec<_> = (0..9)
            .map(|i| verdict("a", &i.to_string(), Verdict::Match, true, true))
            .collect();
        a.push(verdict("a", "9", Verdict::NotAttempted, true, true));
        let b: Vec<_> = (0..10)
            .map(|i| verdict("b", &i.to_string(), Verdict::Match, true, true))
            .collect();
        let (ra, rb) = (EvalReport::from_verdicts(a), EvalReport::from_verdicts(b));
        let pooled = aggregate_reports(&[rb.clone(), ra.clone()]);
        assert!((pooled.coverage - 0.95).abs() < 1e-12);
        assert_eq!(pooled, aggregate_reports(&[ra.clone(), rb]));
        assert_eq!(aggregate_reports(std::slice::from_ref(&ra)), ra);
    }
}
