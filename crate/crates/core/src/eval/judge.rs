use serde::{Deserialize, Serialize};

use super::{JudgeRule, Verdict};
use crate::crosswalk::{GoldValue, Semantics};
use crate::gateway::{
    complete_with_retry, ModelGateway, ModelRequest, ModelRole, ResponseFormat, RetryPolicy,
    UserPart,
};
use crate::prompts::{PromptKind, PromptSet};
use crate::qa::{AnswerValue, FieldAnswer};
use crate::schema::{AnswerPlace, AnswerType};
use crate::values::{minutes_of_day, parse_minutes, parse_number, token_overlap, Meridiem};

/// Largest time difference, in minutes, still judged a match.
pub const TIME_TOLERANCE_MINUTES: u32 = 60;
/// Largest speed difference, in mph, still judged a match.
pub const SPEED_TOLERANCE_MPH: f64 = 10.0;
/// Minimum token overlap for the offline text rule.
pub const TEXT_OVERLAP_THRESHOLD: f64 = 0.8;

const DIGIT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextJudgeKind {
    Model,
    Offline,
}

/// Decides whether free-text answers match, with a model when one is
/// configured and by token overlap otherwise.
pub struct Judge<'a> {
    model: Option<(&'a dyn ModelGateway, &'a PromptSet, RetryPolicy)>,
}

impl<'a> Judge<'a> {
    pub fn offline() -> Self {
        Self { model: None }
    }

    pub fn with_model(
        gateway: &'a dyn ModelGateway,
        prompts: &'a PromptSet,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            model: Some((gateway, prompts, retry)),
        }
    }

    pub fn kind(&self) -> TextJudgeKind {
        if self.model.is_some() {
            TextJudgeKind::Model
        } else {
            TextJudgeKind::Offline
        }
    }

    /// Returns the decision and which judge made it. A model failure or an
    /// answer other than yes/no falls back to the offline rule.
    pub async fn text_match(&self, field: &str, gold: &str, answer: &str) -> (bool, TextJudgeKind) {
        if let Some((gateway, prompts, retry)) = &self.model {
            match self
                .ask(*gateway, prompts, retry, field, gold, answer)
                .await
            {
                Some(decision) => return (decision, TextJudgeKind::Model),
                None => tracing::warn!(
                    field,
                    "text judge gave no usable answer; using offline rule"
                ),
            }
        }
        (offline_text_match(gold, answer), TextJudgeKind::Offline)
    }

    async fn ask(
        &self,
        gateway: &dyn ModelGateway,
        prompts: &PromptSet,
        retry: &RetryPolicy,
        field: &str,
        gold: &str,
        answer: &str,
    ) -> Option<bool> {
        let rendered = prompts
            .render(
                PromptKind::Judge,
                &[("field", field), ("gold", gold), ("answer", answer)],
            )
            .ok()?;
        let req = ModelRequest::new(
            ModelRole::Judge,
            rendered.system,
            vec![UserPart::Text(rendered.user)],
        )
        .ok()?
        .with_response_format(ResponseFormat::FreeText)
        .with_max_output_tokens(16);
        let resp = complete_with_retry(gateway, &req, retry).await.ok()?;
        let word: String = resp
            .text
            .trim_start()
            .chars()
            .take_while(|c| c.is_alphabetic())
            .collect::<String>()
            .to_lowercase();
        match word.as_str() {
            "yes" => Some(true),
            "no" => Some(false),
            _ => None,
        }
    }
}

/// Token-set overlap after case folding and punctuation removal.
pub fn offline_text_match(gold: &str, answer: &str) -> bool {
    token_overlap(gold, answer) >= TEXT_OVERLAP_THRESHOLD
}

/// The verdict for one answer. `meridiem` is the predicted AM/PM belonging
/// to a time answer, when the form has one.
pub async fn judge_field(
    pred: &FieldAnswer,
    gold: Option<&GoldValue>,
    place: &AnswerPlace,
    field_name: &str,
    meridiem: Option<Meridiem>,
    judge: &Judge<'_>,
) -> (Verdict, JudgeRule, Option<TextJudgeKind>) {
    if pred.value.is_unknown() {
        return (Verdict::NotAttempted, JudgeRule::UnknownSkip, None);
    }
    let semantics = gold.map(|g| g.semantics).unwrap_or_default();
    let rule = rule_for(place.answer_type(), semantics);
    let Some(gold) = gold else {
        return (Verdict::NoGroundTruth, rule, None);
    };
    let verdict = |ok: bool| {
        if ok {
            Verdict::Match
        } else {
            Verdict::Mismatch
        }
    };
    match (&pred.value, rule) {
        (AnswerValue::Choice(code), JudgeRule::ExactChoice) => {
            match place.choices().resolve(&gold.value) {
                Some(gold_code) => (verdict(gold_code.eq_ignore_ascii_case(code)), rule, None),
                None => (Verdict::NoGroundTruth, rule, None),
            }
        }
        (AnswerValue::Digit(d), JudgeRule::TimeTolerance) => match parse_minutes(&gold.value) {
            None => (Verdict::NoGroundTruth, rule, None),
            Some(g) => {
                let ok = minutes_of_day(*d, meridiem)
                    .is_some_and(|p| p.abs_diff(g) <= TIME_TOLERANCE_MINUTES);
                (verdict(ok), rule, None)
            }
        },
        (AnswerValue::Digit(d), JudgeRule::DigitTolerance) => match parse_number(&gold.value) {
            None => (Verdict::NoGroundTruth, rule, None),
            Some(g) => {
                let tolerance = if semantics == Semantics::Speed {
                    SPEED_TOLERANCE_MPH
                } else {
                    0.0
                };
                (
                    verdict((d - g).abs() <= tolerance + DIGIT_EPSILON),
                    rule,
                    None,
                )
            }
        },
        (value, _) => {
            let (ok, kind) = judge
                .text_match(field_name, &gold.value, &value.display())
                .await;
            (verdict(ok), JudgeRule::FuzzyText, Some(kind))
        }
    }
}

pub(crate) fn rule_for(answer_type: AnswerType, semantics: Semantics) -> JudgeRule {
    match answer_type {
        AnswerType::Choice => JudgeRule::ExactChoice,
        AnswerType::Digit if semantics == Semantics::Time => JudgeRule::TimeTolerance,
        AnswerType::Digit => JudgeRule::DigitTolerance,
        AnswerType::Text => JudgeRule::FuzzyText,
    }
}
