//! Linking news articles to official FRA incident records.
//!
//! A record is a candidate for an article when the article was published
//! 0 to 7 days (inclusive) after the incident and both are in the same
//! state. A candidate is accepted when at least one spatial key (county,
//! city, highway) also agrees. Accepted candidates are ranked by the share
//! of agreeing soft cues (sex, age within 2 years, killed, injured,
//! highway), then by day offset, then by record id.

mod fra;
mod places;

pub use fra::{load_fra_csv, read_fra_csv, CsvFormatError, FraLoad, FraRecord, RowWarning};
pub use places::{normalize_city, normalize_county, normalize_highway, normalize_state};

use std::cmp::Ordering;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::qa::{AnswerValue, ArticleDoc, PopulatedForm};

/// Inclusive bounds of `article date - incident date`, in days.
pub const DAY_WINDOW: (i64, i64) = (0, 7);
/// Largest age difference still counted as agreement.
pub const AGE_TOLERANCE: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Sex {
    /// Accepts `M`/`F`, `male`/`female` and the form's codes `1`/`2`.
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "m" | "male" | "1" | "man" => Some(Sex::Male),
            "f" | "female" | "2" | "woman" => Some(Sex::Female),
            _ => None,
        }
    }
}

/// Incident facts reported by an article beyond its location.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArticleCues {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub highway: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub killed: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub injured: Option<u32>,
}

/// Answer keys of a populated form that feed linkage cues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormCueKeys {
    pub state: String,
    pub county: String,
    pub city: String,
    pub highway: String,
    pub sex: String,
    pub age: String,
    pub killed: String,
    pub injured: String,
}

impl Default for FormCueKeys {
    fn default() -> Self {
        Self {
            state: "10/State abbreviation".into(),
            county: "9/County".into(),
            city: "11/City".into(),
            highway: "12/Highway name".into(),
            sex: "39/Gender".into(),
            age: "38/Age".into(),
            killed: "46/Killed".into(),
            injured: "46/Injured".into(),
        }
    }
}

/// Everything linkage knows about one article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LinkQuery {
    pub article_id: String,
    pub published_on: NaiveDate,
    pub state: Option<String>,
    pub county: Option<String>,
    pub city: Option<String>,
    pub cues: ArticleCues,
}

impl LinkQuery {
    /// Uses the article's metadata; `form` fills what the metadata lacks.
    pub fn new(article: &ArticleDoc, form: Option<&PopulatedForm>, keys: &FormCueKeys) -> Self {
        let text = |key: &str| -> Option<String> {
            match &form?.answer(key)?.value {
                AnswerValue::Text(s) | AnswerValue::Choice(s) => Some(s.clone()),
                AnswerValue::Digit(d) => Some(crate::qa::format_number(*d)),
                AnswerValue::Unknown => None,
            }
        };
        let count = |key: &str| -> Option<u32> {
            match form?.answer(key)?.value {
                AnswerValue::Digit(d) if d >= 0.0 && d.fract() == 0.0 && d < u32::MAX as f64 => {
                    Some(d as u32)
                }
                _ => None,
            }
        };
        let hint = &article.location_hint;
        let meta = &article.cues;
        Self {
            article_id: article.article_id.clone(),
            published_on: article.published_on,
            state: hint.state.clone().or_else(|| text(&keys.state)),
            county: hint.county.clone().or_else(|| text(&keys.county)),
            city: hint.city.clone().or_else(|| text(&keys.city)),
            cues: ArticleCues {
                highway: meta.highway.clone().or_else(|| text(&keys.highway)),
                sex: meta
                    .sex
                    .or_else(|| text(&keys.sex).as_deref().and_then(Sex::parse)),
                age: meta.age.or_else(|| count(&keys.age)),
                killed: meta.killed.or_else(|| count(&keys.killed)),
                injured: meta.injured.or_else(|| count(&keys.injured)),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HardKey {
    Date,
    County,
    City,
    Highway,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Matched,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchCandidate {
    pub article_id: String,
    pub record_id: String,
    /// Article date minus incident date.
    pub day_offset: i64,
    pub hard_keys_passed: Vec<HardKey>,
    pub soft_agreeing: u32,
    pub soft_available: u32,
    pub soft_score: f64,
    pub decision: Decision,
}

impl MatchCandidate {
    /// Orders best first: higher soft score, smaller offset, smaller id.
    fn rank(&self, other: &Self) -> Ordering {
        self.score_then_offset(other)
            .then_with(|| self.record_id.cmp(&other.record_id))
    }

    fn score_then_offset(&self, other: &Self) -> Ordering {
        // Compare agreeing/available exactly by cross-multiplying.
        let lhs = u64::from(self.soft_agreeing) * u64::from(other.soft_available.max(1));
        let rhs = u64::from(other.soft_agreeing) * u64::from(self.soft_available.max(1));
        rhs.cmp(&lhs)
            .then_with(|| self.day_offset.abs().cmp(&other.day_offset.abs()))
    }
}

fn same(a: Option<&str>, b: Option<&str>, norm: fn(&str) -> Option<String>) -> Option<bool> {
    Some(norm(a?)? == norm(b?)?)
}

/// Candidates for one article, best first. Records outside the day window
/// or in another state are not candidates at all.
pub fn match_article(query: &LinkQuery, records: &[FraRecord]) -> Vec<MatchCandidate> {
    let Some(state) = query.state.as_deref().and_then(normalize_state) else {
        return Vec::new();
    };
    let mut out: Vec<MatchCandidate> = records
        .iter()
        .filter_map(|r| {
            let day_offset = (query.published_on - r.incident_date).num_days();
            if !(DAY_WINDOW.0..=DAY_WINDOW.1).contains(&day_offset)
                || normalize_state(&r.state)? != state
            {
                return None;
            }
            let mut keys = vec![HardKey::Date];
            let county =
                same(query.county.as_deref(), Some(&r.county), normalize_county) == Some(true);
            if county {
                keys.push(HardKey::County);
            }
            let city = match query.city.as_deref() {
                Some(c) => same(Some(c), Some(&r.city), normalize_city) == Some(true),
                // Without a city in the article, county agreement stands in.
                None => county,
            };
            if city {
                keys.push(HardKey::City);
            }
            let highway = same(
                query.cues.highway.as_deref(),
                r.highway_name.as_deref(),
                normalize_highway,
            );
            if highway == Some(true) {
                keys.push(HardKey::Highway);
            }

            let cues = &query.cues;
            let soft = [
                cues.sex.zip(r.user_sex).map(|(a, b)| a == b),
                cues.age
                    .zip(r.user_age)
                    .map(|(a, b)| a.abs_diff(b) <= AGE_TOLERANCE),
                cues.killed.map(|k| k == r.killed),
                cues.injured.map(|i| i == r.injured),
                highway,
            ];
            let available = soft.iter().flatten().count() as u32;
            let agreeing = soft.iter().flatten().filter(|ok| **ok).count() as u32;
            let spatial = keys.len() > 1;
            Some(MatchCandidate {
                article_id: query.article_id.clone(),
                record_id: r.record_id.clone(),
                day_offset,
                hard_keys_passed: keys,
                soft_agreeing: agreeing,
                soft_available: available,
                soft_score: if available == 0 {
                    0.0
                } else {
                    f64::from(agreeing) / f64::from(available)
                },
                decision: if spatial {
                    Decision::Matched
                } else {
                    Decision::Rejected
                },
            })
        })
        .collect();
    out.sort_by(|a, b| {
        (a.decision != Decision::Matched)
            .cmp(&(b.decision != Decision::Matched))
            .then_with(|| a.rank(b))
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedPair {
    pub article_id: String,
    pub record_id: String,
    pub day_offset: i64,
    pub soft_score: f64,
    pub hard_keys_passed: Vec<HardKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbiguousArticle {
    pub article_id: String,
    /// Records tied for the best rank, by id.
    pub record_ids: Vec<String>,
}

/// Outcome per article; every article is in exactly one list. Lists are
/// sorted by article id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkageReport {
    pub pairs: Vec<LinkedPair>,
    pub unmatched_articles: Vec<String>,
    pub ambiguous: Vec<AmbiguousArticle>,
}

impl LinkageReport {
    pub fn record_for(&self, article_id: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|p| p.article_id == article_id)
            .map(|p| p.record_id.as_str())
    }

    pub fn article_count(&self) -> usize {
        self.pairs.len() + self.unmatched_articles.len() + self.ambiguous.len()
    }

    pub fn to_json_string(&self) -> String {
        crate::io::to_pretty_json(self)
    }
}

/// Decides every article. Two best candidates equal in soft score and day
/// offset make the article ambiguous; the record id only orders output.
pub fn build_linkage_report(queries: &[LinkQuery], records: &[FraRecord]) -> LinkageReport {
    let mut sorted: Vec<&LinkQuery> = queries.iter().collect();
    sorted.sort_by(|a, b| a.article_id.cmp(&b.article_id));
    let mut report = LinkageReport::default();
    for q in sorted {
        let matched: Vec<MatchCandidate> = match_article(q, records)
            .into_iter()
            .filter(|c| c.decision == Decision::Matched)
            .collect();
        let Some(best) = matched.first() else {
            report.unmatched_articles.push(q.article_id.clone());
            continue;
        };
        let tied: Vec<String> = matched
            .iter()
            .take_while(|c| c.score_then_offset(best) == Ordering::Equal)
            .map(|c| c.record_id.clone())
            .collect();
        if tied.len() > 1 {
            report.ambiguous.push(AmbiguousArticle {
                article_id: q.article_id.clone(),
                record_ids: tied,
            });
        } else {
            report.pairs.push(LinkedPair {
                article_id: q.article_id.clone(),
                record_id: best.record_id.clone(),
                day_offset: best.day_offset,
                soft_score: best.soft_score,
                hard_keys_passed: best.hard_keys_passed.clone(),
            });
        }
    }
    report
}
