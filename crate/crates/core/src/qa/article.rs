use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::linkage::ArticleCues;
use crate::values::parse_datetime;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocationHint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub county: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub city: Option<String>,
}

/// Contents of `{article_id}.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArticleMeta {
    /// Date, optionally with a time of day.
    pub published_at: String,
    #[serde(default, alias = "source_name")]
    pub source: String,
    #[serde(default, alias = "location_hint")]
    pub location: LocationHint,
    /// Facts a reader noted by hand; they take precedence over answers
    /// extracted from the article when linking.
    #[serde(default)]
    pub cues: ArticleCues,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArticleDoc {
    pub article_id: String,
    pub body: String,
    pub published_on: NaiveDate,
    pub published_time: Option<NaiveTime>,
    pub source_name: String,
    pub location_hint: LocationHint,
    pub cues: ArticleCues,
}

#[derive(Debug, thiserror::Error)]
pub enum ArticleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl ArticleError {
    fn invalid(path: &Path, message: impl Into<String>) -> Self {
        ArticleError::Invalid {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

impl ArticleDoc {
    pub fn new(
        article_id: impl Into<String>,
        body: impl Into<String>,
        meta: ArticleMeta,
    ) -> Result<Self, String> {
        let body = body.into();
        if body.trim().is_empty() {
            return Err("article body is empty".into());
        }
        let (published_on, published_time) = parse_datetime(&meta.published_at)
            .ok_or_else(|| format!("unreadable published_at `{}`", meta.published_at))?;
        Ok(Self {
            article_id: article_id.into(),
            body,
            published_on,
            published_time,
            source_name: meta.source,
            location_hint: meta.location,
            cues: meta.cues,
        })
    }

    /// Reads `{id}.txt` and `{id}.meta.json` from `dir`.
    pub fn load(dir: &Path, article_id: &str) -> Result<Self, ArticleError> {
        let body_path = dir.join(format!("{article_id}.txt"));
        let meta_path = dir.join(format!("{article_id}.meta.json"));
        let read = |path: &Path| {
            std::fs::read_to_string(path).map_err(|source| ArticleError::Io {
                path: path.to_path_buf(),
                source,
            })
        };
        let body = read(&body_path)?;
        let meta: ArticleMeta = serde_json::from_str(&read(&meta_path)?)
            .map_err(|e| ArticleError::invalid(&meta_path, e.to_string()))?;
        Self::new(article_id, body, meta).map_err(|m| ArticleError::invalid(&body_path, m))
    }

    /// Publication date as shown to the model.
    pub fn published_label(&self) -> String {
        match self.published_time {
            Some(t) => format!("{} {}", self.published_on, t.format("%H:%M")),
            None => self.published_on.to_string(),
        }
    }
}

/// Articles found in a directory, and the ones that could not be read.
#[derive(Debug, Default)]
pub struct ArticleLoad {
    pub articles: Vec<ArticleDoc>,
    pub skipped: Vec<ArticleError>,
}

/// Loads every `{id}.txt` in `dir`, sorted by id. Articles that fail to load
/// are reported in [`ArticleLoad::skipped`] instead of failing the batch.
pub fn load_articles(dir: &Path) -> Result<ArticleLoad, ArticleError> {
    let entries = std::fs::read_dir(dir).map_err(|source| ArticleError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut ids: Vec<String> = entries
        .filter_map(Result::ok)
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".txt").map(str::to_string)
        })
        .collect();
    ids.sort();
    let mut load = ArticleLoad::default();
    for id in ids {
        match ArticleDoc::load(dir, &id) {
            Ok(doc) => load.articles.push(doc),
            Err(e) => {
                tracing::warn!(article = %id, error = %e, "skipping article");
                load.skipped.push(e);
            }
        }
    }
    Ok(load)
}
