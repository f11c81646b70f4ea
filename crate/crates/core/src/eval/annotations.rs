use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::schema::{fold_answer_key, FormSchema};

/// Answer places a reader judged answerable from one article.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnswerabilityAnnotation {
    pub article_id: String,
    pub answerable: BTreeSet<String>,
}

impl AnswerabilityAnnotation {
    /// Maps loosely written keys onto the schema's canonical keys.
    pub fn new<I, S>(
        article_id: impl Into<String>,
        keys: I,
        schema: &FormSchema,
    ) -> Result<Self, AnnotationError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let article_id = article_id.into();
        let canonical: Vec<(String, String)> = schema
            .answer_keys()
            .map(|k| (fold_answer_key(&k), k))
            .collect();
        let mut answerable = BTreeSet::new();
        for key in keys {
            let folded = fold_answer_key(key.as_ref());
            match canonical.iter().find(|(f, _)| *f == folded) {
                Some((_, k)) => {
                    answerable.insert(k.clone());
                }
                None => {
                    return Err(AnnotationError::UnknownKey {
                        article_id,
                        key: key.as_ref().to_string(),
                    })
                }
            }
        }
        Ok(Self {
            article_id,
            answerable,
        })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.answerable.contains(key)
    }

    pub fn len(&self) -> usize {
        self.answerable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answerable.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("article {article_id}: `{key}` is not an answer place of the schema")]
    UnknownKey { article_id: String, key: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnnotationFile {
    Keys(Vec<String>),
    Object { answerable: Vec<String> },
}

/// Reads every `{article_id}.answerable.json` in `dir`. A file holds either
/// a list of answer keys or `{"answerable": [...]}`.
pub fn load_annotations(
    dir: &Path,
    schema: &FormSchema,
) -> Result<Vec<AnswerabilityAnnotation>, AnnotationError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| AnnotationError::Io { path, source }
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(id) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".answerable.json"))
        else {
            continue;
        };
        let raw = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let keys = match serde_json::from_str(&raw).map_err(|source| AnnotationError::Format {
            path: path.display().to_string(),
            source,
        })? {
            AnnotationFile::Keys(k) | AnnotationFile::Object { answerable: k } => k,
        };
        out.push(AnswerabilityAnnotation::new(id, keys, schema)?);
    }
    out.sort_by(|a, b| a.article_id.cmp(&b.article_id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_canonicalised_and_unknown_keys_rejected() {
        let schema = FormSchema::form57();
        let a = AnswerabilityAnnotation::new("a1", ["6/am/pm", " 6/Time"], &schema).unwrap();
        assert!(a.contains("6/AM-PM") && a.contains("6/Time"));
        assert!(AnswerabilityAnnotation::new("a1", ["99/Nope"], &schema).is_err());
    }

    #[test]
    fn directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("b.answerable.json"),
            r#"{"answerable": ["9/County"]}"#,
        )
        .unwrap();
        std::fs::write(dir.path().join("a.answerable.json"), r#"["6/Time"]"#).unwrap();
        std::fs::write(dir.path().join("a.txt"), "body").unwrap();
        let all = load_annotations(dir.path(), &FormSchema::form57()).unwrap();
        assert_eq!(
            all.iter()
                .map(|a| a.article_id.as_str())
                .collect::<Vec<_>>(),
            ["a", "b"]
        );
    }
}
