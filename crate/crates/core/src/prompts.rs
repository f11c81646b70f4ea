//! Prompt templates.
//!
//! Each template is a text file with the system prompt, a line holding only
//! `---`, and the user message. `{{name}}` placeholders are filled at render
//! time; a placeholder left unfilled is an error. The built-in set lives in
//! `prompts/v1/`; a directory with the same file names replaces it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Transcribe,
    MergeTranscriptions,
    Group,
    MergeGroups,
    Qa,
    Judge,
}

impl PromptKind {
    pub const ALL: [PromptKind; 6] = [
        PromptKind::Transcribe,
        PromptKind::MergeTranscriptions,
        PromptKind::Group,
        PromptKind::MergeGroups,
        PromptKind::Qa,
        PromptKind::Judge,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::Transcribe => "transcribe.txt",
            PromptKind::MergeTranscriptions => "merge_transcriptions.txt",
            PromptKind::Group => "group.txt",
            PromptKind::MergeGroups => "merge_groups.txt",
            PromptKind::Qa => "qa.txt",
            PromptKind::Judge => "judge.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptKind::Transcribe => include_str!("../prompts/v1/transcribe.txt"),
            PromptKind::MergeTranscriptions => {
                include_str!("../prompts/v1/merge_transcriptions.txt")
            }
            PromptKind::Group => include_str!("../prompts/v1/group.txt"),
            PromptKind::MergeGroups => include_str!("../prompts/v1/merge_groups.txt"),
            PromptKind::Qa => include_str!("../prompts/v1/qa.txt"),
            PromptKind::Judge => include_str!("../prompts/v1/judge.txt"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: missing `---` line between system and user sections")]
    NoSeparator(String),
    #[error("template {template} left placeholder {{{{{name}}}}} unfilled")]
    Unfilled {
        template: &'static str,
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    system: String,
    user: String,
}

impl Template {
    fn parse(label: &str, raw: &str) -> Result<Self, PromptError> {
        let mut system = Vec::new();
        let mut lines = raw.lines();
        for line in lines.by_ref() {
            if line.trim() == "---" {
                let user: Vec<&str> = lines.collect();
                return Ok(Self {
                    system: system.join("\n").trim().to_string(),
                    user: user.join("\n").trim().to_string(),
                });
            }
            system.push(line);
        }
        Err(PromptError::NoSeparator(label.to_string()))
    }
}

/// Where a template set came from, recorded in run manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptSetInfo {
    pub version: String,
    pub source: String,
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<PromptKind, Template>,
    info: PromptSetInfo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        let raw = PromptKind::ALL.map(|k| (k, k.builtin().to_string()));
        Self::from_sources("v1", "builtin", raw).expect("built-in templates are well formed")
    }

    /// Loads every template file from `dir`; the directory name is the version.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut raw = Vec::new();
        for kind in PromptKind::ALL {
            let path = dir.join(kind.file_name());
            let text = std::fs::read_to_string(&path)
                .map_err(|source| PromptError::Io { path, source })?;
            raw.push((kind, text));
        }
        let version = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Self::from_sources(&version, &dir.display().to_string(), raw)
    }

    fn from_sources(
        version: &str,
        source: &str,
        raw: impl IntoIterator<Item = (PromptKind, String)>,
    ) -> Result<Self, PromptError> {
        let mut hasher = Sha256::new();
        let mut templates = BTreeMap::new();
        for (kind, text) in raw {
            hasher.update(kind.file_name().as_bytes());
            hasher.update(text.as_bytes());
            templates.insert(kind, Template::parse(kind.file_name(), &text)?);
        }
        Ok(Self {
            templates,
            info: PromptSetInfo {
                version: version.to_string(),
                source: source.to_string(),
                sha256: hex::encode(hasher.finalize()),
            },
        })
    }

    pub fn info(&self) -> &PromptSetInfo {
        &self.info
    }

    pub fn render(
        &self,
        kind: PromptKind,
        vars: &[(&str, &str)],
    ) -> Result<RenderedPrompt, PromptError> {
        let template = &self.templates[&kind];
        Ok(RenderedPrompt {
            system: fill(kind.file_name(), &template.system, vars)?,
            user: fill(kind.file_name(), &template.user, vars)?,
        })
    }
}

fn fill(template: &'static str, text: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else {
            out.push_str(&rest[open..]);
            return Ok(out);
        };
        let name = after[..close].trim();
        match vars.iter().find(|(k, _)| *k == name) {
            Some((_, value)) => out.push_str(value),
            None => {
                return Err(PromptError::Unfilled {
                    template,
                    name: name.to_string(),
                })
            }
        }
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_split_into_sections() {
        let set = PromptSet::builtin();
        let judge = set
            .render(
                PromptKind::Judge,
                &[
                    ("field", "12"),
                    ("gold", "Main Street"),
                    ("answer", "Main St"),
                ],
            )
            .unwrap();
        assert!(judge.system.contains("yes"));
        assert!(judge.user.contains("Reference value: Main Street"));
        assert_eq!(set.info().version, "v1");
    }

    #[test]
    fn missing_variable_is_reported() {
        let err = PromptSet::builtin()
            .render(PromptKind::Judge, &[("field", "x")])
            .unwrap_err();
        assert!(matches!(err, PromptError::Unfilled { ref name, .. } if name == "gold"));
    }

    #[test]
    fn values_are_not_reexpanded() {
        let out = fill("t", "a {{x}} b", &[("x", "{{y}}")]).unwrap();
        assert_eq!(out, "a {{y}} b");
    }

    #[test]
    fn directory_override_changes_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let v2 = dir.path().join("v2");
        std::fs::create_dir(&v2).unwrap();
        for kind in PromptKind::ALL {
            std::fs::write(
                v2.join(kind.file_name()),
                format!("sys {kind:?}\n---\nuser"),
            )
            .unwrap();
        }
        let set = PromptSet::load_dir(&v2).unwrap();
        assert_eq!(set.info().version, "v2");
        assert_ne!(set.info().sha256, PromptSet::builtin().info().sha256);
        assert!(std::fs::remove_file(v2.join("qa.txt")).is_ok());
        assert!(matches!(
            PromptSet::load_dir(&v2),
            Err(PromptError::Io { .. })
        ));
    }
}
