//! Loading of the files the commands and the service share.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use form57_core::crosswalk::Crosswalk;
use form57_core::eval::{load_annotations, AnswerabilityAnnotation};
use form57_core::linkage::LinkageReport;
use form57_core::qa::PopulatedForm;
use form57_core::schema::{parse_schema_str, GroupingAssignment};
use form57_core::{FormSchema, SchemaVariant};

/// Suffix of filled-form files.
pub const FORM_SUFFIX: &str = ".form.json";

pub fn form_file_name(article_id: &str) -> String {
    format!("{article_id}{FORM_SUFFIX}")
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn load_schema(path: Option<&Path>) -> anyhow::Result<FormSchema> {
    match path {
        None => Ok(FormSchema::form57()),
        Some(p) => parse_schema_str(&read(p)?, SchemaVariant::HumanCentric)
            .with_context(|| format!("invalid schema {}", p.display())),
    }
}

/// The grouping at `path`; without one, the bundled grouping when `schema`
/// is the bundled form.
pub fn load_grouping(
    path: Option<&Path>,
    schema: &FormSchema,
) -> anyhow::Result<Option<GroupingAssignment>> {
    match path {
        Some(p) => Ok(Some(
            GroupingAssignment::parse_str(&read(p)?, schema)
                .with_context(|| format!("invalid grouping {}", p.display()))?,
        )),
        None if *schema == FormSchema::form57() => Ok(Some(GroupingAssignment::form57())),
        None => Ok(None),
    }
}

pub fn load_crosswalk(path: Option<&Path>) -> anyhow::Result<Crosswalk> {
    match path {
        None => Ok(Crosswalk::form57_default()),
        Some(p) => Crosswalk::load(p).with_context(|| format!("invalid crosswalk {}", p.display())),
    }
}

pub fn load_linkage(path: &Path) -> anyhow::Result<LinkageReport> {
    serde_json::from_str(&read(path)?)
        .with_context(|| format!("invalid linkage report {}", path.display()))
}

pub fn load_form(path: &Path) -> anyhow::Result<PopulatedForm> {
    serde_json::from_str(&read(path)?).with_context(|| format!("invalid form {}", path.display()))
}

/// Every `*.form.json` in `dir`, ordered by article id.
pub fn load_forms(dir: &Path, schema: &FormSchema) -> anyhow::Result<Vec<PopulatedForm>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(FORM_SUFFIX))
        })
        .collect();
    paths.sort();
    let mut forms = Vec::with_capacity(paths.len());
    for p in paths {
        let form = load_form(&p)?;
        if !form.covers(schema) {
            bail!(
                "{} does not answer exactly the schema's answer places",
                p.display()
            );
        }
        forms.push(form);
    }
    forms.sort_by(|a, b| a.article_id.cmp(&b.article_id));
    Ok(forms)
}

/// Annotations by article id; none when `dir` is absent or missing.
pub fn load_annotation_map(
    dir: Option<&Path>,
    schema: &FormSchema,
) -> anyhow::Result<BTreeMap<String, AnswerabilityAnnotation>> {
    let Some(dir) = dir.filter(|d| d.exists()) else {
        return Ok(BTreeMap::new());
    };
    Ok(load_annotations(dir, schema)?
        .into_iter()
        .map(|a| (a.article_id.clone(), a))
        .collect())
}
