//! Review API over a state directory.
//!
//! ```text
//! state/
//!   T_final.json        schema (bundled Form 57 when absent)
//!   G_final.json        grouping (bundled when absent)
//!   crosswalk.json      optional
//!   articles/           {id}.txt, {id}.meta.json
//!   forms/              {id}.form.json
//!   records.csv         optional FRA export
//!   linkage.json        optional
//!   annotations/        {id}.answerable.json
//! ```
//!
//! Routes live under `/api/v1`. Writes to one incident are serialized, and
//! every write replaces its file atomically.

mod error;
mod routes;

pub use error::ApiError;
pub use routes::router;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::Context;
use form57_core::crosswalk::Crosswalk;
use form57_core::eval::{compute_report, JudgeVerdict};
use form57_core::gateway::ModelGateway;
use form57_core::linkage::{load_fra_csv, FraRecord, LinkageReport};
use form57_core::prompts::PromptSet;
use form57_core::qa::{ArticleDoc, PopulatedForm, QaConfig};
use form57_core::schema::GroupingAssignment;
use form57_core::FormSchema;
use serde::Serialize;

use crate::commands::{G_FINAL_FILE, LINKAGE_FILE, T_FINAL_FILE};
use crate::config::RunConfig;
use crate::inputs::{
    form_file_name, load_crosswalk, load_form, load_grouping, load_linkage, load_schema,
};

pub const ARTICLES_DIR: &str = "articles";
pub const FORMS_DIR: &str = "forms";
pub const ANNOTATIONS_DIR: &str = "annotations";
pub const RECORDS_FILE: &str = "records.csv";
pub const CROSSWALK_FILE: &str = "crosswalk.json";

pub struct AppState {
    dir: PathBuf,
    schema: FormSchema,
    grouping: Option<GroupingAssignment>,
    crosswalk: Crosswalk,
    records: Vec<FraRecord>,
    linkage: LinkageReport,
    articles: BTreeMap<String, ArticleDoc>,
    gateway: Arc<dyn ModelGateway>,
    prompts: PromptSet,
    config: RunConfig,
    incident_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    reruns_in_flight: Mutex<HashSet<(String, String)>>,
}

fn optional(dir: &Path, name: &str) -> Option<PathBuf> {
    Some(dir.join(name)).filter(|p| p.exists())
}

impl AppState {
    pub fn load(
        dir: &Path,
        gateway: Arc<dyn ModelGateway>,
        config: RunConfig,
    ) -> anyhow::Result<Self> {
        let schema = load_schema(optional(dir, T_FINAL_FILE).as_deref())?;
        let grouping = load_grouping(optional(dir, G_FINAL_FILE).as_deref(), &schema)?;
        let crosswalk = load_crosswalk(optional(dir, CROSSWALK_FILE).as_deref())?;
        let records = match optional(dir, RECORDS_FILE) {
            Some(p) => {
                load_fra_csv(&p)
                    .with_context(|| format!("cannot load {}", p.display()))?
                    .records
            }
            None => Vec::new(),
        };
        let linkage = match optional(dir, LINKAGE_FILE) {
            Some(p) => load_linkage(&p)?,
            None => LinkageReport::default(),
        };
        let articles = match optional(dir, ARTICLES_DIR) {
            Some(p) => form57_core::qa::load_articles(&p)?
                .articles
                .into_iter()
                .map(|a| (a.article_id.clone(), a))
                .collect(),
            None => BTreeMap::new(),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            prompts: config.prompts()?,
            schema,
            grouping,
            crosswalk,
            records,
            linkage,
            articles,
            gateway,
            config,
            incident_locks: Mutex::new(HashMap::new()),
            reruns_in_flight: Mutex::new(HashSet::new()),
        })
    }

    fn form_path(&self, id: &str) -> PathBuf {
        self.dir.join(FORMS_DIR).join(form_file_name(id))
    }

    fn annotations_dir(&self) -> PathBuf {
        self.dir.join(ANNOTATIONS_DIR)
    }

    /// Article ids that have a stored form, in order.
    fn incident_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = std::fs::read_dir(self.dir.join(FORMS_DIR))
            .into_iter()
            .flatten()
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(crate::inputs::FORM_SUFFIX)
                    .map(str::to_string)
            })
            .collect();
        ids.sort();
        ids
    }

    fn read_form(&self, id: &str) -> Result<PopulatedForm, ApiError> {
        let path = self.form_path(id);
        if !path.exists() {
            return Err(ApiError::not_found(format!("no incident `{id}`")));
        }
        load_form(&path).map_err(ApiError::internal)
    }

    fn incident_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.incident_locks
            .lock()
            .unwrap()
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    fn judge(&self) -> form57_core::eval::Judge<'_> {
        if self.config.judge.use_model {
            form57_core::eval::Judge::with_model(
                self.gateway.as_ref(),
                &self.prompts,
                self.config.qa.retry_policy.clone(),
            )
        } else {
            form57_core::eval::Judge::offline()
        }
    }

    fn qa_config(&self) -> &QaConfig {
        &self.config.qa
    }

    fn linkage_status(&self, id: &str) -> (LinkStatus, Option<String>) {
        if let Some(record) = self.linkage.record_for(id) {
            (LinkStatus::Matched, Some(record.to_string()))
        } else if self.linkage.ambiguous.iter().any(|a| a.article_id == id) {
            (LinkStatus::Ambiguous, None)
        } else {
            (LinkStatus::Unmatched, None)
        }
    }

    async fn view(&self, form: PopulatedForm) -> Result<IncidentView, ApiError> {
        let id = form.article_id.clone();
        let (linkage, record_id) = self.linkage_status(&id);
        let annotations =
            crate::inputs::load_annotation_map(Some(&self.annotations_dir()), &self.schema)
                .map_err(ApiError::internal)?;
        let annotation = annotations.get(&id);
        let record = record_id
            .as_deref()
            .and_then(|r| self.records.iter().find(|rec| rec.record_id == r));
        let verdicts = match record {
            Some(r) => Some(
                compute_report(
                    &self.schema,
                    &form,
                    Some(r),
                    annotation,
                    &self.crosswalk,
                    &self.judge(),
                )
                .await
                .verdicts,
            ),
            None => None,
        };
        Ok(IncidentView {
            article_id: id,
            record_id,
            linkage,
            unknown_count: form.unknown_count(),
            answerable: annotation
                .map(|a| a.answerable.iter().cloned().collect())
                .unwrap_or_default(),
            grouping_used: form.grouping_used.clone(),
            form,
            verdicts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkStatus {
    Matched,
    Ambiguous,
    Unmatched,
}

/// An article with its stored form, linkage and, when a record is linked,
/// a verdict per answer place.
#[derive(Debug, Clone, Serialize)]
pub struct IncidentView {
    pub article_id: String,
    pub record_id: Option<String>,
    pub linkage: LinkStatus,
    pub unknown_count: usize,
    pub answerable: Vec<String>,
    pub grouping_used: Option<GroupingAssignment>,
    pub form: PopulatedForm,
    pub verdicts: Option<Vec<JudgeVerdict>>,
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot bind {addr}"))?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
