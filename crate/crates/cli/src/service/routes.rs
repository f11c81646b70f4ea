use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use form57_core::eval::AnswerabilityAnnotation;
use form57_core::qa::{FieldAnswer, QaEngine, QaError};
use form57_core::schema::serialize_schema;
use form57_core::SchemaVariant;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ApiError, AppState, IncidentView};

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/incidents", get(list_incidents))
        .route("/incidents/{id}", get(get_incident))
        .route("/incidents/{id}/groups/{group}/rerun", post(rerun_group))
        .route("/incidents/{id}/annotations", put(put_annotations))
        .route("/schema", get(get_schema))
        .route("/report", get(get_report))
        .fallback(|| async { ApiError::not_found("no such route") });
    Router::new().nest("/api/v1", api).with_state(state)
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn list_incidents(State(state): State<Arc<AppState>>) -> ApiResult<Vec<IncidentView>> {
    let mut views = Vec::new();
    for id in state.incident_ids() {
        views.push(state.view(state.read_form(&id)?).await?);
    }
    Ok(Json(views))
}

async fn get_incident(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<IncidentView> {
    Ok(Json(state.view(state.read_form(&id)?).await?))
}

#[derive(Debug, Serialize)]
struct RerunResult {
    article_id: String,
    group: String,
    answers: Vec<FieldAnswer>,
}

enum JobError {
    Qa(QaError),
    Store(ApiError),
}

/// Removes the in-flight mark when the job ends, however it ends.
struct InFlight {
    state: Arc<AppState>,
    key: (String, String),
}

impl Drop for InFlight {
    fn drop(&mut self) {
        self.state
            .reruns_in_flight
            .lock()
            .unwrap()
            .remove(&self.key);
    }
}

async fn rerun_group(
    State(state): State<Arc<AppState>>,
    Path((id, group)): Path<(String, String)>,
) -> ApiResult<RerunResult> {
    let form = state.read_form(&id)?;
    let article = state
        .articles
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no article text for `{id}`")))?;
    let grouping = form
        .grouping_used
        .clone()
        .or_else(|| state.grouping.clone())
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::CONFLICT,
                "no_grouping",
                "incident has no field grouping",
            )
        })?;
    if grouping.members(&group).is_none() {
        return Err(ApiError::not_found(format!("no group `{group}`")));
    }
    let key = (id.clone(), group.clone());
    if !state.reruns_in_flight.lock().unwrap().insert(key.clone()) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "rerun_in_flight",
            format!("a rerun of `{group}` for `{id}` is already running"),
        ));
    }
    let guard = InFlight {
        state: state.clone(),
        key,
    };

    // The job finishes and stores its result even if the client goes away.
    let job = tokio::spawn(async move {
        let state = guard.state.clone();
        let engine = QaEngine::new(state.gateway.as_ref(), &state.prompts, state.qa_config());
        let answers = engine
            .rerun_group(&state.schema, &grouping, &group, &article)
            .await
            .map_err(JobError::Qa)?;
        let lock = state.incident_lock(&id);
        let _write = lock.lock().await;
        let mut form = state.read_form(&id).map_err(JobError::Store)?;
        form.replace_answers(answers.iter().cloned());
        form57_core::io::write_atomic(&state.form_path(&id), form.to_json_string().as_bytes())
            .map_err(|e| JobError::Store(ApiError::internal(format!("cannot store form: {e}"))))?;
        drop(guard);
        Ok(RerunResult {
            article_id: id,
            group,
            answers,
        })
    });
    match job.await {
        Ok(Ok(result)) => Ok(Json(result)),
        Ok(Err(JobError::Qa(e @ QaError::Gateway { .. }))) => Err(ApiError::new(
            StatusCode::BAD_GATEWAY,
            "gateway_error",
            e.to_string(),
        )),
        Ok(Err(JobError::Qa(e))) => Err(ApiError::internal(e)),
        Ok(Err(JobError::Store(e))) => Err(e),
        Err(join) => Err(ApiError::internal(join)),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationBody {
    answerable: Vec<String>,
}

async fn put_annotations(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<AnswerabilityAnnotation> {
    state.read_form(&id)?;
    let body: AnnotationBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))?;
    let annotation =
        AnswerabilityAnnotation::new(&id, &body.answerable, &state.schema).map_err(|e| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_annotation",
                e.to_string(),
            )
        })?;
    let lock = state.incident_lock(&id);
    let _write = lock.lock().await;
    let path = state
        .annotations_dir()
        .join(format!("{id}.answerable.json"));
    let stored = json!({"answerable": annotation.answerable});
    form57_core::io::write_json(&path, &stored).map_err(ApiError::internal)?;
    Ok(Json(annotation))
}

async fn get_schema(State(state): State<Arc<AppState>>) -> ApiResult<Value> {
    let schema =
        serialize_schema(&state.schema, SchemaVariant::HumanCentric).map_err(ApiError::internal)?;
    Ok(Json(json!({
        "schema": schema,
        "grouping": state.grouping.as_ref().map(|g| g.to_json()),
        "answer_keys": state.schema.answer_keys().collect::<Vec<_>>(),
    })))
}

async fn get_report(
    State(state): State<Arc<AppState>>,
) -> ApiResult<form57_core::eval::EvalReport> {
    let mut forms = Vec::new();
    for id in state.incident_ids() {
        forms.push(state.read_form(&id)?);
    }
    let annotations =
        crate::inputs::load_annotation_map(Some(&state.annotations_dir()), &state.schema)
            .map_err(ApiError::internal)?;
    let report = crate::commands::evaluate_forms(
        &state.schema,
        &forms,
        &state.linkage,
        &state.records,
        &annotations,
        &state.crosswalk,
        &state.judge(),
    )
    .await;
    Ok(Json(report))
}
