use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use form57_cli::config::RunConfig;
use form57_cli::service::{router, AppState};
use form57_core::gateway::{
    ModelGateway, ModelRole, RequestMatcher, ScriptedBackend, ScriptedTape, TapeEntry, TapeFault,
};
use form57_core::qa::{AnswerValue, PopulatedForm};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

/// A state directory with the two golden forms, their linkage and no
/// annotations.
fn state_dir() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture();
    copy_dir(&fx.join("articles"), &tmp.path().join("articles"));
    std::fs::create_dir(tmp.path().join("forms")).unwrap();
    for id in ["A01", "A02"] {
        let name = format!("{id}.form.json");
        std::fs::copy(
            fx.join("golden").join(&name),
            tmp.path().join("forms").join(&name),
        )
        .unwrap();
    }
    std::fs::copy(
        fx.join("golden/linkage.json"),
        tmp.path().join("linkage.json"),
    )
    .unwrap();
    std::fs::copy(fx.join("records.csv"), tmp.path().join("records.csv")).unwrap();
    tmp
}

struct Harness {
    dir: tempfile::TempDir,
    backend: Arc<ScriptedBackend>,
    app: Router,
}

fn harness(tape: Vec<TapeEntry>) -> Harness {
    let dir = state_dir();
    let backend = Arc::new(ScriptedBackend::new(ScriptedTape::new(tape)));
    let mut config = RunConfig::default();
    config.qa.retry_policy.max_attempts = 1;
    let gateway: Arc<dyn ModelGateway> = backend.clone();
    let state = AppState::load(dir.path(), gateway, config).unwrap();
    Harness {
        app: router(Arc::new(state)),
        dir,
        backend,
    }
}

impl Harness {
    async fn call(&self, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
        let request = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(
                body.map(|b| Body::from(b.to_string()))
                    .unwrap_or_else(Body::empty),
            )
            .unwrap();
        let response = self.app.clone().oneshot(request).await.unwrap();
        let status = response.status();
        let bytes = response.into_body().collect().await.unwrap().to_bytes();
        (
            status,
            serde_json::from_slice(&bytes).unwrap_or(Value::Null),
        )
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    fn form(&self, id: &str) -> PopulatedForm {
        let raw = std::fs::read_to_string(
            self.dir
                .path()
                .join("forms")
                .join(format!("{id}.form.json")),
        )
        .unwrap();
        serde_json::from_str(&raw).unwrap()
    }
}

fn casualties(reply: Value) -> TapeEntry {
    TapeEntry::respond(reply.to_string())
        .when(RequestMatcher::role(ModelRole::Qa).containing("\n46/"))
}

const RERUN: &str = "/api/v1/incidents/A01/groups/casualties/rerun";

#[tokio::test]
async fn lists_incidents_with_linkage_and_verdicts() {
    let h = harness(vec![]);
    let (status, body) = h.get("/api/v1/incidents").await;
    assert_eq!(status, StatusCode::OK);
    let list = body.as_array().unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!(list[0]["article_id"], "A01");
    assert_eq!(list[0]["record_id"], "R1");
    assert_eq!(list[0]["linkage"], "matched");
    assert_eq!(list[1]["record_id"], "R4");
    let verdicts = list[0]["verdicts"].as_array().unwrap();
    let killed = verdicts.iter().find(|v| v["key"] == "46/Killed").unwrap();
    assert_eq!(killed["verdict"], "match");

    let (status, one) = h.get("/api/v1/incidents/A02").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(one, list[1]);
}

#[tokio::test]
async fn unknown_things_are_404_with_a_json_body() {
    let h = harness(vec![]);
    for uri in [
        "/api/v1/incidents/A99",
        "/api/v1/nothing",
        "/api/v1/incidents/A99/groups/casualties/rerun",
    ] {
        let method = if uri.ends_with("rerun") {
            Method::POST
        } else {
            Method::GET
        };
        let (status, body) = h.call(method, uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(body["code"], "not_found", "{uri}");
    }
    let (status, _) = h
        .call(
            Method::POST,
            "/api/v1/incidents/A01/groups/nope/rerun",
            None,
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(h.backend.call_count(), 0);
}

#[tokio::test]
async fn rerun_replaces_only_its_group() {
    let h = harness(vec![casualties(
        json!({"46/Killed": 2, "47/Dollar amount": 1500}),
    )]);
    let before = h.form("A01");
    let (status, body) = h.call(Method::POST, RERUN, None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["group"], "casualties");

    let after = h.form("A01");
    let members = after
        .grouping_used
        .as_ref()
        .unwrap()
        .members("casualties")
        .unwrap()
        .to_vec();
    assert_eq!(
        body["answers"].as_array().unwrap().len(),
        before
            .answers
            .values()
            .filter(|a| members.contains(&a.field_id))
            .count()
    );
    for (key, answer) in &after.answers {
        if members.contains(&answer.field_id) {
            continue;
        }
        assert_eq!(answer, &before.answers[key], "{key} changed");
    }
    assert_eq!(
        after.answer("46/Killed").unwrap().value,
        AnswerValue::Digit(2.0)
    );
    assert_eq!(
        after.answer("47/Dollar amount").unwrap().value,
        AnswerValue::Digit(1500.0)
    );
    assert!(after.answer("46/Injured").unwrap().value.is_unknown());
    assert_eq!(
        h.form("A02"),
        serde_json::from_str(
            &std::fs::read_to_string(fixture().join("golden/A02.form.json")).unwrap()
        )
        .unwrap()
    );
}

#[tokio::test]
async fn second_rerun_of_a_running_group_conflicts() {
    let slow = casualties(json!({"46/Killed": 3})).delayed(Duration::from_millis(400));
    let h = harness(vec![slow, casualties(json!({"46/Killed": 4}))]);
    let first = {
        let app = h.app.clone();
        tokio::spawn(async move {
            let req = Request::builder()
                .method(Method::POST)
                .uri(RERUN)
                .body(Body::empty())
                .unwrap();
            app.oneshot(req).await.unwrap().status()
        })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    let (status, body) = h.call(Method::POST, RERUN, None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "rerun_in_flight");
    assert_eq!(first.await.unwrap(), StatusCode::OK);
    assert_eq!(
        h.form("A01").answer("46/Killed").unwrap().value,
        AnswerValue::Digit(3.0)
    );

    // The mark is cleared once the job ends.
    let (status, _) = h.call(Method::POST, RERUN, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        h.form("A01").answer("46/Killed").unwrap().value,
        AnswerValue::Digit(4.0)
    );
}

#[tokio::test]
async fn gateway_failure_is_502_and_keeps_the_form() {
    let h = harness(vec![TapeEntry::fail(TapeFault::Transport {
        message: "connection reset".into(),
    })]);
    let before = h.form("A01");
    let (status, body) = h.call(Method::POST, RERUN, None).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["code"], "gateway_error");
    assert_eq!(h.form("A01"), before);

    // A failed job does not leave the group marked as running.
    h.backend
        .extend(ScriptedTape::new(vec![casualties(json!({}))]));
    let (status, _) = h.call(Method::POST, RERUN, None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn annotations_drive_report_coverage() {
    let h = harness(vec![]);
    let (status, report) = h.get("/api/v1/report").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["coverage_defined"], false);
    assert_eq!(report["n_match"], 27);
    assert_eq!(report["n_mismatch"], 7);

    // Two attempted places and one the form left Unknown.
    let body = json!({"answerable": ["46/Killed", "6/AM/PM", "22/Visibility"]}).to_string();
    let (status, stored) = h
        .call(
            Method::PUT,
            "/api/v1/incidents/A01/annotations",
            Some(&body),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{stored}");
    assert_eq!(
        stored["answerable"],
        json!(["22/Visibility", "46/Killed", "6/AM-PM"])
    );

    let (_, report) = h.get("/api/v1/report").await;
    assert_eq!(report["coverage_defined"], true);
    assert_eq!(report["n_answerable"], 3);
    assert_eq!(report["n_attempted"], 2);
    assert!((report["coverage"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);

    let (_, view) = h.get("/api/v1/incidents/A01").await;
    assert_eq!(view["answerable"], stored["answerable"]);
}

#[tokio::test]
async fn bad_annotations_are_rejected() {
    let h = harness(vec![]);
    let uri = "/api/v1/incidents/A01/annotations";
    let (status, body) = h.call(Method::PUT, uri, Some("{not json")).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("invalid_body"))
    );
    let (status, body) = h
        .call(Method::PUT, uri, Some(r#"{"answerable": ["99/Nothing"]}"#))
        .await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_annotation"))
    );
    let (status, _) = h
        .call(
            Method::PUT,
            "/api/v1/incidents/A99/annotations",
            Some(r#"{"answerable": []}"#),
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(!h.dir.path().join("annotations").exists());
}

#[tokio::test]
async fn schema_endpoint_lists_answer_keys() {
    let h = harness(vec![]);
    let (status, body) = h.get("/api/v1/schema").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["schema"].as_array().unwrap().len(), 66);
    assert_eq!(body["grouping"].as_object().unwrap().len(), 6);
    let keys: Vec<&str> = body["answer_keys"]
        .as_array()
        .unwrap()
        .iter()
        .map(|k| k.as_str().unwrap())
        .collect();
    assert!(keys.contains(&"6/AM-PM") && keys.contains(&"46/Killed"));
}
