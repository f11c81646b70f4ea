use std::time::{Duration, Instant};

use form57_core::gateway::{
    ImageRef, ModelRole, RetryPolicy, ScriptedBackend, ScriptedTape, TapeEntry, TapeFault,
};
use form57_core::kie::{
    count_kie_errors, KieError, KiePhase, KiePipeline, KiePipelineConfig, Provenance, Transcription,
};
use form57_core::prompts::PromptSet;
use form57_core::schema::{GroupingAssignment, FORM57_GROUPING_JSON, FORM57_SCHEMA_JSON};
use form57_core::{parse_schema, FormSchema, SchemaVariant};
use serde_json::{json, Value};

fn doc() -> ImageRef {
    ImageRef::from_bytes("image/png", b"\x89PNG form 57 page".to_vec())
}

fn config(n: usize, retries: usize) -> KiePipelineConfig {
    KiePipelineConfig {
        n_samples: n,
        max_validation_retries: retries,
        retry_policy: RetryPolicy::immediate(1),
        ..KiePipelineConfig::default()
    }
}

fn backend(entries: Vec<TapeEntry>) -> ScriptedBackend {
    ScriptedBackend::new(ScriptedTape::new(entries))
}

fn time_field_only_ampm() -> Value {
    json!([{"name": "6. Time of Accident/Incident", "answer_places": {
        "AM/PM": {"answer_type": "choice", "choices": {"AM": "AM", "PM": "PM"}}
    }}])
}

fn time_field_full() -> Value {
    json!([{"name": "6. Time of Accident/Incident", "answer_places": {
        "Time": {"answer_type": "digit", "choices": {}},
        "AM/PM": {"answer_type": "choice", "choices": {"AM": "AM", "PM": "PM"}}
    }}])
}

/// Missing `answer_type`: fails layout validation.
const INVALID_SCHEMA: &str = r#"[{"name": "6. Time", "answer_places": {"Time": {"choices": {}}}}]"#;

#[tokio::test]
async fn three_valid_samples_use_one_attempt_each() {
    let gw = backend(vec![TapeEntry::respond(FORM57_SCHEMA_JSON); 3]);
    let prompts = PromptSet::builtin();
    let cfg = config(3, 5);
    let samples = KiePipeline::new(&gw, &prompts, &cfg)
        .generate_transcription_samples(&doc())
        .await
        .unwrap();
    assert_eq!(samples.len(), 3);
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(s.attempts_used, 1);
        assert_eq!(s.provenance, Provenance::Sample(i));
        assert_eq!(s.schema.field_count(), 66);
        assert!(s.revalidate().is_pass());
    }
    assert!(gw
        .calls()
        .iter()
        .all(|c| c.role == ModelRole::Transcriber && c.image_digests == [doc().sha256()]));
}

#[tokio::test]
async fn invalid_sample_consumes_an_extra_attempt() {
    let gw = backend(vec![
        TapeEntry::respond(INVALID_SCHEMA),
        TapeEntry::respond(FORM57_SCHEMA_JSON),
        TapeEntry::respond(FORM57_SCHEMA_JSON),
    ]);
    let prompts = PromptSet::builtin();
    let cfg = config(2, 2);
    let samples = KiePipeline::new(&gw, &prompts, &cfg)
        .generate_transcription_samples(&doc())
        .await
        .unwrap();
    // Samples start in index order, so the first sample meets the bad entry.
    assert_eq!(
        samples.iter().map(|s| s.attempts_used).collect::<Vec<_>>(),
        [2, 1]
    );
    assert_eq!(gw.call_count(), 3);
}

#[tokio::test]
async fn retry_budget_exhaustion_is_an_error() {
    let gw = backend(vec![TapeEntry::respond(INVALID_SCHEMA); 3]);
    let prompts = PromptSet::builtin();
    let cfg = config(1, 3);
    let err = KiePipeline::new(&gw, &prompts, &cfg)
        .generate_transcription_samples(&doc())
        .await
        .unwrap_err();
    match err {
        KieError::ValidationRetriesExhausted {
            phase,
            sample_index,
            attempts,
            last,
        } => {
            assert_eq!(phase, KiePhase::TranscriptionSamples);
            assert_eq!(sample_index, Some(0));
            assert_eq!(attempts, 3);
            assert!(!last.is_pass());
        }
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(gw.call_count(), 3);
}

fn sample(schema: &Value, index: usize) -> Transcription {
    Transcription {
        schema: parse_schema(schema, SchemaVariant::HumanCentric).unwrap(),
        variant: SchemaVariant::HumanCentric,
        provenance: Provenance::Sample(index),
        attempts_used: 1,
    }
}

#[tokio::test]
async fn merge_of_identical_samples_echoes_them() {
    let fixture: Value = serde_json::from_str(FORM57_SCHEMA_JSON).unwrap();
    let samples = vec![sample(&fixture, 0), sample(&fixture, 1)];
    let gw = backend(vec![TapeEntry::respond(FORM57_SCHEMA_JSON)]);
    let prompts = PromptSet::builtin();
    let cfg = config(2, 5);
    let merged = KiePipeline::new(&gw, &prompts, &cfg)
        .merge_transcriptions(&doc(), &samples)
        .await
        .unwrap();
    assert_eq!(merged.provenance, Provenance::Merged);
    assert_eq!(merged.schema, samples[0].schema);
    assert_eq!(merged.to_json_string(), FORM57_SCHEMA_JSON);
}

#[tokio::test]
async fn merge_can_recover_an_answer_place_one_sample_missed() {
    let samples = vec![
        sample(&time_field_only_ampm(), 0),
        sample(&time_field_full(), 1),
    ];
    let gw = backend(vec![TapeEntry::respond(time_field_full().to_string())]);
    let prompts = PromptSet::builtin();
    let cfg = config(2, 5);
    let merged = KiePipeline::new(&gw, &prompts, &cfg)
        .merge_transcriptions(&doc(), &samples)
        .await
        .unwrap();
    let field = merged.schema.field("6").unwrap();
    let places: Vec<&str> = field.answer_places().map(|p| p.name()).collect();
    assert_eq!(places, ["Time", "AM/PM"]);

    // The merge request shows every sample and the page itself.
    let call = &gw.calls()[0];
    assert_eq!(call.role, ModelRole::Merger);
    assert!(
        call.user_text.contains("Transcription 1:") && call.user_text.contains("Transcription 2:")
    );
    assert_eq!(call.image_digests, [doc().sha256()]);
}

#[tokio::test]
async fn malformed_merge_output_is_retried() {
    let samples = vec![sample(&time_field_full(), 0)];
    let gw = backend(vec![
        TapeEntry::respond("Here is the merged schema: [{\"name\": "),
        TapeEntry::respond(format!("```json\n{}\n```", time_field_full())),
    ]);
    let prompts = PromptSet::builtin();
    let cfg = config(1, 5);
    let merged = KiePipeline::new(&gw, &prompts, &cfg)
        .merge_transcriptions(&doc(), &samples)
        .await
        .unwrap();
    assert_eq!(merged.attempts_used, 2);
}

fn t_final() -> Transcription {
    sample(&serde_json::from_str(FORM57_SCHEMA_JSON).unwrap(), 0)
}

fn grouping_json(move_field_24_to: &str) -> String {
    let mut groups: serde_json::Map<String, Value> =
        serde_json::from_str(FORM57_GROUPING_JSON).unwrap();
    for members in groups.values_mut() {
        members.as_array_mut().unwrap().retain(|m| m != "24");
    }
    groups[move_field_24_to]
        .as_array_mut()
        .unwrap()
        .push(json!("24"));
    Value::Object(groups).to_string()
}

#[tokio::test]
async fn grouping_samples_are_partitions() {
    let gw = backend(vec![TapeEntry::respond(FORM57_GROUPING_JSON); 2]);
    let prompts = PromptSet::builtin();
    let cfg = config(2, 5);
    let t = t_final();
    let samples = KiePipeline::new(&gw, &prompts, &cfg)
        .generate_grouping_samples(&doc(), &t)
        .await
        .unwrap();
    assert_eq!(samples.len(), 2);
    let names: Vec<&str> = samples[0].grouping.group_names().collect();
    assert!(names.contains(&"casualties") && names.contains(&"environment"));
    assert!(gw.calls().iter().all(|c| c.role == ModelRole::Grouper));
}

#[tokio::test]
async fn non_partition_grouping_is_retried() {
    // Field 24 listed twice.
    let mut overlapping: Value = serde_json::from_str(FORM57_GROUPING_JSON).unwrap();
    overlapping["casualties"]
        .as_array_mut()
        .unwrap()
        .push(json!("24"));
    let gw = backend(vec![
        TapeEntry::respond(overlapping.to_string()),
        TapeEntry::respond(FORM57_GROUPING_JSON),
    ]);
    let prompts = PromptSet::builtin();
    let cfg = config(1, 5);
    let t = t_final();
    let samples = KiePipeline::new(&gw, &prompts, &cfg)
        .generate_grouping_samples(&doc(), &t)
        .await
        .unwrap();
    assert_eq!(samples[0].attempts_used, 2);
}

#[tokio::test]
async fn grouping_merge_follows_the_model_choice() {
    let t = t_final();
    let a = GroupingAssignment::parse_str(&grouping_json("train"), &t.schema).unwrap();
    let b = GroupingAssignment::parse_str(&grouping_json("environment"), &t.schema).unwrap();
    let samples: Vec<_> = [a.clone(), b]
        .into_iter()
        .enumerate()
        .map(|(i, grouping)| form57_core::kie::GroupingSample {
            grouping,
            provenance: Provenance::Sample(i),
            attempts_used: 1,
        })
        .collect();

    // The first reply drops field 24 entirely and must be rejected.
    let mut dropped: Value = serde_json::from_str(&grouping_json("train")).unwrap();
    dropped["train"]
        .as_array_mut()
        .unwrap()
        .retain(|m| m != "24");
    let gw = backend(vec![
        TapeEntry::respond(dropped.to_string()),
        TapeEntry::respond(grouping_json("train")),
    ]);
    let prompts = PromptSet::builtin();
    let cfg = config(2, 5);
    let g_final = KiePipeline::new(&gw, &prompts, &cfg)
        .merge_groupings(&doc(), &t, &samples)
        .await
        .unwrap();
    assert_eq!(g_final.grouping, a);
    assert_eq!(g_final.grouping.group_of("24"), Some("train"));
    assert_eq!(g_final.attempts_used, 2);
    assert_eq!(g_final.provenance, Provenance::Merged);
}

fn happy_tape(n: usize) -> Vec<TapeEntry> {
    let mut tape = vec![TapeEntry::respond(FORM57_SCHEMA_JSON); n + 1];
    tape.extend(vec![TapeEntry::respond(FORM57_GROUPING_JSON); n + 1]);
    tape
}

#[tokio::test]
async fn full_run_issues_two_n_plus_two_calls() {
    for n in [1, 2, 5] {
        let gw = backend(happy_tape(n));
        let prompts = PromptSet::builtin();
        let cfg = config(n, 5);
        let started = Instant::now();
        let out = KiePipeline::new(&gw, &prompts, &cfg)
            .run(&doc())
            .await
            .unwrap();
        assert!(started.elapsed() < Duration::from_secs(1));
        assert_eq!(gw.call_count(), 2 * n + 2);
        assert_eq!(out.telemetry.total_attempts(), 2 * n + 2);
        assert!(out.t_final.revalidate().is_pass());
        assert_eq!(out.g_final.grouping, GroupingAssignment::form57());
        let roles: Vec<ModelRole> = gw.calls().iter().map(|c| c.role).collect();
        let mut expected = vec![ModelRole::Transcriber; n];
        expected.push(ModelRole::Merger);
        expected.extend(vec![ModelRole::Grouper; n]);
        expected.push(ModelRole::Merger);
        assert_eq!(roles, expected);
    }
}

#[tokio::test]
async fn grouping_failure_keeps_the_merged_transcription() {
    let mut tape = vec![TapeEntry::respond(FORM57_SCHEMA_JSON); 2];
    tape.push(TapeEntry::fail(TapeFault::Refused {
        status: 400,
        body: "content policy".into(),
    }));
    let gw = backend(tape);
    let prompts = PromptSet::builtin();
    let cfg = config(1, 5);
    let err = KiePipeline::new(&gw, &prompts, &cfg)
        .run(&doc())
        .await
        .unwrap_err();
    assert_eq!(err.error.phase(), Some(KiePhase::GroupingSamples));
    let t = err
        .t_final
        .expect("merged transcription kept for diagnostics");
    assert_eq!(t.schema, FormSchema::form57());
    assert_eq!(err.telemetry.total_attempts(), 2);
}

#[test]
fn zero_samples_is_rejected() {
    assert!(config(0, 5).check().is_err());
    assert!(config(1, 0).check().is_err());
}

/// Applies one of several structure-preserving edits to field `i`.
fn plant_defect(fields: &mut [Value], i: usize) {
    let field = &mut fields[i];
    let places = field["answer_places"].as_object_mut().unwrap();
    let (first, place) = places
        .iter_mut()
        .next()
        .map(|(k, v)| (k.clone(), v))
        .unwrap();
    match i % 4 {
        0 => {
            let flipped = match place["answer_type"].as_str().unwrap() {
                "choice" => "text",
                "text" => "digit",
                _ => "text",
            };
            place["answer_type"] = json!(flipped);
            place["choices"] = json!({});
        }
        1 => {
            let value = places.remove(&first).unwrap();
            places.insert(format!("{first} (planted)"), value);
        }
        2 => {
            places.insert(
                "Planted box".into(),
                json!({"answer_type": "text", "choices": {}}),
            );
        }
        _ => {
            let name = field["name"].as_str().unwrap().to_string();
            field["name"] = json!(format!("{name} extra"));
        }
    }
}

fn defective_copy(gold: &Value, targets: &[usize]) -> Transcription {
    let mut fields = gold.as_array().unwrap().clone();
    for &i in targets {
        plant_defect(&mut fields, i);
    }
    sample(&Value::Array(fields), 0)
}

#[test]
fn planted_defects_are_counted_exactly() {
    let gold_json: Value = serde_json::from_str(FORM57_SCHEMA_JSON).unwrap();
    let gold = sample(&gold_json, 0);
    for k in [0usize, 1, 2, 5, 10] {
        // Spread targets over the form with a fixed stride.
        let targets: Vec<usize> = (0..k).map(|j| (j * 7 + 3) % 66).collect();
        let pred = defective_copy(&gold_json, &targets);
        let report = count_kie_errors(&pred, &gold).unwrap();
        assert_eq!(report.errors, k, "k = {k}");
        assert_eq!(report.total_fields, 66);
        let mut expected: Vec<usize> = targets.clone();
        expected.sort_unstable();
        let ids: Vec<String> = expected
            .iter()
            .map(|&i| gold.schema.fields().nth(i).unwrap().field_id().to_string())
            .collect();
        assert_eq!(report.erroneous_field_ids, ids);
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn each_additional_defective_field_adds_one_error(
            targets in proptest::sample::subsequence((0..66usize).collect::<Vec<_>>(), 0..20),
        ) {
            let gold_json: Value = serde_json::from_str(FORM57_SCHEMA_JSON).unwrap();
            let gold = sample(&gold_json, 0);
            let mut previous = 0;
            for m in 0..=targets.len() {
                let pred = defective_copy(&gold_json, &targets[..m]);
                let errors = count_kie_errors(&pred, &gold).unwrap().errors;
                prop_assert_eq!(errors, m);
                prop_assert_eq!(count_kie_errors(&gold, &pred).unwrap().errors, m);
                prop_assert!(m == 0 || errors == previous + 1);
                previous = errors;
            }
        }
    }
}
