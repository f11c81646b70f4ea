use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};
use form57_core::crosswalk::Crosswalk;
use form57_core::eval::{compute_report, Judge};
use form57_core::gateway::{ScriptedBackend, ScriptedTape, TapeEntry};
use form57_core::kie::{count_kie_errors, Provenance, Transcription};
use form57_core::linkage::{build_linkage_report, load_fra_csv, FormCueKeys, LinkQuery};
use form57_core::prompts::PromptSet;
use form57_core::qa::{load_articles, BatchingMode, PopulatedForm, QaConfig, QaEngine};
use form57_core::schema::{GroupingAssignment, FORM57_SCHEMA_JSON};
use form57_core::{parse_schema, validate_transcription_format, FormSchema, SchemaVariant};

fn data(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("..").join(rel)
}

fn schema(c: &mut Criterion) {
    let doc: serde_json::Value = serde_json::from_str(FORM57_SCHEMA_JSON).unwrap();
    c.bench_function("validate form57 transcription", |b| {
        b.iter(|| validate_transcription_format(black_box(&doc), SchemaVariant::HumanCentric))
    });
    let t = Transcription {
        schema: parse_schema(&doc, SchemaVariant::HumanCentric).unwrap(),
        variant: SchemaVariant::HumanCentric,
        provenance: Provenance::Merged,
        attempts_used: 1,
    };
    c.bench_function("count KIE errors", |b| {
        b.iter(|| count_kie_errors(black_box(&t), black_box(&t)))
    });
}

fn qa(c: &mut Criterion) {
    let rt = tokio::runtime::Builder::new_current_thread()
        .build()
        .unwrap();
    let schema = FormSchema::form57();
    let grouping = GroupingAssignment::form57();
    let article = load_articles(&data("cli/tests/fixtures/e2e/articles"))
        .unwrap()
        .articles
        .remove(0);
    let prompts = PromptSet::builtin();
    let config = QaConfig::default();
    c.bench_function("populate form, group mode", |b| {
        b.iter(|| {
            let gw = ScriptedBackend::new(ScriptedTape::new(vec![
                TapeEntry::respond(
                    r#"{"46/Killed": 1}"#
                );
                6
            ]));
            let engine = QaEngine::new(&gw, &prompts, &config);
            rt.block_on(engine.populate_form(
                &schema,
                Some(&grouping),
                &article,
                BatchingMode::Group,
            ))
            .unwrap()
        })
    });
}

fn evaluation(c: &mut Criterion) {
    let rt = tokio::runtime::Builder::new_current_thread()
        .build()
        .unwrap();
    let schema = FormSchema::form57();
    let crosswalk = Crosswalk::form57_default();
    let e2e = data("cli/tests/fixtures/e2e");
    let form: PopulatedForm =
        serde_json::from_str(&std::fs::read_to_string(e2e.join("golden/A01.form.json")).unwrap())
            .unwrap();
    let record = load_fra_csv(&e2e.join("records.csv"))
        .unwrap()
        .records
        .remove(0);
    let judge = Judge::offline();
    c.bench_function("compute report, one form", |b| {
        b.iter(|| {
            rt.block_on(compute_report(
                &schema,
                black_box(&form),
                Some(&record),
                None,
                &crosswalk,
                &judge,
            ))
        })
    });
}

fn linkage(c: &mut Criterion) {
    let dir = data("core/tests/data/linkage");
    let records = load_fra_csv(&dir.join("records.csv")).unwrap().records;
    let keys = FormCueKeys::default();
    let articles = load_articles(&dir.join("articles")).unwrap().articles;
    let queries: Vec<LinkQuery> = articles
        .iter()
        .map(|a| LinkQuery::new(a, None, &keys))
        .collect();
    c.bench_function("link 10 articles to 20 records", |b| {
        b.iter(|| build_linkage_report(black_box(&queries), black_box(&records)))
    });
}

criterion_group!(benches, schema, qa, evaluation, linkage);
criterion_main!(benches);
