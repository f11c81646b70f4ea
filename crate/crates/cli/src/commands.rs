use std::path::Path;

use anyhow::{bail, Context};
use form57_core::eval::{aggregate_reports, compute_report, EvalReport, Judge, PipelineRuns};
use form57_core::gateway::{ImageRef, ModelGateway};
use form57_core::kie::KiePipeline;
use form57_core::linkage::{build_linkage_report, load_fra_csv, FormCueKeys, FraRecord, LinkQuery};
use form57_core::qa::{load_articles, ArticleLoad, PopulatedForm, QaEngine};
use form57_core::FormSchema;
use indexmap::IndexMap;
use serde::Serialize;

use crate::cli::{EvaluateArgs, ExtractArgs, LinkArgs, PipelineArg, TranscribeArgs};
use crate::config::RunConfig;
use crate::inputs::{
    form_file_name, load_annotation_map, load_crosswalk, load_forms, load_grouping, load_linkage,
    load_schema,
};
use crate::manifest::{RunManifest, RunStatus};

pub const T_FINAL_FILE: &str = "T_final.json";
pub const G_FINAL_FILE: &str = "G_final.json";
pub const LINKAGE_FILE: &str = "linkage.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const TABLE_PERFORMANCE_FILE: &str = "table_performance.txt";
pub const TABLE_BY_TYPE_FILE: &str = "table_by_answer_type.txt";

pub async fn transcribe(args: &TranscribeArgs) -> anyhow::Result<RunStatus> {
    let mut config = RunConfig::load(args.common.config.as_deref())?;
    if let Some(n) = args.samples {
        config.kie.n_samples = n;
        config.kie.check()?;
    }
    let image = ImageRef::load(&args.image)
        .with_context(|| format!("cannot read form image {}", args.image.display()))?;
    let prompts = config.prompts()?;
    let gateway = args.common.backend.open(&config.gateway)?;
    let mut manifest = RunManifest::new(
        "transcribe",
        &args.out,
        args.common.backend.to_string(),
        Some(prompts.info().clone()),
        config.clone(),
    );

    manifest.step("kie");
    match KiePipeline::new(gateway.as_ref(), &prompts, &config.kie)
        .run(&image)
        .await
    {
        Ok(out) => {
            manifest.attempts = out.telemetry.phases.clone();
            for (i, t) in out.transcription_samples.iter().enumerate() {
                manifest.emit(
                    &format!("samples/transcription_{}.json", i + 1),
                    &t.to_json_string(),
                )?;
            }
            for (i, g) in out.grouping_samples.iter().enumerate() {
                manifest.emit(
                    &format!("samples/grouping_{}.json", i + 1),
                    &g.grouping.to_json_string(),
                )?;
            }
            manifest.emit(T_FINAL_FILE, &out.t_final.to_json_string())?;
            manifest.emit(G_FINAL_FILE, &out.g_final.grouping.to_json_string())?;
            manifest.finish()
        }
        Err(run_err) => {
            manifest.attempts = run_err.telemetry.phases.clone();
            if let Some(t) = &run_err.t_final {
                manifest.emit(T_FINAL_FILE, &t.to_json_string())?;
            }
            let phase = run_err.error.phase().map(|p| p.to_string());
            let err = anyhow::Error::new(run_err);
            manifest.fail(phase, &err);
            manifest.finish()?;
            Err(err.context("transcription failed"))
        }
    }
}

fn articles_or_warn(dir: &Path, manifest: &mut RunManifest) -> anyhow::Result<ArticleLoad> {
    let load = load_articles(dir)
        .with_context(|| format!("cannot read articles from {}", dir.display()))?;
    for e in &load.skipped {
        manifest.warn(format!("skipped article: {e}"));
    }
    Ok(load)
}

pub async fn extract(args: &ExtractArgs) -> anyhow::Result<RunStatus> {
    let config = RunConfig::load(args.common.config.as_deref())?;
    let schema = load_schema(args.schema.as_deref())?;
    let grouping = load_grouping(args.grouping.as_deref(), &schema)?;
    let prompts = config.prompts()?;
    let gateway = args.common.backend.open(&config.gateway)?;
    let mut manifest = RunManifest::new(
        "extract",
        &args.out,
        args.common.backend.to_string(),
        Some(prompts.info().clone()),
        config.clone(),
    );
    let load = articles_or_warn(&args.articles, &mut manifest)?;
    let engine = QaEngine::new(gateway.as_ref(), &prompts, &config.qa);
    let mut written = 0;
    for article in &load.articles {
        manifest.step(&article.article_id);
        match engine
            .populate_form(&schema, grouping.as_ref(), article, args.mode)
            .await
        {
            Ok(form) => {
                manifest.emit(&form_file_name(&article.article_id), &form.to_json_string())?;
                written += 1;
            }
            Err(e) => manifest.warn(format!("article {}: {e}", article.article_id)),
        }
    }
    if written == 0 && !(load.articles.is_empty() && load.skipped.is_empty()) {
        let err = anyhow::anyhow!("no form could be filled");
        manifest.fail(None, &err);
        manifest.finish()?;
        return Err(err);
    }
    manifest.finish()
}

fn load_records(path: &Path, manifest: &mut RunManifest) -> anyhow::Result<Vec<FraRecord>> {
    let load = load_fra_csv(path)
        .with_context(|| format!("cannot load FRA records from {}", path.display()))?;
    for w in &load.warnings {
        manifest.warn(format!("{} line {}: {}", path.display(), w.line, w.message));
    }
    Ok(load.records)
}

pub fn link(args: &LinkArgs) -> anyhow::Result<RunStatus> {
    let mut manifest =
        RunManifest::new("link", &args.out, "none".into(), None, RunConfig::default());
    let load = articles_or_warn(&args.articles, &mut manifest)?;
    let records = load_records(&args.records, &mut manifest)?;
    let forms: IndexMap<String, PopulatedForm> = match &args.forms {
        Some(dir) => {
            let schema = FormSchema::form57();
            load_forms(dir, &schema)?
                .into_iter()
                .map(|f| (f.article_id.clone(), f))
                .collect()
        }
        None => IndexMap::new(),
    };
    let keys = FormCueKeys::default();
    let queries: Vec<LinkQuery> = load
        .articles
        .iter()
        .map(|a| LinkQuery::new(a, forms.get(&a.article_id), &keys))
        .collect();
    let report = build_linkage_report(&queries, &records);
    manifest.emit(LINKAGE_FILE, &report.to_json_string())?;
    manifest.finish()
}

#[derive(Debug, Serialize)]
struct PipelineSummary<'a> {
    pipeline: &'a str,
    kie_model: Option<&'a str>,
    qa_batch: &'a str,
    runs: &'a [EvalReport],
}

/// Scores every form in `forms` and pools the result.
pub async fn evaluate_forms(
    schema: &FormSchema,
    forms: &[PopulatedForm],
    linkage: &form57_core::linkage::LinkageReport,
    records: &[FraRecord],
    annotations: &std::collections::BTreeMap<String, form57_core::eval::AnswerabilityAnnotation>,
    crosswalk: &form57_core::crosswalk::Crosswalk,
    judge: &Judge<'_>,
) -> EvalReport {
    let mut reports = Vec::with_capacity(forms.len());
    for form in forms {
        let record = linkage
            .record_for(&form.article_id)
            .and_then(|id| records.iter().find(|r| r.record_id == id));
        let annotation = annotations.get(&form.article_id);
        reports.push(compute_report(schema, form, record, annotation, crosswalk, judge).await);
    }
    aggregate_reports(&reports)
}

fn qa_batch_label(forms: &[PopulatedForm]) -> String {
    let mut modes = forms.iter().map(|f| f.batching_mode);
    match modes.next() {
        None => "-".into(),
        Some(first) if modes.all(|m| m == first) => first.as_str().into(),
        Some(_) => "mixed".into(),
    }
}

pub async fn evaluate(args: &EvaluateArgs) -> anyhow::Result<(RunStatus, String)> {
    let config = RunConfig::load(args.common.config.as_deref())?;
    let schema = load_schema(args.schema.as_deref())?;
    let crosswalk = load_crosswalk(args.crosswalk.as_deref())?;
    let mut manifest = RunManifest::new("evaluate", &args.out, "none".into(), None, config.clone());
    let unknown = crosswalk.unknown_keys(&schema);
    if !unknown.is_empty() {
        manifest.warn(format!(
            "crosswalk keys not in the schema: {}",
            unknown.join(", ")
        ));
    }
    let linkage = load_linkage(&args.linkage)?;
    let records = load_records(&args.records, &mut manifest)?;
    let annotations = load_annotation_map(args.annotations.as_deref(), &schema)?;
    if annotations.is_empty() {
        manifest.warn("no answerability annotations; coverage is undefined");
    }

    let prompts;
    let gateway: std::sync::Arc<dyn ModelGateway>;
    let judge = if config.judge.use_model {
        prompts = config.prompts()?;
        gateway = args.common.backend.open(&config.gateway)?;
        manifest.backend = args.common.backend.to_string();
        manifest.prompts = Some(prompts.info().clone());
        Judge::with_model(gateway.as_ref(), &prompts, config.qa.retry_policy.clone())
    } else {
        Judge::offline()
    };

    let mut rows: IndexMap<(String, Option<String>), PipelineRuns> = IndexMap::new();
    for PipelineArg {
        name,
        kie_model,
        forms,
    } in &args.pipelines
    {
        manifest.step(&format!("{name} {}", forms.display()));
        let loaded = load_forms(forms, &schema)?;
        if loaded.is_empty() {
            bail!(
                "no {} files in {}",
                crate::inputs::FORM_SUFFIX,
                forms.display()
            );
        }
        let report = evaluate_forms(
            &schema,
            &loaded,
            &linkage,
            &records,
            &annotations,
            &crosswalk,
            &judge,
        )
        .await;
        let row = rows
            .entry((name.clone(), kie_model.clone()))
            .or_insert_with(|| PipelineRuns {
                name: name.clone(),
                kie_model: kie_model.clone(),
                qa_batch: qa_batch_label(&loaded),
                runs: Vec::new(),
            });
        if row.qa_batch != qa_batch_label(&loaded) {
            row.qa_batch = "mixed".into();
        }
        row.runs.push(report);
    }
    let rows: Vec<PipelineRuns> = rows.into_values().collect();
    let summaries: Vec<PipelineSummary> = rows
        .iter()
        .map(|r| PipelineSummary {
            pipeline: &r.name,
            kie_model: r.kie_model.as_deref(),
            qa_batch: &r.qa_batch,
            runs: &r.runs,
        })
        .collect();
    let performance = form57_core::eval::performance_table(&rows);
    manifest.emit(
        EVALUATION_FILE,
        &form57_core::io::to_pretty_json(&summaries),
    )?;
    manifest.emit(TABLE_PERFORMANCE_FILE, &performance)?;
    manifest.emit(
        TABLE_BY_TYPE_FILE,
        &form57_core::eval::accuracy_by_type_table(&rows),
    )?;
    Ok((manifest.finish()?, performance))
}
