use std::fmt::Write;

use serde::Serialize;

use super::{AnswerCategory, EvalReport};

/// Mean and population standard deviation over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

impl MeanStd {
    /// `None` when no value is defined.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            runs: v.len(),
        })
    }

    fn cell(this: Option<Self>) -> String {
        match this {
            None => "n/a".into(),
            Some(m) if m.runs > 1 => format!("{:.2} ± {:.2}", m.mean, m.std),
            Some(m) => format!("{:.2}", m.mean),
        }
    }
}

/// One table row: a pipeline configuration and its repeated runs.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineRuns {
    pub name: String,
    pub kie_model: Option<String>,
    pub qa_batch: String,
    pub runs: Vec<EvalReport>,
}

impl PipelineRuns {
    pub fn accuracy(&self) -> Option<MeanStd> {
        MeanStd::of(self.runs.iter().filter_map(EvalReport::accuracy_value))
    }

    pub fn coverage(&self) -> Option<MeanStd> {
        MeanStd::of(self.runs.iter().filter_map(EvalReport::coverage_value))
    }

    pub fn category_accuracy(&self, c: AnswerCategory) -> Option<MeanStd> {
        MeanStd::of(
            self.runs
                .iter()
                .filter_map(|r| r.by_answer_type.get(&c).and_then(|rate| rate.value())),
        )
    }
}

fn render(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<String>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "| {} |", padded.join(" | "));
    };
    line(header.iter().map(|h| h.to_string()).collect());
    line(widths.iter().map(|w| "-".repeat(*w)).collect());
    for row in rows {
        line(row);
    }
    out
}

/// Accuracy and coverage per pipeline.
pub fn performance_table(rows: &[PipelineRuns]) -> String {
    render(
        &["Pipeline", "KIE model", "QA batch", "Accuracy", "Coverage"],
        rows.iter()
            .map(|r| {
                vec![
                    r.name.clone(),
                    r.kie_model.clone().unwrap_or_else(|| "-".into()),
                    r.qa_batch.clone(),
                    MeanStd::cell(r.accuracy()),
                    MeanStd::cell(r.coverage()),
                ]
            })
            .collect(),
    )
}

/// Accuracy per answer category and pipeline.
pub fn accuracy_by_type_table(rows: &[PipelineRuns]) -> String {
    let header: Vec<&str> = std::iter::once("Pipeline")
        .chain(AnswerCategory::ALL.iter().map(|c| c.label()))
        .collect();
    render(
        &header,
        rows.iter()
            .map(|r| {
                std::iter::once(r.name.clone())
                    .chain(
                        AnswerCategory::ALL
                            .iter()
                            .map(|c| MeanStd::cell(r.category_accuracy(*c))),
                    )
                    .collect()
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        let m = MeanStd::of([0.8, 0.9, 1.0]).unwrap();
        assert!((m.mean - 0.9).abs() < 1e-12);
        assert!((m.std - (0.02f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(MeanStd::cell(Some(m)), "0.90 ± 0.08");
        assert_eq!(MeanStd::cell(MeanStd::of([0.5])), "0.50");
        assert_eq!(MeanStd::cell(None), "n/a");
    }

    #[test]
    fn empty_run_set_renders_na() {
        let rows = [PipelineRuns {
            name: "p".into(),
            kie_model: None,
            qa_batch: "group".into(),
            runs: vec![],
        }];
        let t = performance_table(&rows);
        assert!(
            t.contains("| p        | -         | group    | n/a      | n/a      |"),
            "{t}"
        );
        assert!(accuracy_by_type_table(&rows)
            .starts_with("| Pipeline | Single choice | Digit | Free text |"));
    }
}
