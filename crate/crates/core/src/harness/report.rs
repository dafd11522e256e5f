use super::rank::{METRIC_FINAL, METRIC_IQA, METRIC_TIA};
use super::{build_cases, EvalRun, HarnessError, RankCase, RecordOutcome};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Jsonl,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(ReportFormat::Jsonl),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format {other:?} (jsonl, csv or markdown)")),
        }
    }
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Jsonl => "jsonl",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

/// Outcome indices in report order: case members by (case_id, gt_rank), then
/// records outside any case in input order.
fn report_order(run: &EvalRun) -> Vec<usize> {
    let mut cased: Vec<(&str, u32, usize)> = Vec::new();
    let mut loose = Vec::new();
    for (i, o) in run.outcomes.iter().enumerate() {
        match o.case() {
            Some(c) => cased.push((&c.case_id, c.gt_rank, i)),
            None => loose.push(i),
        }
    }
    cased.sort();
    cased.into_iter().map(|(_, _, i)| i).chain(loose).collect()
}

fn baseline_names(run: &EvalRun) -> Vec<String> {
    let names: BTreeSet<&String> = run.records().flat_map(|r| r.baselines.keys()).collect();
    names.into_iter().cloned().collect()
}

fn fmt_score(v: f64) -> String {
    format!("{v:.4}")
}

/// Renders the run. Nothing time-dependent goes into the body, so equal runs
/// render byte-identically.
pub fn render_report(run: &EvalRun, format: ReportFormat) -> String {
    match format {
        ReportFormat::Jsonl => render_jsonl(run),
        ReportFormat::Csv => render_csv(run),
        ReportFormat::Markdown => render_markdown(run),
    }
}

fn render_jsonl(run: &EvalRun) -> String {
    let mut out = String::new();
    for i in report_order(run) {
        out.push_str(&serde_json::to_string(&run.outcomes[i]).expect("outcome serializes"));
        out.push('\n');
    }
    out
}

fn render_csv(run: &EvalRun) -> String {
    let baselines = baseline_names(run);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "status", "image_id", "caption_id", "caption", "case_id", "gt_rank", "axis",
        "questions", "yes", "tia", "iqa", "iqa_raw", "final", "w_tia", "w_iqa",
        "degradation", "severity",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(baselines.iter().map(|b| format!("baseline:{b}")));
    header.push("error".into());
    w.write_record(&header).expect("in-memory write");
    for i in report_order(run) {
        let o = &run.outcomes[i];
        let (case_id, gt_rank, axis) = match o.case() {
            Some(c) => (c.case_id.clone(), c.gt_rank.to_string(), c.axis.to_string()),
            None => Default::default(),
        };
        let row: Vec<String> = match o {
            RecordOutcome::Ok(r) => {
                let (kind, sev) = match &r.degradation {
                    Some(s) => (s.kind.to_string(), s.severity_index.to_string()),
                    None => Default::default(),
                };
                let mut row = vec![
                    "ok".into(),
                    r.image_id.clone(),
                    r.caption.id().into(),
                    r.caption.text().into(),
                    case_id,
                    gt_rank,
                    axis,
                    r.tia().total().to_string(),
                    r.tia().yes_count().to_string(),
                    r.tia().value().to_string(),
                    r.iqa().value().to_string(),
                    r.iqa().raw().to_string(),
                    r.final_score.value().to_string(),
                    r.weights().w_tia().to_string(),
                    r.weights().w_iqa().to_string(),
                    kind,
                    sev,
                ];
                row.extend(
                    baselines
                        .iter()
                        .map(|b| r.baselines.get(b).map(f64::to_string).unwrap_or_default()),
                );
                row.push(String::new());
                row
            }
            RecordOutcome::Failed(f) => {
                let mut row = vec![
                    "failed".into(),
                    f.image_id.clone(),
                    f.caption_id.clone(),
                    String::new(),
                    case_id,
                    gt_rank,
                    axis,
                ];
                row.resize(header.len() - 1, String::new());
                row.push(f.error.clone());
                row
            }
        };
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

fn render_markdown(run: &EvalRun) -> String {
    let baselines = baseline_names(run);
    let cases = build_cases(run);
    let mut header = String::from("| GT rank | caption | TIA | IQA | Final |");
    let mut rule = String::from("|---|---|---|---|---|");
    for b in &baselines {
        let _ = write!(header, " {} |", md_escape(b));
        rule.push_str("---|");
    }
    let row = |out: &mut String, rank: &str, o: &RecordOutcome| {
        match o {
            RecordOutcome::Ok(r) => {
                let _ = write!(
                    out,
                    "| {rank} | {} | {} | {} | {} |",
                    md_escape(r.caption.text()),
                    fmt_score(r.tia().value()),
                    fmt_score(r.iqa().value()),
                    fmt_score(r.final_score.value())
                );
                for b in &baselines {
                    let cell = r.baselines.get(b).map(|v| fmt_score(*v)).unwrap_or_default();
                    let _ = write!(out, " {cell} |");
                }
            }
            RecordOutcome::Failed(f) => {
                let _ = write!(out, "| {rank} | {} | failed | failed | failed |", md_escape(&f.caption_id));
                for _ in &baselines {
                    out.push_str(" failed |");
                }
            }
        }
        out.push('\n');
    };

    let mut out = String::from("# Evaluation report\n");
    let order = report_order(run);
    for case in &cases {
        let _ = write!(out, "\n## Case {} (GT {})\n\n{header}\n{rule}\n", case.case_id, case.axis);
        for &i in order
            .iter()
            .filter(|&&i| run.outcomes[i].case().is_some_and(|c| c.case_id == case.case_id))
        {
            let rank = run.outcomes[i].case().map(|c| c.gt_rank).unwrap_or(0);
            row(&mut out, &rank.to_string(), &run.outcomes[i]);
        }
        out.push('\n');
        if !case.is_complete() {
            let _ = writeln!(out, "Incomplete: failed {}", case.failed.join(", "));
        }
        match &case.invalid {
            Some(reason) => {
                let _ = writeln!(out, "Invalid: {reason}");
            }
            None => {
                for metric in case.metrics.keys() {
                    if let Ok(a) = case.agreement(metric) {
                        let _ = writeln!(
                            out,
                            "- {metric}: tau {:.4}, pairwise {:.4}, strictly monotone {}",
                            a.kendall_tau,
                            a.pairwise_agree,
                            if a.strict_monotone { "yes" } else { "no" }
                        );
                    }
                }
            }
        }
    }
    let loose: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| run.outcomes[i].case().is_none())
        .collect();
    if !loose.is_empty() || cases.is_empty() {
        let _ = write!(out, "\n## Records\n\n{header}\n{rule}\n");
        for i in loose {
            row(&mut out, "-", &run.outcomes[i]);
        }
    }
    out
}

/// Per-case agreement table: one row per case, one column per metric, each
/// cell holding Kendall tau-b (marked `*` when strictly monotone). The final
/// row is the mean tau over valid cases.
pub fn render_comparison(cases: &[RankCase]) -> String {
    let mut metrics: Vec<String> = vec![METRIC_FINAL.into(), METRIC_TIA.into(), METRIC_IQA.into()];
    let extra: BTreeSet<&String> = cases
        .iter()
        .flat_map(|c| c.metrics.keys())
        .filter(|m| !metrics.contains(m))
        .collect();
    metrics.extend(extra.into_iter().cloned());
    let label = |m: &str| if m == METRIC_FINAL { "ours".to_string() } else { m.to_string() };

    let mut out = String::from("| case | GT | n |");
    for m in &metrics {
        let _ = write!(out, " {} |", md_escape(&label(m)));
    }
    out.push_str(" note |\n|---|---|---|");
    out.push_str(&"---|".repeat(metrics.len() + 1));
    out.push('\n');
    let mut sums = vec![(0.0, 0usize); metrics.len()];
    for case in cases {
        let _ = write!(out, "| {} | {} | {} |", md_escape(&case.case_id), case.axis, case.candidates.len());
        for (m, sum) in metrics.iter().zip(&mut sums) {
            let cell = match case.agreement(m) {
                Ok(a) => {
                    sum.0 += a.kendall_tau;
                    sum.1 += 1;
                    format!("{:.4}{}", a.kendall_tau, if a.strict_monotone { "*" } else { "" })
                }
                Err(_) => "-".into(),
            };
            let _ = write!(out, " {cell} |");
        }
        let mut notes = Vec::new();
        if let Some(reason) = &case.invalid {
            notes.push(format!("invalid: {reason}"));
        }
        if !case.is_complete() {
            notes.push(format!("incomplete: {}", case.failed.join(", ")));
        }
        let _ = writeln!(out, " {} |", md_escape(&notes.join("; ")));
    }
    out.push_str("| mean tau | | |");
    for (sum, n) in sums {
        if n == 0 {
            out.push_str(" - |");
        } else {
            let _ = write!(out, " {:.4} |", sum / n as f64);
        }
    }
    out.push_str(" |\n");
    out
}

/// Writes the rendered report, replacing `path` atomically.
pub fn emit_report(run: &EvalRun, format: ReportFormat, path: &Path) -> Result<(), HarnessError> {
    let body = render_report(run, format);
    let tmp = path.with_extension(format!("{}.tmp", format.extension()));
    let io = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::write(&tmp, body).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}
