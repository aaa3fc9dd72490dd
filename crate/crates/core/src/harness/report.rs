//! Report emission for a finished run: JSON summaries, rounded CSVs,
//! per-key breakdown tables, a chart-ready long-format CSV, timing, and
//! per-sample traces. Everything written here is deterministic for
//! replay-mode runs.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{HarnessError, RunRecord};
use crate::metrics::{fmt_metric, CorpusMetrics};

#[derive(Serialize)]
struct MetricsReport<'a> {
    pipeline: &'a str,
    samples: usize,
    empty_predictions: usize,
    failed_samples: &'a [String],
    rejected_samples: &'a [String],
    multi_optima_samples: usize,
    mean_predicted_steps: Option<f64>,
    metrics: &'a CorpusMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    macro_metrics: Option<&'a CorpusMetrics>,
    breakdowns: &'a std::collections::BTreeMap<String, Vec<crate::metrics::BreakdownRow>>,
}

fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

fn metric_cells(metrics: &CorpusMetrics) -> String {
    [
        metrics.r_c,
        metrics.p_c,
        metrics.f_c,
        metrics.r_p,
        metrics.p_p,
        metrics.f_p,
    ]
    .iter()
    .map(|&v| fmt_metric(v))
    .collect::<Vec<_>>()
    .join(",")
}

fn sanitize_file_name(raw: &str) -> String {
    raw.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes every report artifact for a run under `out_dir`.
pub fn write_reports(record: &RunRecord, out_dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;

    // metrics.json — full precision, no timing, byte-stable.
    let report = MetricsReport {
        pipeline: &record.pipeline,
        samples: record.samples.len(),
        empty_predictions: record.empty_predictions,
        failed_samples: &record.failed_samples,
        rejected_samples: &record.rejected_samples,
        multi_optima_samples: record.multi_optima_samples,
        mean_predicted_steps: record.mean_predicted_steps,
        metrics: &record.metrics,
        macro_metrics: record.macro_metrics.as_ref(),
        breakdowns: &record.breakdowns,
    };
    let mut metrics_json = serde_json::to_string_pretty(&report).expect("report serializes");
    metrics_json.push('\n');
    std::fs::write(out_dir.join("metrics.json"), metrics_json)?;

    // metrics.csv — rounded percentages, "-" for UNDEFINED.
    let mut metrics_csv = String::from("r_c,p_c,f_c,r_p,p_p,f_p\n");
    metrics_csv.push_str(&metric_cells(&record.metrics));
    metrics_csv.push('\n');
    std::fs::write(out_dir.join("metrics.csv"), metrics_csv)?;

    // One CSV per breakdown key.
    for (key, rows) in &record.breakdowns {
        let mut csv = String::from("group,samples,r_c,p_c,f_c,r_p,p_p,f_p\n");
        for row in rows {
            csv.push_str(&format!(
                "{},{},{}\n",
                csv_field(&row.group),
                row.samples,
                metric_cells(&row.metrics)
            ));
        }
        std::fs::write(out_dir.join(format!("breakdown_{key}.csv")), csv)?;
    }

    // chart.csv — long format, full-precision percentages, defined cells only.
    let mut chart = String::from("key,group,metric,value\n");
    let mut push_chart = |key: &str, group: &str, metrics: &CorpusMetrics| {
        let named = [
            ("r_c", metrics.r_c),
            ("p_c", metrics.p_c),
            ("f_c", metrics.f_c),
            ("r_p", metrics.r_p),
            ("p_p", metrics.p_p),
            ("f_p", metrics.f_p),
        ];
        for (name, value) in named {
            if let Some(v) = value {
                chart.push_str(&format!(
                    "{},{},{},{}\n",
                    csv_field(key),
                    csv_field(group),
                    name,
                    v * 100.0
                ));
            }
        }
    };
    push_chart("corpus", "all", &record.metrics);
    for (key, rows) in &record.breakdowns {
        for row in rows {
            push_chart(key, &row.group, &row.metrics);
        }
    }
    std::fs::write(out_dir.join("chart.csv"), chart)?;

    // timing.json — latency-derived, deterministic under replay.
    #[derive(Serialize)]
    struct TimingReport<'a> {
        total_seconds: f64,
        samples: Vec<(&'a str, f64)>,
    }
    let timing = TimingReport {
        total_seconds: record.total_seconds,
        samples: record
            .samples
            .iter()
            .map(|s| (s.sample_id.as_str(), s.time_seconds))
            .collect(),
    };
    let mut timing_json = serde_json::to_string_pretty(&timing).expect("timing serializes");
    timing_json.push('\n');
    std::fs::write(out_dir.join("timing.json"), timing_json)?;

    // Per-sample traces.
    let traces_dir = out_dir.join("traces");
    std::fs::create_dir_all(&traces_dir)?;
    for trace in &record.traces {
        let mut text = serde_json::to_string_pretty(trace).expect("trace serializes");
        text.push('\n');
        let name = sanitize_file_name(&trace.sample_id);
        std::fs::write(traces_dir.join(format!("{name}.json")), text)?;
    }

    // The full record, for `report` re-emission.
    let mut record_json = serde_json::to_string_pretty(record).expect("record serializes");
    record_json.push('\n');
    std::fs::write(out_dir.join("run_record.json"), record_json)?;

    Ok(())
}

/// Human-oriented one-screen summary, written by the CLI to stdout.
pub fn render_summary(record: &RunRecord) -> String {
    let mut out = Vec::new();
    let m = &record.metrics;
    writeln!(out, "pipeline: {}  mode: {}", record.pipeline, record.mode).unwrap();
    writeln!(
        out,
        "samples: {}  empty predictions: {}  failures: {}",
        record.samples.len(),
        record.empty_predictions,
        record.failed_samples.len()
    )
    .unwrap();
    writeln!(
        out,
        "R_c {}  P_c {}  F_c {}  R_p {}  P_p {}  F_p {}",
        fmt_metric(m.r_c),
        fmt_metric(m.p_c),
        fmt_metric(m.f_c),
        fmt_metric(m.r_p),
        fmt_metric(m.p_p),
        fmt_metric(m.f_p),
    )
    .unwrap();
    if let Some(mean) = record.mean_predicted_steps {
        writeln!(out, "mean predicted steps: {mean:.1}").unwrap();
    }
    String::from_utf8(out).expect("summary is utf-8")
}
