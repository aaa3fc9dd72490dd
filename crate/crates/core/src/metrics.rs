//! Content and precondition recall/precision/F1, alignment statistics,
//! and dimension-wise breakdowns.
//!
//! Per-sample tallies count true positives: matched step pairs for
//! content, and annotated dependency edges whose mapped image exists in
//! the prediction for preconditions. Corpus metrics micro-average by
//! summing numerators and denominators; a zero denominator makes the
//! ratio UNDEFINED (`None`), rendered as `"-"` in reports.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{QASample, StepGraph};
use crate::matching::Assignment;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("tallies list must be non-empty")]
    EmptyInput,
    #[error("assignment pair ({row}, {col}) is out of range for {rows}×{cols} graphs")]
    AssignmentOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("score vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooFewValues { need: usize, got: usize },
}

/// Per-sample true-positive counts and denominators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleTallies {
    pub content_tp: usize,
    pub gt_steps: usize,
    pub pred_steps: usize,
    pub precond_tp: usize,
    pub gt_edges: usize,
    pub pred_edges: usize,
}

impl SampleTallies {
    /// The empty-prediction convention: failures cost recall, they do not
    /// vanish.
    pub fn empty_prediction(gt: &StepGraph) -> Self {
        SampleTallies {
            content_tp: 0,
            gt_steps: gt.len(),
            pred_steps: 0,
            precond_tp: 0,
            gt_edges: gt.edge_index_list().len(),
            pred_edges: 0,
        }
    }
}

/// Counts matched steps and matched dependency edges for one sample.
///
/// An annotated edge `u→v` scores iff both endpoints are matched by the
/// assignment and the predicted graph contains the edge `σ(u)→σ(v)`,
/// where σ is the assignment's row→column map. Edges are compared exactly
/// as written — no transitive closure on either side.
pub fn tally_sample(
    gt: &StepGraph,
    pred: &StepGraph,
    assignment: &Assignment,
) -> Result<SampleTallies, MetricsError> {
    let rows = gt.len();
    let cols = pred.len();
    let mut sigma: BTreeMap<usize, usize> = BTreeMap::new();
    for &(row, col) in assignment.pairs() {
        if row >= rows || col >= cols {
            return Err(MetricsError::AssignmentOutOfRange {
                row,
                col,
                rows,
                cols,
            });
        }
        sigma.insert(row, col);
    }

    let gt_edges = gt.edge_index_list();
    let pred_edges: BTreeSet<(usize, usize)> = pred.edge_index_list().into_iter().collect();
    let mut precond_tp = 0;
    for (u, v) in &gt_edges {
        if let (Some(&su), Some(&sv)) = (sigma.get(u), sigma.get(v)) {
            if pred_edges.contains(&(su, sv)) {
                precond_tp += 1;
            }
        }
    }

    Ok(SampleTallies {
        content_tp: assignment.cardinality(),
        gt_steps: rows,
        pred_steps: cols,
        precond_tp,
        gt_edges: gt_edges.len(),
        pred_edges: pred.edge_index_list().len(),
    })
}

/// Corpus-level ratios; `None` is the distinguished UNDEFINED value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub r_c: Option<f64>,
    pub p_c: Option<f64>,
    pub f_c: Option<f64>,
    pub r_p: Option<f64>,
    pub p_p: Option<f64>,
    pub f_p: Option<f64>,
}

/// Harmonic mean of recall and precision: `2rp/(r+p)`, UNDEFINED when
/// either input is UNDEFINED or both are zero.
pub fn f1(r: Option<f64>, p: Option<f64>) -> Option<f64> {
    match (r, p) {
        (Some(r), Some(p)) if r + p > 0.0 => Some(2.0 * r * p / (r + p)),
        _ => None,
    }
}

fn ratio(numerator: usize, denominator: usize) -> Option<f64> {
    if denominator == 0 {
        None
    } else {
        Some(numerator as f64 / denominator as f64)
    }
}

/// Micro-average: sums numerators and denominators across samples, then
/// takes ratios.
pub fn aggregate(tallies: &[SampleTallies]) -> Result<CorpusMetrics, MetricsError> {
    if tallies.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let sum = |f: fn(&SampleTallies) -> usize| tallies.iter().map(f).sum::<usize>();
    let r_c = ratio(sum(|t| t.content_tp), sum(|t| t.gt_steps));
    let p_c = ratio(sum(|t| t.content_tp), sum(|t| t.pred_steps));
    let r_p = ratio(sum(|t| t.precond_tp), sum(|t| t.gt_edges));
    let p_p = ratio(sum(|t| t.precond_tp), sum(|t| t.pred_edges));
    Ok(CorpusMetrics {
        r_c,
        p_c,
        f_c: f1(r_c, p_c),
        r_p,
        p_p,
        f_p: f1(r_p, p_p),
    })
}

/// Macro-average alternative: per-sample ratios averaged, skipping
/// UNDEFINED samples per metric.
pub fn aggregate_macro(tallies: &[SampleTallies]) -> Result<CorpusMetrics, MetricsError> {
    if tallies.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
        let defined: Vec<f64> = values.flatten().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }
    let r_c = mean(tallies.iter().map(|t| ratio(t.content_tp, t.gt_steps)));
    let p_c = mean(tallies.iter().map(|t| ratio(t.content_tp, t.pred_steps)));
    let r_p = mean(tallies.iter().map(|t| ratio(t.precond_tp, t.gt_edges)));
    let p_p = mean(tallies.iter().map(|t| ratio(t.precond_tp, t.pred_edges)));
    Ok(CorpusMetrics {
        r_c,
        p_c,
        f_c: f1(r_c, p_c),
        r_p,
        p_p,
        f_p: f1(r_p, p_p),
    })
}

/// Scorer/human agreement statistics over paired score tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub rho_c: Option<f64>,
    pub rho_p: Option<f64>,
    pub s: Option<f64>,
    pub delta: f64,
}

/// Pearson correlation coefficient. Constant vectors have no defined
/// correlation and yield `None`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFewValues {
            need: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Ok(None);
    }
    Ok(Some(cov / (vx.sqrt() * vy.sqrt())))
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(x: &[f64], y: &[f64]) -> Result<Option<f64>, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(MetricsError::TooFewValues { need: 1, got: 0 });
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Ok(None);
    }
    Ok(Some(dot / (nx * ny)))
}

/// Mean absolute error, in the same units as the inputs.
pub fn mae(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(MetricsError::TooFewValues { need: 1, got: 0 });
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

/// The three grouping dimensions reports break metrics down by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakdownKey {
    AnswerStepCount,
    AnnotationSource,
    SceneCategory,
}

impl BreakdownKey {
    pub const ALL: [BreakdownKey; 3] = [
        BreakdownKey::AnswerStepCount,
        BreakdownKey::AnnotationSource,
        BreakdownKey::SceneCategory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BreakdownKey::AnswerStepCount => "answer_step_count",
            BreakdownKey::AnnotationSource => "annotation_source",
            BreakdownKey::SceneCategory => "scene_category",
        }
    }
}

/// Step-count group label: counts up to 7 stand alone, 8–10 pool into one
/// bucket, anything larger lands in "11+".
pub fn stepcount_bucket(steps: usize) -> String {
    match steps {
        0..=7 => steps.to_string(),
        8..=10 => "8-10".to_string(),
        _ => "11+".to_string(),
    }
}

fn bucket_sort_key(label: &str) -> (usize, String) {
    let lead: String = label.chars().take_while(|c| c.is_ascii_digit()).collect();
    (lead.parse().unwrap_or(usize::MAX), label.to_string())
}

/// One group of a breakdown: its label, sample count, and metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub group: String,
    pub samples: usize,
    pub metrics: CorpusMetrics,
}

/// Partitions samples by the key and aggregates each group independently.
/// Groups come back in a deterministic order: numeric for step counts,
/// annotation-source order for sources, alphabetical for scenes.
pub fn breakdown(
    results: &[(&QASample, SampleTallies)],
    key: BreakdownKey,
) -> Vec<BreakdownRow> {
    let mut groups: BTreeMap<String, Vec<SampleTallies>> = BTreeMap::new();
    for (sample, tallies) in results {
        let label = match key {
            BreakdownKey::AnswerStepCount => stepcount_bucket(sample.answer.len()),
            BreakdownKey::AnnotationSource => sample.annotation_source.as_str().to_string(),
            BreakdownKey::SceneCategory => sample.scene_category.clone(),
        };
        groups.entry(label).or_default().push(*tallies);
    }

    let mut rows: Vec<BreakdownRow> = groups
        .into_iter()
        .map(|(group, tallies)| BreakdownRow {
            group,
            samples: tallies.len(),
            metrics: aggregate(&tallies).expect("groups are non-empty"),
        })
        .collect();

    match key {
        BreakdownKey::AnswerStepCount => {
            rows.sort_by_key(|r| bucket_sort_key(&r.group));
        }
        BreakdownKey::AnnotationSource => {
            let order = ["human", "subgraph", "expansion"];
            rows.sort_by_key(|r| order.iter().position(|&s| s == r.group).unwrap_or(3));
        }
        BreakdownKey::SceneCategory => {}
    }
    rows
}

/// Arithmetic mean of step counts over produced predictions.
pub fn mean_predicted_steps(preds: &[&StepGraph]) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::TooFewValues { need: 1, got: 0 });
    }
    Ok(preds.iter().map(|g| g.len()).sum::<usize>() as f64 / preds.len() as f64)
}

/// Percentage with one decimal place, half-up, e.g. `0.5714…` → `57.1`.
pub fn pct_rounded(value: f64) -> f64 {
    (value * 1000.0).round() / 10.0
}

/// Report cell for an optional ratio: rounded percentage or `"-"`.
pub fn fmt_metric(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.1}", pct_rounded(v)),
        None => "-".to_string(),
    }
}
