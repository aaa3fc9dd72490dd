//! Strict parsing of model output: `<ans></ans>` extraction, matching
//! matrix payloads, and step-answer payloads.
//!
//! Nothing here repairs malformed output. Trailing commas, single quotes,
//! booleans where 0/1 integers are expected — all of it fails, and the
//! caller's retry policy decides what happens next. Silent repair would be
//! an invisible scoring confound.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::{validate_graph, Step, StepGraph, StepId, Violation};
use crate::matching::MatchMatrix;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("missing answer tags")]
    MissingTags,
    #[error("malformed answer tags (nested <ans>)")]
    NestedTags,
    #[error("empty answer payload")]
    EmptyPayload,
    #[error("payload is not valid JSON: {0}")]
    Json(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("shape mismatch (got {got_rows}×{got_cols}, expected {want_rows}×{want_cols})")]
    ShapeMismatch {
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("non-binary entry at [{row}][{col}]")]
    NonBinaryEntry { row: usize, col: usize },
    #[error("answer violates graph rules: {}", format_violations(.0))]
    InvalidGraph(Vec<Violation>),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A model reply with the payload of its first `<ans></ans>` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedAnswer {
    pub raw: String,
    pub payload: String,
}

/// Extracts the payload between the first `<ans>` and the first `</ans>`
/// after it. Text after the closing tag is ignored; a payload containing
/// another `<ans>` (nested or unbalanced tags) is malformed, and an empty
/// payload is rejected.
pub fn extract_tagged(text: &str) -> Result<TaggedAnswer, ParseError> {
    let open = text.find("<ans>").ok_or(ParseError::MissingTags)?;
    let after_open = open + "<ans>".len();
    let close_rel = text[after_open..]
        .find("</ans>")
        .ok_or(ParseError::MissingTags)?;
    let payload = &text[after_open..after_open + close_rel];
    if payload.contains("<ans>") {
        return Err(ParseError::NestedTags);
    }
    if payload.trim().is_empty() {
        return Err(ParseError::EmptyPayload);
    }
    Ok(TaggedAnswer {
        raw: text.to_string(),
        payload: payload.to_string(),
    })
}

/// Parses a `[[0, 1], [1, 1]]` payload into an m×n matrix. Entries must be
/// the integers 0 or 1 — booleans and floats are rejected.
pub fn parse_match_matrix(payload: &str, m: usize, n: usize) -> Result<MatchMatrix, ParseError> {
    let value: serde_json::Value =
        serde_json::from_str(payload.trim()).map_err(|e| ParseError::Json(e.to_string()))?;
    let rows = value
        .as_array()
        .ok_or_else(|| ParseError::Json("payload is not a list of lists".into()))?;

    let got_rows = rows.len();
    let got_cols = rows
        .first()
        .and_then(|r| r.as_array())
        .map_or(0, |r| r.len());
    let mut matrix =
        MatchMatrix::zeros(m, n).map_err(|_| ParseError::Schema("empty matrix shape".into()))?;

    if got_rows != m {
        return Err(ParseError::ShapeMismatch {
            got_rows,
            got_cols,
            want_rows: m,
            want_cols: n,
        });
    }
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| ParseError::Json(format!("row {i} is not a list")))?;
        if row.len() != n {
            return Err(ParseError::ShapeMismatch {
                got_rows,
                got_cols: row.len(),
                want_rows: m,
                want_cols: n,
            });
        }
        for (j, cell) in row.iter().enumerate() {
            match cell.as_u64() {
                Some(1) => matrix.set(i, j, true),
                Some(0) => {}
                _ => return Err(ParseError::NonBinaryEntry { row: i, col: j }),
            }
        }
    }
    Ok(matrix)
}

/// Formats a matrix the way the matching prompt's example shows it:
/// `[[0, 1], [1, 1]]`.
pub fn format_matrix(matrix: &MatchMatrix) -> String {
    let rows: Vec<String> = (0..matrix.rows())
        .map(|i| {
            let cells: Vec<&str> = (0..matrix.cols())
                .map(|j| if matrix.get(i, j) { "1" } else { "0" })
                .collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

/// Parses a step-answer payload: a JSON object keyed `stepK` whose values
/// carry `content` and `precondition`. Keys are normalized (case,
/// whitespace) and steps ordered by numeric suffix; the result must pass
/// every graph rule or the parse fails.
pub fn parse_step_answer(payload: &str) -> Result<StepGraph, ParseError> {
    let value: serde_json::Value =
        serde_json::from_str(payload.trim()).map_err(|e| ParseError::Json(e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| ParseError::Schema("answer is not a JSON object".into()))?;

    let mut keyed: BTreeMap<StepId, Vec<Step>> = BTreeMap::new();
    for (key, entry) in object {
        let id = StepId::parse(key)
            .ok_or_else(|| ParseError::Schema(format!("invalid step key {key:?}")))?;
        let record = entry
            .as_object()
            .ok_or_else(|| ParseError::Schema(format!("{key:?} is not an object")))?;
        let content = record
            .get("content")
            .ok_or_else(|| ParseError::Schema(format!("{key:?} missing \"content\"")))?
            .as_str()
            .ok_or_else(|| ParseError::Schema(format!("{key:?} \"content\" is not a string")))?
            .to_string();
        let precondition = record
            .get("precondition")
            .ok_or_else(|| ParseError::Schema(format!("{key:?} missing \"precondition\"")))?
            .as_array()
            .ok_or_else(|| {
                ParseError::Schema(format!("{key:?} \"precondition\" is not a list"))
            })?;
        let mut preconditions = Vec::with_capacity(precondition.len());
        for pre in precondition {
            let raw = pre.as_str().ok_or_else(|| {
                ParseError::Schema(format!("{key:?} has a non-string precondition"))
            })?;
            let pre_id = StepId::parse(raw).ok_or_else(|| {
                ParseError::Schema(format!("{key:?} lists invalid precondition {raw:?}"))
            })?;
            preconditions.push(pre_id);
        }
        keyed.entry(id).or_default().push(Step {
            id,
            content,
            preconditions,
        });
    }

    let steps: Vec<Step> = keyed.into_values().flatten().collect();
    let graph = StepGraph::new(steps);
    let violations = validate_graph(&graph);
    if violations.is_empty() {
        Ok(graph)
    } else {
        Err(ParseError::InvalidGraph(violations))
    }
}
