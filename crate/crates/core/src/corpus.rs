//! Corpus files: a JSON array of samples, each carrying a question, an
//! answer keyed `step1..stepN`, an image path, a scene category, an
//! annotation source, and an id. Augmented samples additionally carry
//! `parent_id` and `rule` provenance fields.
//!
//! Loading is per-sample fault tolerant: a sample that breaks the schema
//! or the graph rules is excluded from the valid set and reported, while
//! the rest of the file still loads. Writing is canonical — field order,
//! numeric step-key order, two-space indentation, trailing newline — so
//! that loading and re-writing a canonical file is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    validate_sample, AnnotationSource, QASample, Step, StepGraph, StepId, ValidationReport,
    Violation,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}, column {column} (byte {offset}): {message}")]
    Parse {
        line: usize,
        column: usize,
        offset: usize,
        message: String,
    },
    #[error("corpus root must be a JSON array")]
    NotAnArray,
}

/// Result of loading a corpus file: the valid samples in file order, plus
/// one report per sample in the file (empty violations ⇔ kept).
#[derive(Debug, Clone)]
pub struct CorpusLoad {
    pub samples: Vec<QASample>,
    pub reports: Vec<ValidationReport>,
}

impl CorpusLoad {
    pub fn rejected(&self) -> impl Iterator<Item = &ValidationReport> {
        self.reports.iter().filter(|r| !r.is_valid())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawStep {
    content: String,
    precondition: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSample {
    question: String,
    answer: BTreeMap<String, RawStep>,
    image: String,
    scene: String,
    source: String,
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rule: Option<String>,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len() + 1;
    }
    text.len()
}

fn parse_error(text: &str, err: &serde_json::Error) -> CorpusError {
    CorpusError::Parse {
        line: err.line(),
        column: err.column(),
        offset: byte_offset(text, err.line(), err.column()),
        message: err.to_string(),
    }
}

/// Builds a [`StepGraph`] from raw `stepK → record` entries, normalizing
/// key casing/spacing and ordering steps by their numeric suffix.
fn normalize_answer(raw: &BTreeMap<String, RawStep>) -> Result<StepGraph, Violation> {
    let mut steps: Vec<Step> = Vec::with_capacity(raw.len());
    for (key, record) in raw {
        let id = StepId::parse(key).ok_or_else(|| {
            Violation::new("schema", format!("invalid step key {key:?}"))
        })?;
        let mut preconditions = Vec::with_capacity(record.precondition.len());
        for pre in &record.precondition {
            let pre_id = StepId::parse(pre).ok_or_else(|| {
                Violation::new(
                    "schema",
                    format!("{key:?} lists invalid precondition reference {pre:?}"),
                )
            })?;
            preconditions.push(pre_id);
        }
        steps.push(Step {
            id,
            content: record.content.clone(),
            preconditions,
        });
    }
    steps.sort_by_key(|s| s.id);
    Ok(StepGraph::new(steps))
}

fn sample_from_raw(raw: RawSample) -> Result<QASample, Violation> {
    let source = AnnotationSource::parse(&raw.source).ok_or_else(|| {
        Violation::new("schema", format!("unknown annotation source {:?}", raw.source))
    })?;
    let answer = normalize_answer(&raw.answer)?;
    Ok(QASample {
        sample_id: raw.id,
        question: raw.question,
        answer,
        image_path: raw.image,
        scene_category: raw.scene,
        annotation_source: source,
        parent_id: raw.parent_id,
        rule: raw.rule,
    })
}

/// Parses corpus text. File-level JSON syntax errors abort with a byte
/// offset; per-sample schema or invariant problems only exclude that
/// sample.
pub fn parse_corpus(text: &str) -> Result<CorpusLoad, CorpusError> {
    let values: serde_json::Value =
        serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
    let array = values.as_array().ok_or(CorpusError::NotAnArray)?;

    let mut samples = Vec::new();
    let mut reports = Vec::new();
    for (i, value) in array.iter().enumerate() {
        let fallback_id = value
            .get("id")
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("sample[{i}]"));
        let raw: RawSample = match serde_json::from_value(value.clone()) {
            Ok(raw) => raw,
            Err(e) => {
                reports.push(ValidationReport {
                    sample_id: fallback_id,
                    violations: vec![Violation::new("schema", e.to_string())],
                });
                continue;
            }
        };
        match sample_from_raw(raw) {
            Ok(sample) => {
                let report = validate_sample(&sample);
                if report.is_valid() {
                    samples.push(sample);
                }
                reports.push(report);
            }
            Err(violation) => reports.push(ValidationReport {
                sample_id: fallback_id,
                violations: vec![violation],
            }),
        }
    }
    Ok(CorpusLoad { samples, reports })
}

/// Loads a corpus file from disk. See [`parse_corpus`].
pub fn load_corpus(path: &Path) -> Result<CorpusLoad, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text)
}

/// `answer` map wrapper that serializes entries in numeric step order.
struct AnswerMap<'a>(&'a StepGraph);

impl Serialize for AnswerMap<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for step in self.0.steps() {
            let record = RawStep {
                content: step.content.clone(),
                precondition: step.preconditions.iter().map(|p| p.to_string()).collect(),
            };
            map.serialize_entry(&step.id.to_string(), &record)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct SampleOut<'a> {
    question: &'a str,
    answer: AnswerMap<'a>,
    image: &'a str,
    scene: &'a str,
    source: &'a str,
    id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<&'a str>,
}

/// Canonical JSON text of one answer object, keys in numeric step order.
pub fn answer_to_json(graph: &StepGraph) -> String {
    serde_json::to_string_pretty(&AnswerMap(graph)).expect("answer serialization")
}

/// Canonical corpus text for a list of samples.
pub fn corpus_to_string(samples: &[QASample]) -> String {
    let out: Vec<SampleOut> = samples
        .iter()
        .map(|s| SampleOut {
            question: &s.question,
            answer: AnswerMap(&s.answer),
            image: &s.image_path,
            scene: &s.scene_category,
            source: s.annotation_source.as_str(),
            id: &s.sample_id,
            parent_id: s.parent_id.as_deref(),
            rule: s.rule.as_deref(),
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&out).expect("corpus serialization");
    text.push('\n');
    text
}

/// Writes samples to disk in canonical form.
pub fn write_corpus(path: &Path, samples: &[QASample]) -> Result<(), CorpusError> {
    std::fs::write(path, corpus_to_string(samples))?;
    Ok(())
}
