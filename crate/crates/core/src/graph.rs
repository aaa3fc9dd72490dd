//! Data model for QA samples whose answers are step-dependency graphs.
//!
//! An answer is an ordered list of steps; each step carries free-text
//! content (one action on one object) and a list of precondition step ids
//! naming the steps that must complete first. Preconditions may only point
//! backwards, so a well-formed answer is a DAG and file order is already a
//! topological order.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical step identifier: the `K` of `"stepK"`, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepId(u32);

impl StepId {
    pub fn new(number: u32) -> Option<Self> {
        if number >= 1 {
            Some(StepId(number))
        } else {
            None
        }
    }

    /// 1-based number `K`.
    pub fn number(self) -> u32 {
        self.0
    }

    /// 0-based position in a canonical `step1..stepN` graph.
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    /// Parses a step key, normalizing casing and internal whitespace:
    /// `"Step 3"` → `step3`. Anything that is not `step` + digits (K ≥ 1)
    /// is rejected.
    pub fn parse(raw: &str) -> Option<Self> {
        let trimmed = raw.trim();
        if trimmed.len() < 5 || !trimmed[..4].eq_ignore_ascii_case("step") {
            return None;
        }
        let rest = trimmed[4..].trim_start();
        if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        rest.parse::<u32>().ok().and_then(StepId::new)
    }
}

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step{}", self.0)
    }
}

/// One action on one object, plus the ids of the steps it depends on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub id: StepId,
    pub content: String,
    pub preconditions: Vec<StepId>,
}

/// An answer as an ordered list of steps.
///
/// The container itself does not enforce the well-formedness rules;
/// [`validate_graph`] reports violations and parsers reject graphs that
/// carry any. This keeps corpus loading able to report broken samples
/// instead of aborting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepGraph {
    steps: Vec<Step>,
}

impl StepGraph {
    pub fn new(steps: Vec<Step>) -> Self {
        StepGraph { steps }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// First step with the given id, if any.
    pub fn get(&self, id: StepId) -> Option<&Step> {
        self.steps.iter().find(|s| s.id == id)
    }

    fn position(&self, id: StepId) -> Option<usize> {
        self.steps.iter().position(|s| s.id == id)
    }

    /// Transitive closure of precondition edges into `id`, excluding `id`.
    ///
    /// Traversal keeps a visited set, so it terminates even on graphs that
    /// violate the backward-reference rule. Precondition ids that do not
    /// name any step are skipped (validation reports them separately).
    pub fn ancestors(&self, id: StepId) -> Result<BTreeSet<StepId>, GraphError> {
        let start = self.get(id).ok_or(GraphError::MissingStep(id))?;
        let mut seen = BTreeSet::new();
        let mut stack: Vec<StepId> = start.preconditions.clone();
        while let Some(next) = stack.pop() {
            if next == id || !seen.insert(next) {
                continue;
            }
            if let Some(step) = self.get(next) {
                stack.extend(step.preconditions.iter().copied());
            }
        }
        Ok(seen)
    }

    /// One `(from, to)` pair per precondition entry, ordered by
    /// (to-position, from-number). Duplicate entries are kept, so the
    /// length always equals the total precondition count.
    pub fn edge_list(&self) -> Vec<(StepId, StepId)> {
        let mut edges = Vec::new();
        for step in &self.steps {
            let mut from: Vec<StepId> = step.preconditions.clone();
            from.sort();
            for f in from {
                edges.push((f, step.id));
            }
        }
        edges
    }

    /// Edge list as 0-based step positions, skipping entries whose source
    /// id names no step.
    pub fn edge_index_list(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (to, step) in self.steps.iter().enumerate() {
            let mut from: Vec<usize> = step
                .preconditions
                .iter()
                .filter_map(|&p| self.position(p))
                .collect();
            from.sort_unstable();
            for f in from {
                edges.push((f, to));
            }
        }
        edges
    }

    /// True when every precondition points at a strictly earlier step,
    /// i.e. file order is a topological order.
    pub fn edges_point_forward(&self) -> bool {
        self.steps.iter().enumerate().all(|(pos, step)| {
            step.preconditions
                .iter()
                .all(|&p| self.position(p).map_or(false, |pp| pp < pos))
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("missing step {0}")]
    MissingStep(StepId),
}

/// Where a sample's annotation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    Human,
    Subgraph,
    Expansion,
}

impl AnnotationSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationSource::Human => "human",
            AnnotationSource::Subgraph => "subgraph",
            AnnotationSource::Expansion => "expansion",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match raw {
            "human" => Some(AnnotationSource::Human),
            "subgraph" => Some(AnnotationSource::Subgraph),
            "expansion" => Some(AnnotationSource::Expansion),
            _ => None,
        }
    }
}

/// A question, its annotated answer, and bookkeeping fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QASample {
    pub sample_id: String,
    pub question: String,
    pub answer: StepGraph,
    pub image_path: String,
    pub scene_category: String,
    pub annotation_source: AnnotationSource,
    /// Id of the sample this one was derived from, for augmented samples.
    pub parent_id: Option<String>,
    /// Augmentation rule that produced this sample, for augmented samples.
    pub rule: Option<String>,
}

/// A single broken invariant: stable rule id plus a human-readable message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub message: String,
}

impl Violation {
    pub fn new(rule: &str, message: impl Into<String>) -> Self {
        Violation {
            rule: rule.to_string(),
            message: message.into(),
        }
    }
}

/// All violations found in one sample. Empty means the sample is valid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub sample_id: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every step-level and graph-level rule; violations are data, not
/// errors, and the input is never mutated.
pub fn validate_graph(graph: &StepGraph) -> Vec<Violation> {
    let mut violations = Vec::new();
    if graph.is_empty() {
        violations.push(Violation::new("empty-answer", "answer has no steps"));
        return violations;
    }

    let mut seen = BTreeSet::new();
    let mut duplicated = BTreeSet::new();
    for step in graph.steps() {
        if !seen.insert(step.id) && duplicated.insert(step.id) {
            violations.push(Violation::new(
                "duplicate-id",
                format!("{} appears more than once", step.id),
            ));
        }
    }

    let sequence_ok = graph
        .steps()
        .iter()
        .enumerate()
        .all(|(pos, step)| step.id.index() == pos);
    if !sequence_ok {
        let found: Vec<String> = graph.steps().iter().map(|s| s.id.to_string()).collect();
        violations.push(Violation::new(
            "id-sequence",
            format!(
                "step ids are not a contiguous step1..step{} sequence (found {})",
                graph.len(),
                found.join(", ")
            ),
        ));
    }

    for (pos, step) in graph.steps().iter().enumerate() {
        let mut listed = BTreeSet::new();
        for &pre in &step.preconditions {
            if !listed.insert(pre) {
                violations.push(Violation::new(
                    "duplicate-precondition",
                    format!("{} lists precondition {} more than once", step.id, pre),
                ));
                continue;
            }
            match graph.position(pre) {
                None => violations.push(Violation::new(
                    "unknown-reference",
                    format!("{} lists unknown precondition {}", step.id, pre),
                )),
                Some(p) if p == pos => violations.push(Violation::new(
                    "self-reference",
                    format!("{} lists itself as a precondition", step.id),
                )),
                Some(p) if p > pos => violations.push(Violation::new(
                    "forward-reference",
                    format!("{} lists precondition {} (forward reference)", step.id, pre),
                )),
                Some(_) => {}
            }
        }
    }

    violations
}

/// True when the first path component follows the `NNNN-name-K` scene
/// folder convention, e.g. `0001-office-1`.
pub fn image_path_conforms(image_path: &str) -> bool {
    let folder = match image_path.split('/').next() {
        Some(f) if !f.is_empty() => f,
        _ => return false,
    };
    let parts: Vec<&str> = folder.split('-').collect();
    if parts.len() < 3 {
        return false;
    }
    let index = parts[0];
    let suffix = parts[parts.len() - 1];
    let name = &parts[1..parts.len() - 1];
    index.len() == 4
        && index.bytes().all(|b| b.is_ascii_digit())
        && !suffix.is_empty()
        && suffix.bytes().all(|b| b.is_ascii_digit())
        && name.iter().all(|p| !p.is_empty())
}

/// Runs every invariant check over one sample and returns the full report.
pub fn validate_sample(sample: &QASample) -> ValidationReport {
    let mut violations = validate_graph(&sample.answer);
    if !image_path_conforms(&sample.image_path) {
        violations.push(Violation::new(
            "image-path-format",
            format!(
                "image path {:?} does not start with an NNNN-name-K scene folder",
                sample.image_path
            ),
        ));
    }
    ValidationReport {
        sample_id: sample.sample_id.clone(),
        violations,
    }
}
