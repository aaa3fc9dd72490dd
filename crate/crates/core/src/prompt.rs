//! Prompt templates and rendering.
//!
//! Template bodies live as plain-text files under `prompts/`, one file per
//! template id, with `{name}` placeholders. Rendering is a single-pass
//! literal substitution: bound values are never re-scanned, and nothing
//! else in the body is touched.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::graph::StepGraph;

/// The fixed set of prompts the toolkit issues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TemplateId {
    AnswerBasic,
    AnswerCot,
    AnswerPlusDepth,
    AnswerPlusSeg,
    AnswerPlusBoth,
    MatchMatrix,
    RsgarRound1,
    RsgarRoundNext,
    RsgarFinal,
}

impl TemplateId {
    pub const ALL: [TemplateId; 9] = [
        TemplateId::AnswerBasic,
        TemplateId::AnswerCot,
        TemplateId::AnswerPlusDepth,
        TemplateId::AnswerPlusSeg,
        TemplateId::AnswerPlusBoth,
        TemplateId::MatchMatrix,
        TemplateId::RsgarRound1,
        TemplateId::RsgarRoundNext,
        TemplateId::RsgarFinal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::AnswerBasic => "answer_basic",
            TemplateId::AnswerCot => "answer_cot",
            TemplateId::AnswerPlusDepth => "answer_plus_depth",
            TemplateId::AnswerPlusSeg => "answer_plus_seg",
            TemplateId::AnswerPlusBoth => "answer_plus_both",
            TemplateId::MatchMatrix => "match_matrix",
            TemplateId::RsgarRound1 => "rsgar_round1",
            TemplateId::RsgarRoundNext => "rsgar_round_next",
            TemplateId::RsgarFinal => "rsgar_final",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }

    pub fn parse(raw: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == raw)
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The few-shot answer example injected as `{example}` into every
/// answering prompt.
pub fn answer_example() -> &'static str {
    let raw = include_str!("../prompts/example_answer.json");
    raw.strip_suffix('\n').unwrap_or(raw)
}

/// The scene-graph example injected as `{example}` into the scene-graph
/// generation prompts.
pub fn scene_graph_example() -> &'static str {
    let raw = include_str!("../prompts/example_scene_graph.json");
    raw.strip_suffix('\n').unwrap_or(raw)
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unbound placeholder {{{0}}}")]
    UnboundPlaceholder(String),
    #[error("malformed placeholder near byte {0}")]
    MalformedPlaceholder(usize),
    #[error("missing template file {0}")]
    MissingTemplate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A loaded set of template bodies.
#[derive(Debug, Clone)]
pub struct PromptSet {
    bodies: BTreeMap<TemplateId, String>,
}

impl PromptSet {
    /// The templates compiled into the library.
    pub fn builtin() -> Self {
        let mut bodies = BTreeMap::new();
        bodies.insert(
            TemplateId::AnswerBasic,
            body(include_str!("../prompts/answer_basic.txt")),
        );
        bodies.insert(
            TemplateId::AnswerCot,
            body(include_str!("../prompts/answer_cot.txt")),
        );
        bodies.insert(
            TemplateId::AnswerPlusDepth,
            body(include_str!("../prompts/answer_plus_depth.txt")),
        );
        bodies.insert(
            TemplateId::AnswerPlusSeg,
            body(include_str!("../prompts/answer_plus_seg.txt")),
        );
        bodies.insert(
            TemplateId::AnswerPlusBoth,
            body(include_str!("../prompts/answer_plus_both.txt")),
        );
        bodies.insert(
            TemplateId::MatchMatrix,
            body(include_str!("../prompts/match_matrix.txt")),
        );
        bodies.insert(
            TemplateId::RsgarRound1,
            body(include_str!("../prompts/rsgar_round1.txt")),
        );
        bodies.insert(
            TemplateId::RsgarRoundNext,
            body(include_str!("../prompts/rsgar_round_next.txt")),
        );
        bodies.insert(
            TemplateId::RsgarFinal,
            body(include_str!("../prompts/rsgar_final.txt")),
        );
        PromptSet { bodies }
    }

    /// Loads all nine templates from a directory, one `<id>.txt` per id.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut bodies = BTreeMap::new();
        for id in TemplateId::ALL {
            let path = dir.join(id.file_name());
            if !path.is_file() {
                return Err(PromptError::MissingTemplate(path.display().to_string()));
            }
            bodies.insert(id, body(&std::fs::read_to_string(&path)?));
        }
        Ok(PromptSet { bodies })
    }

    pub fn body(&self, id: TemplateId) -> &str {
        &self.bodies[&id]
    }

    /// Renders a template with the given bindings. Every placeholder in the
    /// body must be bound; unused bindings are allowed.
    pub fn render(&self, id: TemplateId, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        render_body(self.body(id), bindings)
    }
}

fn body(raw: &str) -> String {
    raw.strip_suffix('\n').unwrap_or(raw).to_string()
}

/// Single-pass `{name}` substitution. Placeholder names are lowercase
/// ASCII words (`[a-z_]+`); an unbound placeholder is an error naming it.
pub fn render_body(template: &str, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            let start = i;
            while i < bytes.len() && bytes[i] != b'{' {
                i += 1;
            }
            out.push_str(&template[start..i]);
            continue;
        }
        let name_start = i + 1;
        let mut j = name_start;
        while j < bytes.len() && (bytes[j] == b'_' || bytes[j].is_ascii_lowercase()) {
            j += 1;
        }
        if j == name_start || j >= bytes.len() || bytes[j] != b'}' {
            return Err(PromptError::MalformedPlaceholder(i));
        }
        let name = &template[name_start..j];
        match bindings.iter().find(|(k, _)| *k == name) {
            Some((_, value)) => out.push_str(value),
            None => return Err(PromptError::UnboundPlaceholder(name.to_string())),
        }
        i = j + 1;
    }
    Ok(out)
}

/// Numbered step list for the matching prompt: `"1. <content>"` per line.
pub fn format_step_list(graph: &StepGraph) -> String {
    graph
        .steps()
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.content))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses a numbered step list back into its contents. Used by scripted
/// scorer backends; returns `None` when any line does not look like
/// `"K. content"`.
pub fn parse_step_list(text: &str) -> Option<Vec<String>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let (num, rest) = line.split_once(". ")?;
        if num.is_empty() || !num.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        out.push(rest.to_string());
    }
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

/// The literal preamble the scene-graph round templates use when both maps
/// are attached.
const MAP_CLAUSE_BOTH: &str = "(along with its depth map and segmentation map)";

/// Rewrites the map preamble of a scene-graph round template to match
/// which perception maps are actually attached. With both maps enabled the
/// body is returned unchanged.
pub fn apply_map_variant(template_body: &str, use_depth: bool, use_seg: bool) -> String {
    match (use_depth, use_seg) {
        (true, true) => template_body.to_string(),
        (true, false) => template_body.replace(MAP_CLAUSE_BOTH, "(along with its depth map)"),
        (false, true) => {
            template_body.replace(MAP_CLAUSE_BOTH, "(along with its segmentation map)")
        }
        (false, false) => {
            template_body.replace(&format!(" {MAP_CLAUSE_BOTH}"), "")
        }
    }
}
