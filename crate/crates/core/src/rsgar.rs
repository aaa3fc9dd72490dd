//! Recursive scene-graph assisted reasoning: iterative frontier-expanding
//! scene-graph construction, then graph-conditioned answering.
//!
//! Round 1 identifies the task's source objects and their directly
//! related targets. Each later round re-prompts with the accumulated
//! history, treating the previous round's new targets as the sources to
//! expand. The loop stops when the frontier empties or the round cap `T`
//! is reached, and the full accumulated triple list conditions the final
//! answer.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::gateway::{
    AnswerExtras, CallRecord, Gateway, GatewayError, ImagePayload, Mode, PerceptionKind,
};
use crate::graph::StepGraph;
use crate::parse::extract_tagged;
use crate::prompt::{apply_map_variant, render_body, scene_graph_example, TemplateId};

/// A node of the scene graph: canonical name plus free-text descriptors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub attributes: Vec<String>,
}

/// A directed spatial/functional relation between two named objects.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SceneRelation {
    pub source: String,
    pub relation: String,
    pub target: String,
}

/// Accumulated scene graph plus the expansion bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraphState {
    /// Discovery order; names unique after normalization.
    pub objects: Vec<SceneObject>,
    /// Discovery order; triples unique.
    pub relations: Vec<SceneRelation>,
    /// Names already expanded as sources.
    pub visited: BTreeSet<String>,
    /// Names pending expansion. Always disjoint from `visited`.
    pub frontier: BTreeSet<String>,
    /// Generation rounds executed so far.
    pub round: u32,
    /// Raw `<ans>` payloads of previous rounds, fed back as history.
    pub history: Vec<String>,
}

impl SceneGraphState {
    fn object_names(&self) -> BTreeSet<String> {
        self.objects.iter().map(|o| o.name.clone()).collect()
    }

    fn merge_object(&mut self, name: &str, attributes: &[String]) {
        if let Some(existing) = self.objects.iter_mut().find(|o| o.name == name) {
            for attr in attributes {
                if !existing.attributes.contains(attr) {
                    existing.attributes.push(attr.clone());
                }
            }
        } else {
            self.objects.push(SceneObject {
                name: name.to_string(),
                attributes: attributes.to_vec(),
            });
        }
    }
}

/// Loop knobs: the round cap `T` and which perception maps to attach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsgarConfig {
    pub max_rounds: u32,
    pub use_depth: bool,
    pub use_seg: bool,
}

impl Default for RsgarConfig {
    fn default() -> Self {
        RsgarConfig {
            max_rounds: 5,
            use_depth: true,
            use_seg: true,
        }
    }
}

impl RsgarConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_rounds < 1 {
            return Err(GatewayError::Config("T must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-round trace entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u32,
    pub calls: Vec<CallRecord>,
    pub new_objects: usize,
    pub new_relations: usize,
    pub warnings: Vec<String>,
    pub time_seconds: f64,
}

/// Full per-sample trace: every call key, per-round time, and warnings.
/// In replay mode times derive from recorded latencies, keeping traces
/// byte-identical across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub rounds: Vec<RoundTrace>,
    pub perception_calls: Vec<CallRecord>,
    pub final_calls: Vec<CallRecord>,
    pub fallback_used: bool,
    pub warnings: Vec<String>,
    pub total_seconds: f64,
}

/// Result of one full run: the scene graph, the prediction (or the
/// empty-prediction sentinel), and the trace.
#[derive(Debug, Clone)]
pub struct RsgarOutcome {
    pub state: SceneGraphState,
    pub prediction: Option<StepGraph>,
    pub trace: RunTrace,
    pub failure: Option<String>,
}

/// Node identity: lower-cased, leading article stripped, whitespace
/// collapsed. Without this the visited set would never converge — models
/// restate "the tray" and "Tray" freely.
pub fn normalize_object_name(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    let without_article = match words.split_first() {
        Some((&"a" | &"an" | &"the", rest)) if !rest.is_empty() => rest,
        _ => &words[..],
    };
    without_article.join(" ")
}

/// The triple list in the prompt's JSON shape, one triple per line.
pub fn serialize_scene_graph(relations: &[SceneRelation]) -> String {
    if relations.is_empty() {
        return "[]".to_string();
    }
    let lines: Vec<String> = relations
        .iter()
        .map(|r| {
            format!(
                "    {{\"source\": {}, \"relation\": {}, \"target\": {}}}",
                serde_json::to_string(&r.source).expect("string"),
                serde_json::to_string(&r.relation).expect("string"),
                serde_json::to_string(&r.target).expect("string"),
            )
        })
        .collect();
    format!("[\n{}\n]", lines.join(",\n"))
}

#[derive(Debug, Deserialize)]
struct RawSceneObject {
    name: String,
    #[serde(default)]
    attributes: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawRoundOutput {
    source_objects: Vec<RawSceneObject>,
    scene_graph: Vec<RawTriple>,
}

#[derive(Debug, Deserialize)]
struct RawTriple {
    source: String,
    relation: String,
    target: String,
}

fn parse_round_payload(payload: &str) -> Result<RawRoundOutput, String> {
    serde_json::from_str(payload.trim()).map_err(|e| e.to_string())
}

/// Drives the loop for one sample against a configured gateway.
pub struct RsgarRunner<'a> {
    pub gateway: &'a Gateway,
    pub backend_id: &'a str,
    pub config: RsgarConfig,
}

struct RoundOutcome {
    state_changed: bool,
    trace: RoundTrace,
}

impl<'a> RsgarRunner<'a> {
    pub fn new(gateway: &'a Gateway, backend_id: &'a str, config: RsgarConfig) -> Self {
        RsgarRunner {
            gateway,
            backend_id,
            config,
        }
    }

    fn render_round(
        &self,
        template: TemplateId,
        bindings: &[(&str, &str)],
    ) -> Result<String, GatewayError> {
        let body = apply_map_variant(
            self.gateway.prompts().body(template),
            self.config.use_depth,
            self.config.use_seg,
        );
        Ok(render_body(&body, bindings)?)
    }

    fn round_images(
        &self,
        image: &ImagePayload,
        maps: &PerceptionMaps,
    ) -> Vec<ImagePayload> {
        let mut images = vec![image.clone()];
        if let Some(depth) = &maps.depth {
            images.push(depth.clone());
        }
        if let Some(seg) = &maps.segmentation {
            images.push(seg.clone());
        }
        images
    }

    /// Issues one generation prompt and folds the reply into the state.
    /// `requested_frontier` is empty for round 1 (sources come from the
    /// model); later rounds only accept triples sourced on the frontier.
    fn generation_round(
        &self,
        image: &ImagePayload,
        maps: &PerceptionMaps,
        state: &mut SceneGraphState,
        question: &str,
    ) -> Result<RoundOutcome, GatewayError> {
        let round_number = state.round + 1;
        let first = round_number == 1;
        let history = state.history.join("\n");
        let prompt = if first {
            self.render_round(
                TemplateId::RsgarRound1,
                &[("example", scene_graph_example()), ("question", question)],
            )?
        } else {
            self.render_round(
                TemplateId::RsgarRoundNext,
                &[
                    ("history_outputs", history.as_str()),
                    ("example", scene_graph_example()),
                ],
            )?
        };
        let request =
            self.gateway
                .request_for(self.backend_id, prompt, self.round_images(image, maps))?;

        let mut calls = Vec::new();
        let mut warnings = Vec::new();
        let mut seconds = 0.0;
        let budget = self.gateway_parse_budget();
        let mut parsed: Option<(RawRoundOutput, String)> = None;
        let mut last_error = String::new();
        for attempt in 1..=budget {
            let response = self.gateway.complete(&request)?;
            seconds += response.latency_seconds;
            calls.push(CallRecord {
                key: request.cache_key().0,
                purpose: format!("rsgar:round{round_number}"),
                attempt,
                latency_seconds: response.latency_seconds,
            });
            match extract_tagged(&response.text)
                .map_err(|e| e.to_string())
                .and_then(|t| parse_round_payload(&t.payload).map(|o| (o, t.payload)))
            {
                Ok(output) => {
                    parsed = Some(output);
                    break;
                }
                Err(e) => last_error = e,
            }
        }

        let Some((output, payload)) = parsed else {
            return Ok(RoundOutcome {
                state_changed: false,
                trace: RoundTrace {
                    round: round_number,
                    calls,
                    new_objects: 0,
                    new_relations: 0,
                    warnings: vec![format!("round output unparseable: {last_error}")],
                    time_seconds: seconds,
                },
            });
        };

        let known_before = state.object_names();
        let objects_before = state.objects.len();
        let relations_before = state.relations.len();

        // Declared sources: for round 1 they define the expansion roots;
        // for later rounds the requested frontier is authoritative.
        let mut declared: Vec<(String, Vec<String>)> = Vec::new();
        for raw in &output.source_objects {
            let name = normalize_object_name(&raw.name);
            if name.is_empty() {
                warnings.push("dropped source object with empty name".to_string());
                continue;
            }
            if !declared.iter().any(|(n, _)| *n == name) {
                declared.push((name, raw.attributes.clone()));
            }
        }
        let allowed_sources: BTreeSet<String> = if first {
            declared.iter().map(|(n, _)| n.clone()).collect()
        } else {
            state.frontier.clone()
        };

        for (name, attributes) in &declared {
            if first || allowed_sources.contains(name) {
                state.merge_object(name, attributes);
            }
        }

        let mut kept_targets: Vec<String> = Vec::new();
        for triple in &output.scene_graph {
            let source = normalize_object_name(&triple.source);
            let target = normalize_object_name(&triple.target);
            if source.is_empty() || target.is_empty() {
                warnings.push("dropped triple with empty endpoint".to_string());
                continue;
            }
            if source == target {
                warnings.push(format!("dropped self-relation on {source:?}"));
                continue;
            }
            if !allowed_sources.contains(&source) {
                warnings.push(format!(
                    "dropped triple sourced off the requested set: {source:?}"
                ));
                continue;
            }
            let relation = SceneRelation {
                source: source.clone(),
                relation: triple.relation.trim().to_string(),
                target: target.clone(),
            };
            if state.relations.contains(&relation) {
                continue;
            }
            state.merge_object(&source, &[]);
            state.merge_object(&target, &[]);
            state.relations.push(relation);
            kept_targets.push(target);
        }

        // Sources presented this round are consumed either way; the next
        // frontier is exactly the names first seen in this round's kept
        // targets.
        if first {
            state.visited = allowed_sources;
        } else {
            let consumed: Vec<String> = state.frontier.iter().cloned().collect();
            state.visited.extend(consumed);
        }
        state.frontier = kept_targets
            .into_iter()
            .filter(|t| !known_before.contains(t) && !state.visited.contains(t))
            .collect();
        state.round = round_number;
        state.history.push(payload);

        Ok(RoundOutcome {
            state_changed: true,
            trace: RoundTrace {
                round: round_number,
                calls,
                new_objects: state.objects.len() - objects_before,
                new_relations: state.relations.len() - relations_before,
                warnings,
                time_seconds: seconds,
            },
        })
    }

    fn gateway_parse_budget(&self) -> u32 {
        self.gateway.parse_retry_budget()
    }

    /// Round 1: source identification plus the first scene graph.
    pub fn round_one(
        &self,
        image: &ImagePayload,
        maps: &PerceptionMaps,
        question: &str,
    ) -> Result<(Vec<SceneObject>, SceneGraphState, RoundTrace), GatewayError> {
        let mut state = SceneGraphState {
            objects: Vec::new(),
            relations: Vec::new(),
            visited: BTreeSet::new(),
            frontier: BTreeSet::new(),
            round: 0,
            history: Vec::new(),
        };
        let outcome = self.generation_round(image, maps, &mut state, question)?;
        if !outcome.state_changed {
            return Err(GatewayError::Unscorable {
                attempts: self.gateway_parse_budget(),
                last: outcome
                    .trace
                    .warnings
                    .first()
                    .cloned()
                    .unwrap_or_else(|| "round 1 failed".into()),
            });
        }
        let sources: Vec<SceneObject> = state
            .objects
            .iter()
            .filter(|o| state.visited.contains(&o.name))
            .cloned()
            .collect();
        Ok((sources, state, outcome.trace))
    }

    /// One follow-up round over a non-empty frontier.
    pub fn next_round(
        &self,
        image: &ImagePayload,
        maps: &PerceptionMaps,
        state: &mut SceneGraphState,
    ) -> Result<RoundTrace, GatewayError> {
        let outcome = self.generation_round(image, maps, state, "")?;
        if !outcome.state_changed {
            // Parse failure after retries: stop expanding, keep the graph.
            let mut trace = outcome.trace;
            trace
                .warnings
                .push("expansion terminated early on parse failure".to_string());
            state.frontier.clear();
            return Ok(trace);
        }
        Ok(outcome.trace)
    }

    /// The full loop: perception, round 1, frontier expansion, final
    /// graph-conditioned answer. A round-1 failure falls back to the plain
    /// answer path so the sample always yields a scorable outcome.
    pub fn run(
        &self,
        image: &ImagePayload,
        question: &str,
    ) -> Result<RsgarOutcome, GatewayError> {
        self.config.validate()?;
        let wall = Instant::now();
        let mut perception_calls = Vec::new();
        let mut warnings = Vec::new();

        let mut maps = PerceptionMaps::default();
        if self.config.use_depth {
            let (payload, call) = self.gateway.perceive(image, PerceptionKind::Depth)?;
            maps.depth = Some(payload);
            perception_calls.push(call);
        }
        if self.config.use_seg {
            let (payload, call) = self.gateway.perceive(image, PerceptionKind::Segmentation)?;
            maps.segmentation = Some(payload);
            perception_calls.push(call);
        }

        let mut rounds = Vec::new();
        let (state, fallback_answer) = match self.round_one(image, &maps, question) {
            Ok((_sources, mut state, trace)) => {
                rounds.push(trace);
                while !state.frontier.is_empty() && state.round < self.config.max_rounds {
                    let trace = self.next_round(image, &maps, &mut state)?;
                    rounds.push(trace);
                }
                (state, None)
            }
            Err(GatewayError::Unscorable { last, .. }) => {
                warnings.push(format!("round 1 failed ({last}); falling back to the plain answer path"));
                let fallback = self.gateway.answer_question(
                    self.backend_id,
                    image,
                    question,
                    TemplateId::AnswerBasic,
                    &AnswerExtras::default(),
                )?;
                (
                    SceneGraphState {
                        objects: Vec::new(),
                        relations: Vec::new(),
                        visited: BTreeSet::new(),
                        frontier: BTreeSet::new(),
                        round: 0,
                        history: Vec::new(),
                    },
                    Some(fallback),
                )
            }
            Err(e) => return Err(e),
        };

        let (prediction, final_calls, failure, fallback_used) = match fallback_answer {
            Some(outcome) => (outcome.prediction, outcome.calls, outcome.failure, true),
            None => {
                let scene_graph = serialize_scene_graph(&state.relations);
                let outcome = self.gateway.answer_question(
                    self.backend_id,
                    image,
                    question,
                    TemplateId::RsgarFinal,
                    &AnswerExtras {
                        scene_graph: Some(scene_graph),
                        ..AnswerExtras::default()
                    },
                )?;
                (outcome.prediction, outcome.calls, outcome.failure, false)
            }
        };

        let latency_total: f64 = rounds.iter().map(|r| r.time_seconds).sum::<f64>()
            + perception_calls.iter().map(|c| c.latency_seconds).sum::<f64>()
            + final_calls.iter().map(|c| c.latency_seconds).sum::<f64>();
        let total_seconds = if self.gateway.mode() == Mode::Replay {
            latency_total
        } else {
            wall.elapsed().as_secs_f64()
        };

        Ok(RsgarOutcome {
            state,
            prediction,
            trace: RunTrace {
                rounds,
                perception_calls,
                final_calls,
                fallback_used,
                warnings,
                total_seconds,
            },
            failure,
        })
    }
}

/// Perception payloads attached to generation rounds.
#[derive(Debug, Clone, Default)]
pub struct PerceptionMaps {
    pub depth: Option<ImagePayload>,
    pub segmentation: Option<ImagePayload>,
}
