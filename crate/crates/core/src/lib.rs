//! Toolkit for evaluating multi-step, precondition-annotated answers to
//! scene questions.
//!
//! The pieces, bottom to top:
//!
//! * [`graph`] — the step-dependency data model and corpus validation.
//! * [`corpus`] — corpus files: fault-tolerant loading, canonical writing.
//! * [`prompt`] / [`parse`] — prompt templates and strict parsing of
//!   tagged model output.
//! * [`matching`] — the binary matching matrix and its maximum one-to-one
//!   filtering, with an exhaustive oracle.
//! * [`metrics`] — content/precondition recall, precision, F1, alignment
//!   statistics, and grouped breakdowns.
//! * [`augment`] — subgraph-extraction and graph-expansion augmentation.
//! * [`gateway`] — model and perception backends with retries, bounded
//!   concurrency, and a record/replay cache.
//! * [`rsgar`] — recursive scene-graph assisted reasoning.
//! * [`synthetic`] — seeded synthetic scenes and the closed-form noise
//!   oracle behind the offline test harness.
//! * [`harness`] — run orchestration, score-table alignment, reports.

pub mod augment;
pub mod corpus;
pub mod fixtures;
pub mod gateway;
pub mod graph;
pub mod harness;
pub mod matching;
pub mod metrics;
pub mod parse;
pub mod prompt;
pub mod rsgar;
pub mod synthetic;

pub use corpus::{load_corpus, write_corpus, CorpusLoad};
pub use gateway::{
    BackendConfig, CacheKey, Gateway, GatewayError, ImagePayload, Mode, ModelRequest,
    ModelResponse, Part,
};
pub use graph::{
    validate_sample, AnnotationSource, QASample, Step, StepGraph, StepId, ValidationReport,
};
pub use harness::{evaluate, align, PipelineKind, RunConfig, RunRecord, ScoreTable};
pub use matching::{brute_force_max_matching, filter_matrix, Assignment, MatchMatrix};
pub use metrics::{
    aggregate, f1, tally_sample, AlignmentStats, BreakdownKey, CorpusMetrics, SampleTallies,
};
pub use rsgar::{RsgarConfig, RsgarRunner, SceneGraphState, SceneObject, SceneRelation};
pub use synthetic::{generate_corpus, generate_scene, perturb, NoiseSpec, SyntheticScene};
