//! Evaluation orchestration: corpus → answers → scoring → matching →
//! tallies → reports, with sample-level parallelism and deterministic
//! replay.

pub mod report;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusError};
use crate::gateway::scripted::ScriptedBackend;
use crate::gateway::{
    AnswerExtras, CallRecord, Gateway, GatewayError, ImagePayload, Mode, PerceptionKind,
};
use crate::graph::{QASample, StepGraph};
use crate::matching::{filter_matrix, optimum_is_unique};
use crate::metrics::{
    aggregate, aggregate_macro, breakdown, cosine, mae, mean_predicted_steps, pearson,
    tally_sample, AlignmentStats, BreakdownKey, BreakdownRow, CorpusMetrics, MetricsError,
    SampleTallies,
};
use crate::prompt::{answer_example, PromptSet, TemplateId};
use crate::rsgar::{RsgarConfig, RsgarRunner, RunTrace};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("score table error: {0}")]
    Table(String),
}

/// Which answering pipeline a run uses. Values map one-to-one onto the
/// answer templates; `Rsgar` carries its loop knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PipelineKind {
    Basic,
    Cot,
    PlusDepth,
    PlusSeg,
    PlusBoth,
    Rsgar(RsgarConfig),
}

impl PipelineKind {
    pub fn parse(raw: &str, rsgar: RsgarConfig) -> Option<Self> {
        match raw {
            "basic" => Some(PipelineKind::Basic),
            "cot" => Some(PipelineKind::Cot),
            "plus_depth" => Some(PipelineKind::PlusDepth),
            "plus_seg" => Some(PipelineKind::PlusSeg),
            "plus_both" => Some(PipelineKind::PlusBoth),
            "rsgar" => Some(PipelineKind::Rsgar(rsgar)),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            PipelineKind::Basic => "basic".into(),
            PipelineKind::Cot => "cot".into(),
            PipelineKind::PlusDepth => "plus_depth".into(),
            PipelineKind::PlusSeg => "plus_seg".into(),
            PipelineKind::PlusBoth => "plus_both".into(),
            PipelineKind::Rsgar(cfg) => format!(
                "rsgar(T={},depth={},seg={})",
                cfg.max_rounds, cfg.use_depth, cfg.use_seg
            ),
        }
    }

    /// The answer template this pipeline renders; `None` for the
    /// multi-round scene-graph pipeline.
    pub fn answer_template(&self) -> Option<TemplateId> {
        match self {
            PipelineKind::Basic => Some(TemplateId::AnswerBasic),
            PipelineKind::Cot => Some(TemplateId::AnswerCot),
            PipelineKind::PlusDepth => Some(TemplateId::AnswerPlusDepth),
            PipelineKind::PlusSeg => Some(TemplateId::AnswerPlusSeg),
            PipelineKind::PlusBoth => Some(TemplateId::AnswerPlusBoth),
            PipelineKind::Rsgar(_) => None,
        }
    }

    fn needs_depth(&self) -> bool {
        matches!(self, PipelineKind::PlusDepth | PipelineKind::PlusBoth)
            || matches!(self, PipelineKind::Rsgar(cfg) if cfg.use_depth)
    }

    fn needs_seg(&self) -> bool {
        matches!(self, PipelineKind::PlusSeg | PipelineKind::PlusBoth)
            || matches!(self, PipelineKind::Rsgar(cfg) if cfg.use_seg)
    }
}

/// Everything one evaluation run needs beyond the gateway itself.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub output: PathBuf,
    pub answer_backend: String,
    pub scorer_backend: String,
    pub pipeline: PipelineKind,
    pub concurrency: usize,
    /// Optional root for resolving image paths to real files. Without it,
    /// images become deterministic path-payloads, which is what offline
    /// fixtures use.
    pub images_dir: Option<PathBuf>,
    /// Evaluate only N samples chosen with the given seed.
    pub sample: Option<(usize, u64)>,
    /// Also emit macro-averaged metrics next to the micro defaults.
    pub macro_average: bool,
}

impl RunConfig {
    pub fn new(corpus: PathBuf, output: PathBuf) -> Self {
        RunConfig {
            corpus,
            output,
            answer_backend: "answer".to_string(),
            scorer_backend: "scorer".to_string(),
            pipeline: PipelineKind::Basic,
            concurrency: 4,
            images_dir: None,
            sample: None,
            macro_average: false,
        }
    }
}

/// Per-sample slice of a run record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleResult {
    pub sample_id: String,
    pub prediction: Option<StepGraph>,
    pub tallies: SampleTallies,
    pub empty_prediction: bool,
    pub multiple_optima: bool,
    pub failure: Option<String>,
    pub trace_keys: Vec<String>,
    pub time_seconds: f64,
}

/// Full per-sample trace, persisted under `traces/`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleTrace {
    pub sample_id: String,
    pub pipeline: String,
    pub calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rsgar: Option<RunTrace>,
    pub warnings: Vec<String>,
    pub empty_prediction: bool,
    pub failure: Option<String>,
    pub time_seconds: f64,
}

/// The complete outcome of one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub pipeline: String,
    pub mode: String,
    pub metrics: CorpusMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_metrics: Option<CorpusMetrics>,
    pub breakdowns: BTreeMap<String, Vec<BreakdownRow>>,
    pub mean_predicted_steps: Option<f64>,
    pub empty_predictions: usize,
    pub failed_samples: Vec<String>,
    pub multi_optima_samples: usize,
    pub rejected_samples: Vec<String>,
    pub total_seconds: f64,
    pub samples: Vec<SampleResult>,
    #[serde(skip)]
    pub traces: Vec<SampleTrace>,
}

/// Picks `n` of `len` indices with a seeded partial shuffle, preserving
/// original order.
pub fn subsample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n.min(len) {
        let j = i + (rng.next_u64() as usize) % (len - i);
        indices.swap(i, j);
    }
    let mut kept = indices[..n.min(len)].to_vec();
    kept.sort_unstable();
    kept
}

fn media_type_for(path: &str) -> &'static str {
    let lower = path.to_ascii_lowercase();
    if lower.ends_with(".png") {
        "image/png"
    } else if lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
        "image/jpeg"
    } else if lower.ends_with(".webp") {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}

fn resolve_image(cfg: &RunConfig, sample: &QASample) -> Result<ImagePayload, HarnessError> {
    match &cfg.images_dir {
        Some(root) => {
            let path = root.join(&sample.image_path);
            let data = std::fs::read(&path).map_err(|e| {
                HarnessError::Config(format!("cannot read image {}: {e}", path.display()))
            })?;
            Ok(ImagePayload::new(media_type_for(&sample.image_path), data))
        }
        None => Ok(ImagePayload::new(
            "text/x-image-path",
            sample.image_path.clone().into_bytes(),
        )),
    }
}

fn parallel_map<T, F>(items: usize, concurrency: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..items).map(|_| Mutex::new(None)).collect();
    let workers = concurrency.max(1).min(items.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items {
                    break;
                }
                let value = f(i);
                *slots[i].lock().expect("result slot") = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("slot filled"))
        .collect()
}

struct SampleOutcome {
    prediction: Option<StepGraph>,
    calls: Vec<CallRecord>,
    rsgar: Option<RunTrace>,
    warnings: Vec<String>,
    failure: Option<String>,
}

fn run_sample(
    gateway: &Gateway,
    cfg: &RunConfig,
    sample: &QASample,
) -> Result<SampleOutcome, HarnessError> {
    let image = resolve_image(cfg, sample)?;

    if let PipelineKind::Rsgar(rsgar_cfg) = cfg.pipeline {
        let runner = RsgarRunner::new(gateway, &cfg.answer_backend, rsgar_cfg);
        let outcome = runner.run(&image, &sample.question)?;
        let mut calls = outcome.trace.perception_calls.clone();
        for round in &outcome.trace.rounds {
            calls.extend(round.calls.iter().cloned());
        }
        calls.extend(outcome.trace.final_calls.iter().cloned());
        return Ok(SampleOutcome {
            prediction: outcome.prediction,
            calls,
            warnings: outcome.trace.warnings.clone(),
            rsgar: Some(outcome.trace),
            failure: outcome.failure,
        });
    }

    let template = cfg.pipeline.answer_template().expect("non-rsgar pipeline");
    let mut calls = Vec::new();
    let mut extras = AnswerExtras::default();
    if cfg.pipeline.needs_depth() {
        let (payload, call) = gateway.perceive(&image, PerceptionKind::Depth)?;
        extras.depth = Some(payload);
        calls.push(call);
    }
    if cfg.pipeline.needs_seg() {
        let (payload, call) = gateway.perceive(&image, PerceptionKind::Segmentation)?;
        extras.segmentation = Some(payload);
        calls.push(call);
    }
    let outcome = gateway.answer_question(
        &cfg.answer_backend,
        &image,
        &sample.question,
        template,
        &extras,
    )?;
    calls.extend(outcome.calls.iter().cloned());
    Ok(SampleOutcome {
        prediction: outcome.prediction,
        calls,
        rsgar: None,
        warnings: Vec::new(),
        failure: outcome.failure,
    })
}

fn score_sample(
    gateway: &Gateway,
    cfg: &RunConfig,
    sample: &QASample,
    prediction: &StepGraph,
    calls: &mut Vec<CallRecord>,
) -> Result<(SampleTallies, bool), GatewayError> {
    let image = ImagePayload::new(
        "text/x-image-path",
        sample.image_path.clone().into_bytes(),
    );
    let image = match &cfg.images_dir {
        Some(root) => {
            let path = root.join(&sample.image_path);
            match std::fs::read(&path) {
                Ok(data) => ImagePayload::new(media_type_for(&sample.image_path), data),
                Err(_) => image,
            }
        }
        None => image,
    };
    let (matrix, score_calls) =
        gateway.score_pair(&cfg.scorer_backend, &image, &sample.answer, prediction)?;
    calls.extend(score_calls);
    let assignment = filter_matrix(&matrix);
    let unique = optimum_is_unique(&matrix, &assignment);
    let tallies = tally_sample(&sample.answer, prediction, &assignment)
        .expect("assignment produced by filter_matrix is in range");
    Ok((tallies, !unique))
}

fn validate_config(gateway: &Gateway, cfg: &RunConfig) -> Result<(), HarnessError> {
    if cfg.concurrency == 0 {
        return Err(HarnessError::Config("concurrency must be at least 1".into()));
    }
    if let PipelineKind::Rsgar(rsgar_cfg) = &cfg.pipeline {
        rsgar_cfg.validate()?;
    }
    if gateway.mode() != Mode::Replay {
        for id in [&cfg.answer_backend, &cfg.scorer_backend] {
            gateway.backend_config(id)?;
        }
        if cfg.pipeline.needs_depth() && !gateway.has_perception(PerceptionKind::Depth) {
            return Err(HarnessError::Config(
                "pipeline needs a depth perception backend".into(),
            ));
        }
        if cfg.pipeline.needs_seg() && !gateway.has_perception(PerceptionKind::Segmentation) {
            return Err(HarnessError::Config(
                "pipeline needs a segmentation perception backend".into(),
            ));
        }
    }
    Ok(())
}

/// Runs the full three-step evaluation over a corpus and writes every
/// artifact under the output directory. In replay mode the entire output
/// is a pure function of the corpus and the cache.
pub fn evaluate(gateway: &Gateway, cfg: &RunConfig) -> Result<RunRecord, HarnessError> {
    validate_config(gateway, cfg)?;
    let load = corpus::load_corpus(&cfg.corpus)?;
    let rejected_samples: Vec<String> =
        load.rejected().map(|r| r.sample_id.clone()).collect();
    let mut samples = load.samples;
    if samples.is_empty() {
        return Err(HarnessError::Config("corpus has no valid samples".into()));
    }
    if let Some((n, seed)) = cfg.sample {
        let kept = subsample_indices(samples.len(), n, seed);
        samples = kept.into_iter().map(|i| samples[i].clone()).collect();
    }

    let results: Vec<(SampleResult, SampleTrace)> =
        parallel_map(samples.len(), cfg.concurrency, |i| {
            let sample = &samples[i];
            let (outcome, hard_failure) = match run_sample(gateway, cfg, sample) {
                Ok(outcome) => (outcome, None),
                Err(e) => (
                    SampleOutcome {
                        prediction: None,
                        calls: Vec::new(),
                        rsgar: None,
                        warnings: Vec::new(),
                        failure: None,
                    },
                    Some(e.to_string()),
                ),
            };

            let mut calls = outcome.calls;
            let mut warnings = outcome.warnings;
            let mut failure = hard_failure.or(outcome.failure);
            let mut multiple_optima = false;
            let tallies = match &outcome.prediction {
                Some(prediction) if failure.is_none() => {
                    match score_sample(gateway, cfg, sample, prediction, &mut calls) {
                        Ok((tallies, multi)) => {
                            multiple_optima = multi;
                            tallies
                        }
                        Err(e) => {
                            failure = Some(e.to_string());
                            warnings.push("scoring failed; scored as empty prediction".into());
                            SampleTallies::empty_prediction(&sample.answer)
                        }
                    }
                }
                _ => SampleTallies::empty_prediction(&sample.answer),
            };

            let empty_prediction = outcome.prediction.is_none() || failure.is_some();
            let time_seconds: f64 = calls.iter().map(|c| c.latency_seconds).sum();
            let result = SampleResult {
                sample_id: sample.sample_id.clone(),
                prediction: outcome.prediction.clone(),
                tallies,
                empty_prediction,
                multiple_optima,
                failure: failure.clone(),
                trace_keys: calls.iter().map(|c| c.key.clone()).collect(),
                time_seconds,
            };
            let trace = SampleTrace {
                sample_id: sample.sample_id.clone(),
                pipeline: cfg.pipeline.label(),
                calls,
                rsgar: outcome.rsgar,
                warnings,
                empty_prediction,
                failure,
                time_seconds,
            };
            (result, trace)
        });

    let (sample_results, traces): (Vec<SampleResult>, Vec<SampleTrace>) =
        results.into_iter().unzip();

    let tallies: Vec<SampleTallies> = sample_results.iter().map(|r| r.tallies).collect();
    let metrics = aggregate(&tallies)?;
    let macro_metrics = if cfg.macro_average {
        Some(aggregate_macro(&tallies)?)
    } else {
        None
    };

    let paired: Vec<(&QASample, SampleTallies)> = samples
        .iter()
        .zip(tallies.iter().copied())
        .collect();
    let mut breakdowns = BTreeMap::new();
    for key in BreakdownKey::ALL {
        breakdowns.insert(key.as_str().to_string(), breakdown(&paired, key));
    }

    let predictions: Vec<&StepGraph> = sample_results
        .iter()
        .filter_map(|r| r.prediction.as_ref())
        .collect();
    let mean_steps = if predictions.is_empty() {
        None
    } else {
        Some(mean_predicted_steps(&predictions)?)
    };

    let record = RunRecord {
        pipeline: cfg.pipeline.label(),
        mode: gateway.mode().as_str().to_string(),
        metrics,
        macro_metrics,
        breakdowns,
        mean_predicted_steps: mean_steps,
        empty_predictions: sample_results.iter().filter(|r| r.empty_prediction).count(),
        failed_samples: sample_results
            .iter()
            .filter(|r| r.failure.is_some())
            .map(|r| r.sample_id.clone())
            .collect(),
        multi_optima_samples: sample_results.iter().filter(|r| r.multiple_optima).count(),
        rejected_samples,
        total_seconds: sample_results.iter().map(|r| r.time_seconds).sum(),
        samples: sample_results,
        traces,
    };

    report::write_reports(&record, &cfg.output)?;
    Ok(record)
}

/// Two-column score table: model name → (F_c, F_p), percentage scale,
/// UNDEFINED cells as `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub rows: BTreeMap<String, (Option<f64>, Option<f64>)>,
}

impl ScoreTable {
    /// Parses `model,f_c,f_p` CSV (header required, `-` or empty for
    /// UNDEFINED).
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| HarnessError::Table("empty score table".into()))?;
        if header.trim() != "model,f_c,f_p" {
            return Err(HarnessError::Table(format!(
                "expected header \"model,f_c,f_p\", got {header:?}"
            )));
        }
        let mut rows = BTreeMap::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(HarnessError::Table(format!(
                    "line {}: expected 3 fields, got {}",
                    ln + 2,
                    fields.len()
                )));
            }
            let cell = |raw: &str| -> Result<Option<f64>, HarnessError> {
                let raw = raw.trim();
                if raw.is_empty() || raw == "-" {
                    return Ok(None);
                }
                raw.parse::<f64>()
                    .map(Some)
                    .map_err(|e| HarnessError::Table(format!("line {}: {e}", ln + 2)))
            };
            rows.insert(
                fields[0].trim().to_string(),
                (cell(fields[1])?, cell(fields[2])?),
            );
        }
        Ok(ScoreTable { rows })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        Ok(Self::parse(&std::fs::read_to_string(path)?)?)
    }
}

/// Aligns two score tables over their common model names (sorted order):
/// Pearson per metric column, cosine similarity and mean absolute error
/// over the concatenated (F_c, F_p) vectors. UNDEFINED cells drop
/// pairwise. `content_only` restricts s and Δ to the F_c column.
pub fn align(
    a: &ScoreTable,
    b: &ScoreTable,
    content_only: bool,
) -> Result<AlignmentStats, HarnessError> {
    let common: Vec<&String> = a.rows.keys().filter(|k| b.rows.contains_key(*k)).collect();
    if common.len() < 2 {
        return Err(HarnessError::Table(format!(
            "need at least 2 common model names, got {}",
            common.len()
        )));
    }

    let mut fc_a = Vec::new();
    let mut fc_b = Vec::new();
    let mut fp_a = Vec::new();
    let mut fp_b = Vec::new();
    for name in &common {
        let (ac, ap) = a.rows[*name];
        let (bc, bp) = b.rows[*name];
        if let (Some(x), Some(y)) = (ac, bc) {
            fc_a.push(x);
            fc_b.push(y);
        }
        if let (Some(x), Some(y)) = (ap, bp) {
            fp_a.push(x);
            fp_b.push(y);
        }
    }

    let rho = |x: &[f64], y: &[f64]| -> Option<f64> {
        if x.len() < 2 {
            None
        } else {
            pearson(x, y).ok().flatten()
        }
    };
    let rho_c = rho(&fc_a, &fc_b);
    let rho_p = rho(&fp_a, &fp_b);

    let (mut va, mut vb) = (fc_a.clone(), fc_b.clone());
    if !content_only {
        va.extend(fp_a.iter().copied());
        vb.extend(fp_b.iter().copied());
    }
    if va.is_empty() {
        return Err(HarnessError::Table(
            "no defined score pairs to align".into(),
        ));
    }
    let s = cosine(&va, &vb)?;
    let delta = mae(&va, &vb)?;
    Ok(AlignmentStats {
        rho_c,
        rho_p,
        s,
        delta,
    })
}

/// Renders the answer-template prompt for every sample and scripts the
/// given predictions behind it, keyed on the sample's image so shared
/// question texts stay distinct; matching prompts are answered with the
/// exact-equality matrix. `None` predictions answer with untagged text, so
/// the pipeline exercises its empty-prediction path.
///
/// Scripted runs resolve images as path payloads (no `images_dir`) and
/// use the deterministic perception stub for map-augmented templates.
pub fn scripted_backend_for(
    samples: &[QASample],
    predictions: &BTreeMap<String, Option<StepGraph>>,
    prompts: &PromptSet,
    template: TemplateId,
) -> Result<ScriptedBackend, HarnessError> {
    use crate::gateway::scripted::StubPerception;
    use crate::gateway::PerceptionBackend;

    let backend = ScriptedBackend::new(true);
    for sample in samples {
        let prompt = prompts
            .render(
                template,
                &[
                    ("question", sample.question.as_str()),
                    ("example", answer_example()),
                ],
            )
            .map_err(GatewayError::Prompt)?;
        let response = match predictions.get(&sample.sample_id) {
            Some(Some(graph)) => format!("<ans>{}</ans>", corpus::answer_to_json(graph)),
            Some(None) => "the model produced nothing usable".to_string(),
            None => {
                return Err(HarnessError::Config(format!(
                    "no prediction for sample {}",
                    sample.sample_id
                )))
            }
        };

        let image = ImagePayload::new(
            "text/x-image-path",
            sample.image_path.clone().into_bytes(),
        );
        let mut images = vec![image.clone()];
        let (needs_depth, needs_seg) = match template {
            TemplateId::AnswerPlusDepth => (true, false),
            TemplateId::AnswerPlusSeg => (false, true),
            TemplateId::AnswerPlusBoth => (true, true),
            _ => (false, false),
        };
        if needs_depth {
            images.push(
                StubPerception
                    .perceive(&image, PerceptionKind::Depth)
                    .expect("stub perception is infallible"),
            );
        }
        if needs_seg {
            images.push(
                StubPerception
                    .perceive(&image, PerceptionKind::Segmentation)
                    .expect("stub perception is infallible"),
            );
        }
        let image_refs: Vec<&ImagePayload> = images.iter().collect();
        backend.insert_with_images(&prompt, &image_refs, response);
    }
    Ok(backend)
}

/// Writes a predictions file: `{sample_id: answer-object | null}`.
pub fn write_predictions(
    path: &std::path::Path,
    predictions: &BTreeMap<String, Option<StepGraph>>,
) -> Result<(), HarnessError> {
    let mut value = serde_json::Map::new();
    for (id, pred) in predictions {
        let entry = match pred {
            Some(graph) => serde_json::from_str(&corpus::answer_to_json(graph))
                .expect("canonical answer JSON parses"),
            None => serde_json::Value::Null,
        };
        value.insert(id.clone(), entry);
    }
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(value))
        .expect("predictions serialize");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads a predictions file written by [`write_predictions`].
pub fn load_predictions(
    path: &std::path::Path,
) -> Result<BTreeMap<String, Option<StepGraph>>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Table(format!("predictions file: {e}")))?;
    let object = value
        .as_object()
        .ok_or_else(|| HarnessError::Table("predictions file must be an object".into()))?;
    let mut out = BTreeMap::new();
    for (id, entry) in object {
        let pred = if entry.is_null() {
            None
        } else {
            Some(
                crate::parse::parse_step_answer(&entry.to_string()).map_err(|e| {
                    HarnessError::Table(format!("prediction {id}: {e}"))
                })?,
            )
        };
        out.insert(id.clone(), pred);
    }
    Ok(out)
}
