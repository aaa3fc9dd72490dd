//! TOML run configuration and its merge with command-line overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use stepeval_core::gateway::http::{HttpChatBackend, HttpPerceptionBackend};
use stepeval_core::gateway::scripted::{NullBackend, StubPerception};
use stepeval_core::gateway::{BackendConfig, Gateway, Mode, PerceptionKind};
use stepeval_core::harness::{self, PipelineKind, RunConfig};
use stepeval_core::prompt::PromptSet;
use stepeval_core::rsgar::RsgarConfig;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub mode: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub images_dir: Option<PathBuf>,
    pub answer_backend: Option<String>,
    pub scorer_backend: Option<String>,
    pub pipeline: Option<String>,
    pub concurrency: Option<usize>,
    pub retries: Option<u32>,
    pub macro_average: Option<bool>,
    #[serde(default)]
    pub rsgar: RsgarSection,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSection>,
    #[serde(default)]
    pub perception: BTreeMap<String, PerceptionSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsgarSection {
    #[serde(rename = "T")]
    pub t: Option<u32>,
    pub use_depth: Option<bool>,
    pub use_seg: Option<bool>,
}

impl Default for RsgarSection {
    fn default() -> Self {
        RsgarSection {
            t: None,
            use_depth: None,
            use_seg: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: String,
    #[serde(default)]
    pub base_url: String,
    #[serde(default = "default_model")]
    pub model: String,
    pub auth_env: Option<String>,
    pub timeout_seconds: Option<u64>,
    pub max_retries: Option<u32>,
    pub max_concurrency: Option<usize>,
    pub retry_backoff_ms: Option<u64>,
    pub temperature: Option<f64>,
    pub max_output: Option<u32>,
    pub max_image_dim: Option<u32>,
    /// Predictions file for `kind = "scripted"`.
    pub predictions: Option<PathBuf>,
}

fn default_model() -> String {
    "default".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionSection {
    pub kind: String,
    #[serde(default)]
    pub base_url: String,
    pub timeout_seconds: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("cannot parse config {}", path.display()))
    }
}

/// Flag-level overrides shared by `evaluate` and `rsgar`.
#[derive(Debug, Clone, clap::Args)]
pub struct RunFlags {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus file to evaluate.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory for reports and traces.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// live, record, or replay.
    #[arg(long)]
    pub mode: Option<String>,
    /// Response cache directory (record/replay).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Directory of template files overriding the built-ins.
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
    /// Root directory for resolving image paths.
    #[arg(long)]
    pub images_dir: Option<PathBuf>,
    /// Backend id used for answering.
    #[arg(long)]
    pub answer_backend: Option<String>,
    /// Backend id used for scoring.
    #[arg(long)]
    pub scorer_backend: Option<String>,
    /// Answering pipeline: basic, cot, plus_depth, plus_seg, plus_both,
    /// or rsgar.
    #[arg(long)]
    pub pipeline: Option<String>,
    /// Bound on concurrent samples in flight.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Retry budget for transport and parse failures.
    #[arg(long)]
    pub retries: Option<u32>,
    /// Evaluate only N randomly chosen samples.
    #[arg(long, value_name = "N")]
    pub sample: Option<usize>,
    /// Seed for --sample.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Shortcut: script both answering and scoring from a predictions
    /// file (exact-equality scorer), no network.
    #[arg(long, value_name = "PREDICTIONS")]
    pub scripted: Option<PathBuf>,
    /// Also emit macro-averaged metrics.
    #[arg(long = "macro")]
    pub macro_average: bool,
}

/// Fully resolved run settings.
pub struct ResolvedRun {
    pub gateway: Gateway,
    pub run: RunConfig,
}

pub fn resolve_run(flags: &RunFlags, pipeline_override: Option<PipelineKind>) -> Result<ResolvedRun> {
    let file = match &flags.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };

    let corpus = flags
        .corpus
        .clone()
        .or(file.corpus.clone())
        .context("no corpus given (--corpus or config `corpus`)")?;
    let output = flags
        .out
        .clone()
        .or(file.output.clone())
        .context("no output directory given (--out or config `output`)")?;
    let mode_raw = flags
        .mode
        .clone()
        .or(file.mode.clone())
        .unwrap_or_else(|| "live".to_string());
    let mode = Mode::parse(&mode_raw).with_context(|| format!("unknown mode {mode_raw:?}"))?;
    let cache_dir = flags.cache_dir.clone().or(file.cache_dir.clone());
    let prompts_dir = flags.prompts_dir.clone().or(file.prompts_dir.clone());
    let images_dir = flags.images_dir.clone().or(file.images_dir.clone());
    let retries = flags.retries.or(file.retries).unwrap_or(3);
    if retries == 0 {
        bail!("retries must be at least 1");
    }

    let uses_scripted =
        flags.scripted.is_some() || file.backends.values().any(|b| b.kind == "scripted");
    if uses_scripted && images_dir.is_some() {
        bail!("scripted backends key on image paths; drop images_dir for scripted runs");
    }

    let rsgar_config = RsgarConfig {
        max_rounds: file.rsgar.t.unwrap_or(5),
        use_depth: file.rsgar.use_depth.unwrap_or(true),
        use_seg: file.rsgar.use_seg.unwrap_or(true),
    };
    let pipeline = match pipeline_override {
        Some(p) => p,
        None => {
            let raw = flags
                .pipeline
                .clone()
                .or(file.pipeline.clone())
                .unwrap_or_else(|| "basic".to_string());
            PipelineKind::parse(&raw, rsgar_config)
                .with_context(|| format!("unknown pipeline {raw:?}"))?
        }
    };

    let prompts = match &prompts_dir {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::builtin(),
    };

    let mut gateway = Gateway::new(mode, cache_dir.as_deref(), prompts)?
        .with_parse_retry_budget(retries);

    let mut run = RunConfig::new(corpus.clone(), output);
    run.pipeline = pipeline;
    run.images_dir = images_dir;
    run.concurrency = flags.concurrency.or(file.concurrency).unwrap_or(4);
    run.macro_average = flags.macro_average || file.macro_average.unwrap_or(false);
    run.sample = flags.sample.map(|n| (n, flags.seed));
    if let Some(id) = flags.answer_backend.clone().or(file.answer_backend.clone()) {
        run.answer_backend = id;
    }
    if let Some(id) = flags.scorer_backend.clone().or(file.scorer_backend.clone()) {
        run.scorer_backend = id;
    }

    // Configured backends.
    for (id, section) in &file.backends {
        let config = BackendConfig {
            base_url: section.base_url.clone(),
            model: section.model.clone(),
            auth_env: section.auth_env.clone(),
            timeout_seconds: section.timeout_seconds.unwrap_or(120),
            max_retries: section.max_retries.unwrap_or(retries),
            max_concurrency: section.max_concurrency.unwrap_or(run.concurrency),
            retry_backoff_ms: section.retry_backoff_ms.unwrap_or(100),
            temperature: section.temperature.unwrap_or(0.0),
            max_output: section.max_output,
            max_image_dim: section.max_image_dim,
        };
        match section.kind.as_str() {
            "http" => {
                // Replay never performs I/O but still needs the backend's
                // sampling settings to recompute the recorded cache keys.
                if mode == Mode::Replay {
                    gateway.register_backend(id, config, Arc::new(NullBackend));
                } else {
                    let backend = HttpChatBackend::new(&config)?;
                    gateway.register_backend(id, config, Arc::new(backend));
                }
            }
            "scripted" => {
                let predictions_path = section.predictions.as_ref().with_context(|| {
                    format!("backend {id:?} is scripted but names no predictions file")
                })?;
                let backend =
                    build_scripted(&corpus, predictions_path, gateway.prompts(), &run)?;
                gateway.register_backend(id, config, Arc::new(backend));
            }
            other => bail!("backend {id:?} has unknown kind {other:?}"),
        }
    }

    // The --scripted shortcut wires both roles to one offline backend.
    if let Some(predictions_path) = &flags.scripted {
        let backend = Arc::new(build_scripted(
            &corpus,
            predictions_path,
            gateway.prompts(),
            &run,
        )?);
        gateway.register_backend(&run.answer_backend, BackendConfig::default(), backend.clone());
        gateway.register_backend(&run.scorer_backend, BackendConfig::default(), backend);
    }

    for (kind_raw, section) in &file.perception {
        let kind = match kind_raw.as_str() {
            "depth" => PerceptionKind::Depth,
            "segmentation" => PerceptionKind::Segmentation,
            other => bail!("unknown perception kind {other:?}"),
        };
        match section.kind.as_str() {
            "http" => {
                if mode != Mode::Replay {
                    let backend = HttpPerceptionBackend::new(
                        &section.base_url,
                        section.timeout_seconds.unwrap_or(120),
                    )?;
                    gateway.register_perception(kind, Arc::new(backend));
                }
            }
            "stub" => gateway.register_perception(kind, Arc::new(StubPerception)),
            other => bail!("perception {kind_raw:?} has unknown kind {other:?}"),
        }
    }
    // RSGAR and map pipelines need perception; default to stubs when the
    // config names none and we are offline-scripted.
    if flags.scripted.is_some() {
        if !gateway.has_perception(PerceptionKind::Depth) {
            gateway.register_perception(PerceptionKind::Depth, Arc::new(StubPerception));
        }
        if !gateway.has_perception(PerceptionKind::Segmentation) {
            gateway.register_perception(PerceptionKind::Segmentation, Arc::new(StubPerception));
        }
    }
    // Flag-only replay runs carry no backend sections; fall back to the
    // default sampling settings the offline recorder used.
    if mode == Mode::Replay {
        for id in [run.answer_backend.clone(), run.scorer_backend.clone()] {
            if !gateway.has_backend(&id) {
                gateway.register_backend(&id, BackendConfig::default(), Arc::new(NullBackend));
            }
        }
    }

    Ok(ResolvedRun { gateway, run })
}

fn build_scripted(
    corpus: &std::path::Path,
    predictions_path: &std::path::Path,
    prompts: &PromptSet,
    run: &RunConfig,
) -> Result<stepeval_core::gateway::scripted::ScriptedBackend> {
    let template = run
        .pipeline
        .answer_template()
        .context("scripted backends cover the single-prompt pipelines, not rsgar")?;
    let load = stepeval_core::corpus::load_corpus(corpus)?;
    let predictions = harness::load_predictions(predictions_path)?;
    Ok(harness::scripted_backend_for(
        &load.samples,
        &predictions,
        prompts,
        template,
    )?)
}
