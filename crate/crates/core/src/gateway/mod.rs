//! Pluggable access to chat-style multimodal model endpoints and
//! perception backends, with retries, bounded per-backend concurrency, and
//! a content-addressed replay cache.
//!
//! Three modes:
//! * **live** — every call goes to the backend; nothing is persisted.
//! * **record** — live, plus every response is written to the cache.
//! * **replay** — every call is served from the cache; a miss is an error
//!   and the network is never touched.

pub mod cache;
pub mod http;
pub mod scripted;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::StepGraph;
use crate::matching::MatchMatrix;
use crate::parse::{extract_tagged, parse_match_matrix, parse_step_answer};
use crate::prompt::{answer_example, format_step_list, PromptSet, TemplateId};

pub use cache::{CacheRecord, CacheStats, DiskCache, PartRecord, RequestRecord};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("cache miss (key {0})")]
    CacheMiss(String),
    #[error("backend failure after {attempts} attempts: {last}")]
    BackendFailure { attempts: u32, last: String },
    #[error("unscorable pair after {attempts} attempts: {last}")]
    Unscorable { attempts: u32, last: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("prompt error: {0}")]
    Prompt(#[from] crate::prompt::PromptError),
    #[error("i/o error: {0}")]
    Io(String),
}

/// An error surfaced by a backend implementation.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {status}: {message}")]
    Http { status: u16, message: String },
    #[error("{0}")]
    Other(String),
}

impl BackendError {
    /// Transport failures and 5xx responses are retried; everything else
    /// fails fast.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status >= 500,
            BackendError::Other(_) => false,
        }
    }
}

/// One part of a request: text, or an image payload with a media type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text(String),
    Image(ImagePayload),
}

/// Opaque image bytes plus their media type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    pub media_type: String,
    pub data: Vec<u8>,
}

impl ImagePayload {
    pub fn new(media_type: impl Into<String>, data: Vec<u8>) -> Self {
        ImagePayload {
            media_type: media_type.into(),
            data,
        }
    }
}

/// A single model call.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub backend_id: String,
    pub model_name: String,
    pub parts: Vec<Part>,
    pub temperature: f64,
    pub max_output: Option<u32>,
}

impl ModelRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.parts.iter().any(|p| matches!(p, Part::Text(_))) {
            return Err(GatewayError::InvalidRequest(
                "request needs at least one text part".into(),
            ));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(
                "temperature must be ≥ 0".into(),
            ));
        }
        Ok(())
    }

    /// First text part; backends that key on the prompt use this.
    pub fn prompt_text(&self) -> Option<&str> {
        self.parts.iter().find_map(|p| match p {
            Part::Text(t) => Some(t.as_str()),
            _ => None,
        })
    }

    /// Content digest over model name, parts, temperature, and output cap.
    /// Length-prefixed fields keep the encoding unambiguous, so equal keys
    /// imply equal requests up to digest strength.
    pub fn cache_key(&self) -> CacheKey {
        fn push(hasher: &mut Sha256, bytes: &[u8]) {
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        }
        let mut hasher = Sha256::new();
        hasher.update(b"stepeval-request-v1\0");
        push(&mut hasher, self.model_name.as_bytes());
        push(&mut hasher, &self.temperature.to_le_bytes());
        match self.max_output {
            Some(v) => push(&mut hasher, &u64::from(v).to_le_bytes()),
            None => push(&mut hasher, b"none"),
        }
        for part in &self.parts {
            match part {
                Part::Text(t) => {
                    push(&mut hasher, b"text");
                    push(&mut hasher, t.as_bytes());
                }
                Part::Image(img) => {
                    push(&mut hasher, b"image");
                    push(&mut hasher, img.media_type.as_bytes());
                    push(&mut hasher, &img.data);
                }
            }
        }
        CacheKey(format!("{:x}", hasher.finalize()))
    }

    pub fn to_record(&self) -> RequestRecord {
        RequestRecord {
            backend_id: self.backend_id.clone(),
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            max_output: self.max_output,
            parts: self
                .parts
                .iter()
                .map(|p| match p {
                    Part::Text(t) => PartRecord::Text { text: t.clone() },
                    Part::Image(img) => PartRecord::Image {
                        media_type: img.media_type.clone(),
                        data_b64: BASE64.encode(&img.data),
                    },
                })
                .collect(),
        }
    }
}

/// Hex digest identifying one request in the cache.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CacheKey(pub String);

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A successful model reply.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub latency_seconds: f64,
    pub usage: Option<TokenUsage>,
    /// 1-based transport attempt that produced this response.
    pub attempt: u32,
}

/// Raw reply from a backend implementation.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

/// A chat-style completion backend.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<BackendReply, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerceptionKind {
    Depth,
    Segmentation,
}

impl PerceptionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PerceptionKind::Depth => "depth",
            PerceptionKind::Segmentation => "segmentation",
        }
    }
}

impl std::fmt::Display for PerceptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A perception service producing depth or segmentation maps.
pub trait PerceptionBackend: Send + Sync {
    fn perceive(
        &self,
        image: &ImagePayload,
        kind: PerceptionKind,
    ) -> Result<ImagePayload, BackendError>;
}

/// Execution mode. Replay never performs network I/O.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Live,
    Record,
    Replay,
}

impl Mode {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw {
            "live" => Some(Mode::Live),
            "record" => Some(Mode::Record),
            "replay" => Some(Mode::Replay),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Live => "live",
            Mode::Record => "record",
            Mode::Replay => "replay",
        }
    }
}

/// Per-backend settings.
#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub auth_env: Option<String>,
    pub timeout_seconds: u64,
    pub max_retries: u32,
    pub max_concurrency: usize,
    pub retry_backoff_ms: u64,
    pub temperature: f64,
    pub max_output: Option<u32>,
    /// When set, images larger than this on either side are resized down
    /// (aspect preserved) before sending. Never applied implicitly.
    pub max_image_dim: Option<u32>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: String::new(),
            model: "default".to_string(),
            auth_env: None,
            timeout_seconds: 120,
            max_retries: 3,
            max_concurrency: 4,
            retry_backoff_ms: 100,
            temperature: 0.0,
            max_output: None,
            max_image_dim: None,
        }
    }
}

/// Counting semaphore bounding in-flight requests per backend.
struct Semaphore {
    max: usize,
    state: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(max: usize) -> Self {
        Semaphore {
            max: max.max(1),
            state: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut count = self.state.lock().expect("semaphore lock");
        while *count >= self.max {
            count = self.cv.wait(count).expect("semaphore wait");
        }
        *count += 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.semaphore.state.lock().expect("semaphore lock");
        *count -= 1;
        self.semaphore.cv.notify_one();
    }
}

struct BackendEntry {
    config: BackendConfig,
    implementation: Arc<dyn Backend>,
    semaphore: Semaphore,
}

/// One request/response pair as seen by a pipeline, for traces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallRecord {
    pub key: String,
    pub purpose: String,
    pub attempt: u32,
    pub latency_seconds: f64,
}

/// Outcome of an answer call: either a parsed prediction or the
/// empty-prediction sentinel with the reason parsing kept failing.
#[derive(Debug, Clone)]
pub struct AnswerOutcome {
    pub prediction: Option<StepGraph>,
    pub calls: Vec<CallRecord>,
    pub failure: Option<String>,
}

/// Extra inputs an answer template may require.
#[derive(Debug, Clone, Default)]
pub struct AnswerExtras {
    pub depth: Option<ImagePayload>,
    pub segmentation: Option<ImagePayload>,
    pub scene_graph: Option<String>,
}

pub struct Gateway {
    mode: Mode,
    cache: Option<DiskCache>,
    backends: BTreeMap<String, BackendEntry>,
    perceivers: BTreeMap<&'static str, Arc<dyn PerceptionBackend>>,
    prompts: PromptSet,
    /// Re-ask budget for parse/shape failures in the structured ops.
    parse_retry_budget: u32,
}

impl Gateway {
    pub fn new(
        mode: Mode,
        cache_dir: Option<&std::path::Path>,
        prompts: PromptSet,
    ) -> Result<Self, GatewayError> {
        let cache = match (mode, cache_dir) {
            (Mode::Live, _) => None,
            (Mode::Record, Some(dir)) => Some(DiskCache::open(dir)?),
            (Mode::Replay, Some(dir)) => Some(DiskCache::open_existing(dir)?),
            (Mode::Record | Mode::Replay, None) => {
                return Err(GatewayError::Config(format!(
                    "{} mode requires a cache directory",
                    mode.as_str()
                )))
            }
        };
        Ok(Gateway {
            mode,
            cache,
            backends: BTreeMap::new(),
            perceivers: BTreeMap::new(),
            prompts,
            parse_retry_budget: 3,
        })
    }

    pub fn with_parse_retry_budget(mut self, budget: u32) -> Self {
        self.parse_retry_budget = budget.max(1);
        self
    }

    pub fn parse_retry_budget(&self) -> u32 {
        self.parse_retry_budget
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn register_backend(
        &mut self,
        id: &str,
        config: BackendConfig,
        implementation: Arc<dyn Backend>,
    ) {
        let semaphore = Semaphore::new(config.max_concurrency);
        self.backends.insert(
            id.to_string(),
            BackendEntry {
                config,
                implementation,
                semaphore,
            },
        );
    }

    pub fn register_perception(
        &mut self,
        kind: PerceptionKind,
        implementation: Arc<dyn PerceptionBackend>,
    ) {
        self.perceivers.insert(kind.as_str(), implementation);
    }

    pub fn backend_config(&self, id: &str) -> Result<&BackendConfig, GatewayError> {
        self.backends
            .get(id)
            .map(|e| &e.config)
            .ok_or_else(|| GatewayError::UnknownBackend(id.to_string()))
    }

    pub fn has_backend(&self, id: &str) -> bool {
        self.backends.contains_key(id)
    }

    pub fn has_perception(&self, kind: PerceptionKind) -> bool {
        self.perceivers.contains_key(kind.as_str())
    }

    /// Builds the request for a rendered prompt against a configured
    /// backend, applying the backend's sampling settings.
    pub fn request_for(
        &self,
        backend_id: &str,
        prompt: String,
        images: Vec<ImagePayload>,
    ) -> Result<ModelRequest, GatewayError> {
        let config = self.backend_config(backend_id)?;
        let mut parts = vec![Part::Text(prompt)];
        for image in images {
            parts.push(Part::Image(resize_if_configured(image, config.max_image_dim)));
        }
        Ok(ModelRequest {
            backend_id: backend_id.to_string(),
            model_name: config.model.clone(),
            parts,
            temperature: config.temperature,
            max_output: config.max_output,
        })
    }

    /// One completion, honoring mode, cache, retries, and the per-backend
    /// concurrency bound.
    pub fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        request.validate()?;
        let key = request.cache_key();

        if self.mode == Mode::Replay {
            let cache = self.cache.as_ref().expect("replay mode has a cache");
            return match cache.get(&key.0)? {
                Some(record) => Ok(ModelResponse {
                    text: record.response_text,
                    latency_seconds: record.latency_seconds,
                    usage: record.usage,
                    attempt: 1,
                }),
                None => Err(GatewayError::CacheMiss(key.0)),
            };
        }

        let entry = self
            .backends
            .get(&request.backend_id)
            .ok_or_else(|| GatewayError::UnknownBackend(request.backend_id.clone()))?;
        let _permit = entry.semaphore.acquire();

        let max_attempts = entry.config.max_retries.max(1);
        let mut last_error = String::new();
        for attempt in 1..=max_attempts {
            let start = Instant::now();
            match entry.implementation.complete(request) {
                Ok(reply) => {
                    let latency_seconds = start.elapsed().as_secs_f64();
                    if self.mode == Mode::Record {
                        let cache = self.cache.as_ref().expect("record mode has a cache");
                        cache.put(&CacheRecord {
                            key: key.0.clone(),
                            request: request.to_record(),
                            response_text: reply.text.clone(),
                            media_type: None,
                            usage: reply.usage,
                            timestamp: CacheRecord::now_timestamp(),
                            latency_seconds,
                        })?;
                    }
                    return Ok(ModelResponse {
                        text: reply.text,
                        latency_seconds,
                        usage: reply.usage,
                        attempt,
                    });
                }
                Err(e) => {
                    last_error = e.to_string();
                    if e.is_retryable() && attempt < max_attempts {
                        std::thread::sleep(std::time::Duration::from_millis(
                            entry.config.retry_backoff_ms * attempt as u64,
                        ));
                        continue;
                    }
                    return Err(GatewayError::BackendFailure {
                        attempts: attempt,
                        last: last_error,
                    });
                }
            }
        }
        Err(GatewayError::BackendFailure {
            attempts: max_attempts,
            last: last_error,
        })
    }

    /// Scores one (annotated, predicted) pair into an m×n matching matrix,
    /// re-asking on parse or shape failures up to the retry budget.
    pub fn score_pair(
        &self,
        backend_id: &str,
        image: &ImagePayload,
        gt: &StepGraph,
        pred: &StepGraph,
    ) -> Result<(MatchMatrix, Vec<CallRecord>), GatewayError> {
        if gt.is_empty() || pred.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "both step graphs must be non-empty".into(),
            ));
        }
        let prompt = self.prompts.render(
            TemplateId::MatchMatrix,
            &[
                ("ground_truth_steps", &format_step_list(gt)),
                ("predicted_steps", &format_step_list(pred)),
            ],
        )?;
        let request = self.request_for(backend_id, prompt, vec![image.clone()])?;

        let mut calls = Vec::new();
        let mut last = String::new();
        for attempt in 1..=self.parse_retry_budget {
            let response = self.complete(&request)?;
            calls.push(CallRecord {
                key: request.cache_key().0,
                purpose: "score_pair".to_string(),
                attempt,
                latency_seconds: response.latency_seconds,
            });
            match extract_tagged(&response.text)
                .and_then(|t| parse_match_matrix(&t.payload, gt.len(), pred.len()))
            {
                Ok(matrix) => return Ok((matrix, calls)),
                Err(e) => last = e.to_string(),
            }
        }
        Err(GatewayError::Unscorable {
            attempts: self.parse_retry_budget,
            last,
        })
    }

    /// Asks the model for a step answer. Parse failures re-ask up to the
    /// budget and then degrade to the empty-prediction sentinel; transport
    /// failures surface as errors.
    pub fn answer_question(
        &self,
        backend_id: &str,
        image: &ImagePayload,
        question: &str,
        template: TemplateId,
        extras: &AnswerExtras,
    ) -> Result<AnswerOutcome, GatewayError> {
        let mut bindings: Vec<(&str, &str)> =
            vec![("question", question), ("example", answer_example())];
        if let Some(scene_graph) = &extras.scene_graph {
            bindings.push(("scene_graph", scene_graph));
        }
        let prompt = self.prompts.render(template, &bindings)?;

        let mut images = vec![image.clone()];
        match template {
            TemplateId::AnswerPlusDepth => {
                images.push(require_extra(extras.depth.as_ref(), "depth")?);
            }
            TemplateId::AnswerPlusSeg => {
                images.push(require_extra(extras.segmentation.as_ref(), "segmentation")?);
            }
            TemplateId::AnswerPlusBoth => {
                images.push(require_extra(extras.depth.as_ref(), "depth")?);
                images.push(require_extra(extras.segmentation.as_ref(), "segmentation")?);
            }
            _ => {}
        }
        let request = self.request_for(backend_id, prompt, images)?;

        let mut calls = Vec::new();
        let mut last = String::new();
        for attempt in 1..=self.parse_retry_budget {
            let response = self.complete(&request)?;
            calls.push(CallRecord {
                key: request.cache_key().0,
                purpose: format!("answer:{template}"),
                attempt,
                latency_seconds: response.latency_seconds,
            });
            match extract_tagged(&response.text).and_then(|t| parse_step_answer(&t.payload)) {
                Ok(graph) => {
                    return Ok(AnswerOutcome {
                        prediction: Some(graph),
                        calls,
                        failure: None,
                    })
                }
                Err(e) => last = e.to_string(),
            }
        }
        Ok(AnswerOutcome {
            prediction: None,
            calls,
            failure: Some(last),
        })
    }

    /// Produces a depth or segmentation map for an image, cached exactly
    /// like model calls.
    pub fn perceive(
        &self,
        image: &ImagePayload,
        kind: PerceptionKind,
    ) -> Result<(ImagePayload, CallRecord), GatewayError> {
        let request = perception_request(image, kind);
        let key = request.cache_key();

        if self.mode == Mode::Replay {
            let cache = self.cache.as_ref().expect("replay mode has a cache");
            return match cache.get(&key.0)? {
                Some(record) => {
                    let data = BASE64.decode(record.response_text.as_bytes()).map_err(|e| {
                        GatewayError::Io(format!("corrupt perception record {key}: {e}"))
                    })?;
                    let media_type = record
                        .media_type
                        .unwrap_or_else(|| "application/octet-stream".to_string());
                    Ok((
                        ImagePayload::new(media_type, data),
                        CallRecord {
                            key: key.0,
                            purpose: format!("perceive:{kind}"),
                            attempt: 1,
                            latency_seconds: record.latency_seconds,
                        },
                    ))
                }
                None => Err(GatewayError::CacheMiss(key.0)),
            };
        }

        let backend = self.perceivers.get(kind.as_str()).ok_or_else(|| {
            GatewayError::Config(format!("no perception backend configured for {kind}"))
        })?;
        let start = Instant::now();
        let payload = backend
            .perceive(image, kind)
            .map_err(|e| GatewayError::BackendFailure {
                attempts: 1,
                last: e.to_string(),
            })?;
        let latency_seconds = start.elapsed().as_secs_f64();
        if self.mode == Mode::Record {
            let cache = self.cache.as_ref().expect("record mode has a cache");
            cache.put(&CacheRecord {
                key: key.0.clone(),
                request: request.to_record(),
                response_text: BASE64.encode(&payload.data),
                media_type: Some(payload.media_type.clone()),
                usage: None,
                timestamp: CacheRecord::now_timestamp(),
                latency_seconds,
            })?;
        }
        Ok((
            payload,
            CallRecord {
                key: key.0,
                purpose: format!("perceive:{kind}"),
                attempt: 1,
                latency_seconds,
            },
        ))
    }
}

fn require_extra(extra: Option<&ImagePayload>, kind: &str) -> Result<ImagePayload, GatewayError> {
    extra
        .cloned()
        .ok_or_else(|| GatewayError::Config(format!("template requires a {kind} map")))
}

fn perception_request(image: &ImagePayload, kind: PerceptionKind) -> ModelRequest {
    ModelRequest {
        backend_id: format!("perception:{kind}"),
        model_name: format!("perception/{kind}"),
        parts: vec![
            Part::Text(kind.as_str().to_string()),
            Part::Image(image.clone()),
        ],
        temperature: 0.0,
        max_output: None,
    }
}

/// Optional down-scaling: decodes, fits within `max_dim`, re-encodes PNG.
/// Images that fail to decode pass through untouched.
fn resize_if_configured(image: ImagePayload, max_dim: Option<u32>) -> ImagePayload {
    let Some(max_dim) = max_dim else {
        return image;
    };
    let Ok(decoded) = image::load_from_memory(&image.data) else {
        return image;
    };
    if decoded.width() <= max_dim && decoded.height() <= max_dim {
        return image;
    }
    let resized = decoded.resize(max_dim, max_dim, image::imageops::FilterType::Triangle);
    let mut buffer = std::io::Cursor::new(Vec::new());
    if resized
        .write_to(&mut buffer, image::ImageFormat::Png)
        .is_err()
    {
        return image;
    }
    ImagePayload::new("image/png", buffer.into_inner())
}
