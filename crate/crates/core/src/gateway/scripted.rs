//! Offline backends: prompt-keyed transcripts, an exact-equality scorer,
//! deterministic perception stubs, and counting wrappers for tests.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{
    Backend, BackendError, BackendReply, ImagePayload, ModelRequest, PerceptionBackend,
    PerceptionKind,
};
use crate::matching::MatchMatrix;
use crate::parse::format_matrix;
use crate::prompt::parse_step_list;

/// Marker line identifying a matching prompt, used by scripted scorers.
const MATRIX_PROMPT_PREFIX: &str = "You are given an image and two list of step descriptions";

/// Extracts the two numbered lists out of a rendered matching prompt.
pub fn parse_matrix_prompt(prompt: &str) -> Option<(Vec<String>, Vec<String>)> {
    let gt_start = prompt.find("Ground Truth List:\n")? + "Ground Truth List:\n".len();
    let gt_end = prompt[gt_start..].find("\n\n")? + gt_start;
    let pred_start = prompt.find("Predicted List:\n")? + "Predicted List:\n".len();
    let pred_end = prompt[pred_start..].find("\n\n")? + pred_start;
    let gt = parse_step_list(&prompt[gt_start..gt_end])?;
    let pred = parse_step_list(&prompt[pred_start..pred_end])?;
    Some((gt, pred))
}

/// The exact-equality matrix for two content lists.
pub fn equality_matrix(gt: &[String], pred: &[String]) -> MatchMatrix {
    let mut matrix = MatchMatrix::zeros(gt.len(), pred.len()).expect("non-empty lists");
    for (i, g) in gt.iter().enumerate() {
        for (j, p) in pred.iter().enumerate() {
            if g == p {
                matrix.set(i, j, true);
            }
        }
    }
    matrix
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Lookup key for a scripted response: the prompt plus digests of every
/// image part. Two samples can share a question; their images differ.
fn request_key(prompt: &str, images: &[&ImagePayload]) -> String {
    let mut key = String::from(prompt);
    for image in images {
        key.push('\u{0}');
        key.push_str(&image.media_type);
        key.push(':');
        key.push_str(&format!("{:016x}", fnv64(&image.data)));
    }
    key
}

/// A backend that answers from a transcript. Responses are keyed by
/// prompt plus attached images, with a prompt-only fallback for scripts
/// that do not care about the image. Matching prompts, when enabled, are
/// answered dynamically with the exact-equality matrix — semantic
/// judgment is precisely what gets mocked out.
pub struct ScriptedBackend {
    by_request: Mutex<BTreeMap<String, String>>,
    by_prompt: Mutex<BTreeMap<String, String>>,
    score_by_equality: bool,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(score_by_equality: bool) -> Self {
        ScriptedBackend {
            by_request: Mutex::new(BTreeMap::new()),
            by_prompt: Mutex::new(BTreeMap::new()),
            score_by_equality,
            calls: AtomicUsize::new(0),
        }
    }

    /// Scripts a response for a prompt regardless of attached images.
    pub fn insert(&self, prompt: impl Into<String>, response: impl Into<String>) {
        self.by_prompt
            .lock()
            .expect("scripted responses lock")
            .insert(prompt.into(), response.into());
    }

    /// Scripts a response for a prompt with exactly these image parts.
    pub fn insert_with_images(
        &self,
        prompt: &str,
        images: &[&ImagePayload],
        response: impl Into<String>,
    ) {
        self.by_request
            .lock()
            .expect("scripted responses lock")
            .insert(request_key(prompt, images), response.into());
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &ModelRequest) -> Result<BackendReply, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request
            .prompt_text()
            .ok_or_else(|| BackendError::Other("request has no text part".into()))?;

        if self.score_by_equality && prompt.starts_with(MATRIX_PROMPT_PREFIX) {
            let (gt, pred) = parse_matrix_prompt(prompt)
                .ok_or_else(|| BackendError::Other("malformed matching prompt".into()))?;
            let matrix = equality_matrix(&gt, &pred);
            return Ok(BackendReply {
                text: format!("<ans>{}</ans>", format_matrix(&matrix)),
                usage: None,
            });
        }

        let images: Vec<&ImagePayload> = request
            .parts
            .iter()
            .filter_map(|p| match p {
                super::Part::Image(img) => Some(img),
                _ => None,
            })
            .collect();
        if let Some(response) = self
            .by_request
            .lock()
            .expect("scripted responses lock")
            .get(&request_key(prompt, &images))
        {
            return Ok(BackendReply {
                text: response.clone(),
                usage: None,
            });
        }
        let responses = self.by_prompt.lock().expect("scripted responses lock");
        match responses.get(prompt) {
            Some(response) => Ok(BackendReply {
                text: response.clone(),
                usage: None,
            }),
            None => Err(BackendError::Other(format!(
                "no scripted response for prompt starting {:?}",
                prompt.chars().take(60).collect::<String>()
            ))),
        }
    }
}

/// Minimal fixed map backend for plumbing tests.
pub struct MapBackend {
    responses: BTreeMap<String, String>,
}

impl MapBackend {
    pub fn single(prompt: &str, response: &str) -> Self {
        let mut responses = BTreeMap::new();
        responses.insert(prompt.to_string(), response.to_string());
        MapBackend { responses }
    }
}

impl Backend for MapBackend {
    fn complete(&self, request: &ModelRequest) -> Result<BackendReply, BackendError> {
        let prompt = request
            .prompt_text()
            .ok_or_else(|| BackendError::Other("request has no text part".into()))?;
        self.responses
            .get(prompt)
            .map(|r| BackendReply {
                text: r.clone(),
                usage: None,
            })
            .ok_or_else(|| BackendError::Other("unscripted prompt".into()))
    }
}

/// Placeholder carrying a backend's configuration in replay mode, where
/// the gateway never invokes implementations.
pub struct NullBackend;

impl Backend for NullBackend {
    fn complete(&self, _request: &ModelRequest) -> Result<BackendReply, BackendError> {
        Err(BackendError::Other(
            "this backend placeholder performs no I/O".into(),
        ))
    }
}

/// Deterministic stand-in for a perception service: the payload is a
/// readable function of the request, so record/replay fixtures never need
/// real model outputs.
pub struct StubPerception;

impl PerceptionBackend for StubPerception {
    fn perceive(
        &self,
        image: &ImagePayload,
        kind: PerceptionKind,
    ) -> Result<ImagePayload, BackendError> {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in &image.data {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        Ok(ImagePayload::new(
            "application/octet-stream",
            format!("stub:{kind}:{h:016x}").into_bytes(),
        ))
    }
}

/// Wraps a backend, tracking in-flight and total calls. Used to observe
/// the concurrency bound and to prove replay runs never touch a backend.
pub struct CountingBackend {
    inner: Arc<dyn Backend>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    total: AtomicUsize,
    delay: std::time::Duration,
}

impl CountingBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        CountingBackend {
            inner,
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            total: AtomicUsize::new(0),
            delay: std::time::Duration::ZERO,
        }
    }

    /// Holds each call open for `delay`, making concurrency observable.
    pub fn with_delay(mut self, delay: std::time::Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn peak_concurrency(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn total_calls(&self) -> usize {
        self.total.load(Ordering::SeqCst)
    }
}

impl Backend for CountingBackend {
    fn complete(&self, request: &ModelRequest) -> Result<BackendReply, BackendError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.total.fetch_add(1, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let result = self.inner.complete(request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

/// A backend that fails with an HTTP 500 a fixed number of times before
/// succeeding. Exercises the retry contract without a network.
pub struct FlakyBackend {
    failures_before_success: AtomicUsize,
    response: String,
}

impl FlakyBackend {
    pub fn new(failures: usize, response: &str) -> Self {
        FlakyBackend {
            failures_before_success: AtomicUsize::new(failures),
            response: response.to_string(),
        }
    }
}

impl Backend for FlakyBackend {
    fn complete(&self, _request: &ModelRequest) -> Result<BackendReply, BackendError> {
        let remaining = self.failures_before_success.load(Ordering::SeqCst);
        if remaining > 0 {
            self.failures_before_success
                .store(remaining - 1, Ordering::SeqCst);
            return Err(BackendError::Http {
                status: 500,
                message: "scripted failure".into(),
            });
        }
        Ok(BackendReply {
            text: self.response.clone(),
            usage: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::prompt::{format_step_list, PromptSet, TemplateId};

    #[test]
    fn matrix_prompt_round_trip() {
        let graph = fixtures::laptop_sample().answer;
        let prompts = PromptSet::builtin();
        let rendered = prompts
            .render(
                TemplateId::MatchMatrix,
                &[
                    ("ground_truth_steps", &format_step_list(&graph)),
                    ("predicted_steps", &format_step_list(&graph)),
                ],
            )
            .unwrap();
        let (gt, pred) = parse_matrix_prompt(&rendered).unwrap();
        assert_eq!(gt.len(), 5);
        assert_eq!(gt, pred);
        let matrix = equality_matrix(&gt, &pred);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(matrix.get(i, j), i == j);
            }
        }
    }

    #[test]
    fn equality_matrix_marks_only_equal_contents() {
        let gt = vec!["a".to_string(), "b".to_string()];
        let pred = vec!["b".to_string()];
        let matrix = equality_matrix(&gt, &pred);
        assert!(!matrix.get(0, 0));
        assert!(matrix.get(1, 0));
    }
}
