//! Remote MLLM endpoint behind a vendor adapter, with bounded retries.

use std::time::{Duration, Instant};

use base64::Engine as _;
use serde_json::{json, Value};

use super::{Backend, BackendError, InferenceRequest, PredictorSpec, RawResponse, RetryPolicy, TransportStatus};
use super::{API_KEY_ENV, API_URL_ENV};
use crate::clip::{read_frame_tar, ClipBundle, ClipContainer};
use crate::prompt::PromptPart;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SendError {
    #[error("rate limited")]
    RateLimited,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rejected with status {status}")]
    Rejected { status: u16, body: String },
    /// The call succeeded but carried no usable text (blocked, empty candidate, ...).
    #[error("model error: {0}")]
    Model(String),
}

/// One vendor wire format. `parts` are in prompt order; media appears exactly once.
pub trait VendorAdapter: Send + Sync {
    fn send(&self, parts: &[PromptPart<'_>], params: DecodeParams) -> Result<String, SendError>;
}

const EXCERPT_LEN: usize = 300;

fn excerpt(s: &str) -> String {
    match s.char_indices().nth(EXCERPT_LEN) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

/// JSON `generateContent` format: camelCase fields, media as base64 `inlineData`.
/// Frame-sequence clips are sent as one PNG part per frame.
pub struct GenerateContentAdapter {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl GenerateContentAdapter {
    /// `{model}` in `endpoint` is replaced by `model_id`.
    pub fn new(endpoint: &str, model_id: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::InvalidSpec(format!("http client: {e}")))?;
        Ok(Self {
            url: endpoint.replace("{model}", model_id),
            api_key,
            client,
        })
    }

    pub fn request_body(parts: &[PromptPart<'_>], params: DecodeParams) -> Result<Value, SendError> {
        let mut wire = Vec::new();
        for part in parts {
            match part {
                PromptPart::Text(t) => wire.push(json!({ "text": t })),
                PromptPart::Media(clip) => wire.extend(media_parts(clip)?),
            }
        }
        Ok(json!({
            "contents": [{ "role": "user", "parts": wire }],
            "generationConfig": {
                "temperature": params.temperature,
                "seed": params.seed,
                "responseMimeType": "application/json",
            },
        }))
    }

    /// Concatenated text of the first candidate.
    pub fn response_text(body: &Value) -> Result<String, SendError> {
        let parts = body
            .pointer("/candidates/0/content/parts")
            .and_then(Value::as_array)
            .ok_or_else(|| {
                let reason = body
                    .pointer("/promptFeedback/blockReason")
                    .and_then(Value::as_str)
                    .unwrap_or("no candidate in response");
                SendError::Model(reason.to_string())
            })?;
        let text: String = parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect();
        if text.trim().is_empty() {
            return Err(SendError::Model("empty candidate text".into()));
        }
        Ok(text)
    }
}

fn media_parts(clip: &ClipBundle) -> Result<Vec<Value>, SendError> {
    let b64 = base64::engine::general_purpose::STANDARD;
    let bytes = clip
        .read_bytes()
        .map_err(|e| SendError::Transport(format!("reading {}: {e}", clip.media_ref.display())))?;
    Ok(match clip.container {
        ClipContainer::Mp4 => vec![json!({
            "inlineData": { "mimeType": clip.container.mime_type(), "data": b64.encode(&bytes) }
        })],
        ClipContainer::FrameTar => read_frame_tar(&bytes)
            .map_err(|e| SendError::Transport(format!("reading frame archive: {e}")))?
            .into_iter()
            .map(|(_, png)| json!({ "inlineData": { "mimeType": "image/png", "data": b64.encode(png) } }))
            .collect(),
    })
}

impl VendorAdapter for GenerateContentAdapter {
    fn send(&self, parts: &[PromptPart<'_>], params: DecodeParams) -> Result<String, SendError> {
        let body = Self::request_body(parts, params)?;
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.header("x-goog-api-key", key);
        }
        let resp = req.send().map_err(|e| SendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| SendError::Transport(e.to_string()))?;
        if status.as_u16() == 429 {
            return Err(SendError::RateLimited);
        }
        if status.is_server_error() {
            return Err(SendError::Transport(format!("HTTP {}", status.as_u16())));
        }
        if !status.is_success() {
            return Err(SendError::Rejected {
                status: status.as_u16(),
                body: text,
            });
        }
        let json: Value = serde_json::from_str(&text).map_err(|e| SendError::Model(format!("non-JSON body: {e}")))?;
        Self::response_text(&json)
    }
}

pub struct RemoteBackend {
    adapter: Box<dyn VendorAdapter>,
    params: DecodeParams,
    retry: RetryPolicy,
}

impl RemoteBackend {
    pub fn new(adapter: Box<dyn VendorAdapter>, params: DecodeParams, retry: RetryPolicy) -> Self {
        Self { adapter, params, retry }
    }

    pub fn from_spec(spec: &PredictorSpec) -> Result<Self, BackendError> {
        let endpoint = spec
            .endpoint
            .clone()
            .or_else(|| std::env::var(API_URL_ENV).ok().filter(|s| !s.is_empty()))
            .ok_or_else(|| BackendError::InvalidSpec(format!("remote backend needs an endpoint or {API_URL_ENV}")))?;
        let key = std::env::var(API_KEY_ENV).ok().filter(|s| !s.is_empty());
        if key.is_none() {
            tracing::warn!("{API_KEY_ENV} is not set; sending unauthenticated requests");
        }
        let adapter = GenerateContentAdapter::new(
            &endpoint,
            &spec.model_id,
            key,
            Duration::from_secs_f64(spec.timeout_secs),
        )?;
        Ok(Self::new(
            Box::new(adapter),
            DecodeParams {
                temperature: spec.temperature,
                seed: spec.seed,
            },
            spec.retry,
        ))
    }

    /// Sends with retries on rate limiting and transport errors only.
    pub fn send_with_retry(&self, parts: &[PromptPart<'_>]) -> Result<RawResponse, BackendError> {
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = self.adapter.send(parts, self.params);
            let retryable = matches!(outcome, Err(SendError::RateLimited | SendError::Transport(_)));
            if retryable && attempt < self.retry.max_attempts {
                let delay = self.retry.delay_after(attempt);
                tracing::debug!(attempt, ?delay, "retrying remote call");
                std::thread::sleep(delay);
                continue;
            }
            let latency_ms = started.elapsed().as_millis() as u64;
            return match outcome {
                Ok(text) => Ok(RawResponse {
                    text,
                    latency_ms,
                    transport_status: TransportStatus::Ok,
                    attempt_count: attempt,
                }),
                Err(SendError::Model(reason)) => Ok(RawResponse {
                    text: reason,
                    latency_ms,
                    transport_status: TransportStatus::ModelError,
                    attempt_count: attempt,
                }),
                Err(SendError::RateLimited) => Err(BackendError::RateLimitExhausted { attempts: attempt }),
                Err(SendError::Transport(message)) => Err(BackendError::TransportFailure {
                    attempts: attempt,
                    message,
                }),
                Err(SendError::Rejected { status, body }) => Err(BackendError::VendorRejection {
                    status,
                    body_excerpt: excerpt(&body),
                }),
            };
        }
    }
}

impl Backend for RemoteBackend {
    fn respond(&self, request: &InferenceRequest<'_>, _repeat_index: u32) -> Result<RawResponse, BackendError> {
        self.send_with_retry(&request.prompt.parts())
    }

    fn uses_network(&self) -> bool {
        true
    }
}
