//! Predictor backends behind a content-addressed response cache.
//!
//! [`Predictor::predict`] first consults the cache; on a miss it dispatches
//! to the configured backend kind (remote vendor endpoint, scripted replay,
//! or the centroid heuristic) and stores successful responses.

mod cache;
mod heuristic;
mod remote;
mod scripted;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clip::ObservationWindow;
use crate::dataset::PedestrianInstance;
use crate::digest::FieldHasher;
use crate::prompt::{ModalityConfig, PromptPackage};

pub use cache::{CacheStats, ResponseCache};
pub use heuristic::heuristic_predict;
pub use remote::{DecodeParams, GenerateContentAdapter, RemoteBackend, SendError, VendorAdapter};
pub use scripted::{write_script, ScriptEntry, ScriptedBackend};

pub const API_KEY_ENV: &str = "BFPIP_API_KEY";
pub const API_URL_ENV: &str = "BFPIP_API_URL";

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("rate limit still in effect after {attempts} attempts")]
    RateLimitExhausted { attempts: u32 },
    #[error("transport failure after {attempts} attempts: {message}")]
    TransportFailure { attempts: u32, message: String },
    #[error("vendor rejected the request with status {status}: {body_excerpt}")]
    VendorRejection { status: u16, body_excerpt: String },
    #[error("network access is disabled and no cached response exists")]
    NetworkDisabled,
    #[error("no scripted response for instance {instance_id}, config {config}, repeat {repeat_index}")]
    ScriptMissing {
        instance_id: String,
        config: String,
        repeat_index: u32,
    },
    #[error("invalid script {path}: {message}")]
    InvalidScript { path: String, message: String },
    #[error("frame {0} lacks the bounding box the heuristic needs")]
    MissingAnnotation(u32),
    #[error("heuristic backend needs frame dimensions for instance {0}")]
    MissingFrameDims(String),
    #[error("invalid predictor configuration: {0}")]
    InvalidSpec(String),
    #[error("cache write failed: {0}")]
    Cache(#[source] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Remote,
    Scripted,
    Heuristic,
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictorKind::Remote => "remote",
            PredictorKind::Scripted => "scripted",
            PredictorKind::Heuristic => "heuristic",
        })
    }
}

/// Retries apply to `rate_limited` and `transport_error` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1` (1-based `attempt`): base, 2*base, 4*base, ...
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    pub model_id: String,
    pub temperature: f64,
    pub seed: u64,
    /// Remote only; falls back to `BFPIP_API_URL`.
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    /// Permit temperature/seed other than 0/0.
    pub allow_protocol_deviation: bool,
    /// Scripted only: JSON-lines replay file.
    pub script: Option<PathBuf>,
    /// Heuristic only: centroid displacement threshold in pixels.
    pub heuristic_threshold_px: f64,
    pub retry: RetryPolicy,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        Self {
            kind: PredictorKind::Scripted,
            model_id: "gemini-2.5-pro".into(),
            temperature: 0.0,
            seed: 0,
            endpoint: None,
            timeout_secs: 120.0,
            allow_protocol_deviation: false,
            script: None,
            heuristic_threshold_px: 20.0,
            retry: RetryPolicy::default(),
        }
    }
}

impl PredictorSpec {
    pub fn heuristic(threshold_px: f64) -> Self {
        Self {
            kind: PredictorKind::Heuristic,
            model_id: "centroid-heuristic".into(),
            heuristic_threshold_px: threshold_px,
            ..Self::default()
        }
    }

    pub fn scripted(script: impl Into<PathBuf>) -> Self {
        Self {
            kind: PredictorKind::Scripted,
            model_id: "scripted".into(),
            script: Some(script.into()),
            ..Self::default()
        }
    }

    pub fn is_protocol_conformant(&self) -> bool {
        self.temperature == 0.0 && self.seed == 0
    }

    /// Human-readable deviations from temperature 0 / seed 0.
    pub fn deviations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.temperature != 0.0 {
            out.push(format!("temperature {} (protocol: 0)", self.temperature));
        }
        if self.seed != 0 {
            out.push(format!("seed {} (protocol: 0)", self.seed));
        }
        out
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.is_protocol_conformant() && !self.allow_protocol_deviation {
            return Err(BackendError::InvalidSpec(
                "temperature and seed must be 0 unless allow_protocol_deviation is set".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidSpec("temperature must be a non-negative number".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(BackendError::InvalidSpec("model_id must be non-empty".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(BackendError::InvalidSpec("retry.max_attempts must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(BackendError::InvalidSpec("timeout_secs must be positive".into()));
        }
        if self.kind == PredictorKind::Scripted && self.script.is_none() {
            return Err(BackendError::InvalidSpec("scripted backend needs a script file".into()));
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "{} backend, model {}, temperature {}, seed {}",
            self.kind, self.model_id, self.temperature, self.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportStatus {
    Ok,
    RateLimited,
    TransportError,
    ModelError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub latency_ms: u64,
    pub transport_status: TransportStatus,
    pub attempt_count: u32,
}

impl RawResponse {
    pub fn ok(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            latency_ms: 0,
            transport_status: TransportStatus::Ok,
            attempt_count: 1,
        }
    }
}

/// SHA-256 over (kind, model, prompt digest, media digest, temperature, seed, repeat).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn cache_key(spec: &PredictorSpec, prompt: &PromptPackage, repeat_index: u32) -> CacheKey {
    let mut h = FieldHasher::new("bfpip.cache.v1");
    h.str(&spec.kind.to_string())
        .str(&spec.model_id)
        .str(&prompt.prompt_digest)
        .str(&prompt.media.content_digest)
        .f64(spec.temperature)
        .u64(spec.seed)
        .u64(repeat_index as u64);
    CacheKey(h.finish())
}

/// Everything a backend may look at for one call.
#[derive(Debug, Clone, Copy)]
pub struct InferenceRequest<'a> {
    pub prompt: &'a PromptPackage,
    pub instance: &'a PedestrianInstance,
    pub window: ObservationWindow,
    pub config: ModalityConfig,
}

pub trait Backend: Send + Sync {
    fn respond(&self, request: &InferenceRequest<'_>, repeat_index: u32) -> Result<RawResponse, BackendError>;

    /// Whether a call leaves the process. Only such backends are cached;
    /// local backends are deterministic and cheap, and their inputs (a script
    /// file, a threshold) are not part of the cache key.
    fn uses_network(&self) -> bool {
        false
    }
}

struct HeuristicBackend {
    threshold_px: f64,
}

impl Backend for HeuristicBackend {
    fn respond(&self, req: &InferenceRequest<'_>, _repeat_index: u32) -> Result<RawResponse, BackendError> {
        heuristic_predict(req.instance, &req.window, self.threshold_px)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PredictorCounters {
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub network_calls: usize,
}

/// Cached, retrying front end over one backend.
pub struct Predictor {
    spec: PredictorSpec,
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    network_enabled: bool,
    hits: AtomicUsize,
    misses: AtomicUsize,
    network_calls: AtomicUsize,
}

impl fmt::Debug for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Predictor")
            .field("spec", &self.spec)
            .field("cache", &self.cache)
            .field("network_enabled", &self.network_enabled)
            .finish_non_exhaustive()
    }
}

impl Predictor {
    /// Builds the backend named by `spec.kind`.
    pub fn from_spec(spec: PredictorSpec, cache: Option<ResponseCache>) -> Result<Self, BackendError> {
        spec.validate()?;
        let backend: Box<dyn Backend> = match spec.kind {
            PredictorKind::Heuristic => Box::new(HeuristicBackend {
                threshold_px: spec.heuristic_threshold_px,
            }),
            PredictorKind::Scripted => {
                let path = spec.script.as_ref().expect("validated");
                Box::new(ScriptedBackend::load(path)?)
            }
            PredictorKind::Remote => Box::new(RemoteBackend::from_spec(&spec)?),
        };
        Ok(Self::with_backend(spec, backend, cache))
    }

    pub fn with_backend(spec: PredictorSpec, backend: Box<dyn Backend>, cache: Option<ResponseCache>) -> Self {
        Self {
            spec,
            backend,
            cache,
            network_enabled: true,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            network_calls: AtomicUsize::new(0),
        }
    }

    /// With network disabled, a cache miss on a network backend is an error.
    pub fn set_network_enabled(&mut self, enabled: bool) {
        self.network_enabled = enabled;
    }

    pub fn spec(&self) -> &PredictorSpec {
        &self.spec
    }

    pub fn counters(&self) -> PredictorCounters {
        PredictorCounters {
            cache_hits: self.hits.load(Ordering::Relaxed),
            cache_misses: self.misses.load(Ordering::Relaxed),
            network_calls: self.network_calls.load(Ordering::Relaxed),
        }
    }

    pub fn predict(&self, request: &InferenceRequest<'_>, repeat_index: u32) -> Result<RawResponse, BackendError> {
        if !self.backend.uses_network() {
            return self.backend.respond(request, repeat_index);
        }
        let key = cache_key(&self.spec, request.prompt, repeat_index);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.lookup(&key)) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        if !self.network_enabled {
            return Err(BackendError::NetworkDisabled);
        }
        self.network_calls.fetch_add(1, Ordering::Relaxed);
        let response = self.backend.respond(request, repeat_index)?;
        if response.transport_status == TransportStatus::Ok {
            if let Some(cache) = &self.cache {
                cache.store(&key, &response).map_err(BackendError::Cache)?;
            }
        }
        Ok(response)
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::clip::{window_for, ClipBundle, ClipContainer, ClipMode};
    use crate::dataset::{BoundingBox, EgoSpeedState, FrameAnnotation, FrameDims, Label, Split};
    use crate::prompt::{build_prompt, TemplateSet};

    pub fn instance(id: &str) -> PedestrianInstance {
        PedestrianInstance {
            instance_id: id.into(),
            video_id: "video_0001".into(),
            split: Split::Test,
            event_frame: 120,
            ground_truth: Label::Cross,
            frame_dims: Some(FrameDims { width: 1000, height: 600 }),
            frames: (75..=90)
                .map(|i| FrameAnnotation {
                    frame_index: i,
                    bbox: Some(BoundingBox::new(100.0, 200.0, 40.0, 100.0)),
                    ego_speed: Some(EgoSpeedState::Stopped),
                })
                .collect(),
        }
    }

    pub fn prompt(inst: &PedestrianInstance, media_digest: &str) -> PromptPackage {
        let clip = ClipBundle {
            media_ref: "/nonexistent.tar".into(),
            mode: ClipMode::Unannotated,
            fps: 30,
            container: ClipContainer::FrameTar,
            frame_count: 16,
            content_digest: media_digest.into(),
        };
        build_prompt(inst, &ModalityConfig::ALL[0], &TemplateSet::builtin(), &clip).unwrap()
    }

    pub fn request<'a>(inst: &'a PedestrianInstance, prompt: &'a PromptPackage) -> InferenceRequest<'a> {
        InferenceRequest {
            prompt,
            instance: inst,
            window: window_for(inst.event_frame).unwrap(),
            config: ModalityConfig::ALL[0],
        }
    }
}
