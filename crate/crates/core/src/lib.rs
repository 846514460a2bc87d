//! Offline-verifiable evaluation harness for zero-shot pedestrian
//! crossing-intention prediction with multimodal language models.
//!
//! The pipeline runs, in order:
//!
//! 1. [`dataset`]: canonical manifests and the JAAD XML adapter.
//! 2. [`clip`]: observation windows, frame extraction, box overlays, clip packaging.
//! 3. [`prompt`]: two-stage prompt rendering with per-frame metadata blocks.
//! 4. [`backend`]: remote, scripted and heuristic predictors behind one cache.
//! 5. [`protocol`]: repeated inference, response parsing, vote aggregation.
//! 6. [`metrics`]: ACC / AUC / F1 / precision / recall and stability statistics.
//! 7. [`report`]: the eight-configuration ablation and report emission.
//!
//! [`config`] loads the JSON harness configuration that ties the stages together.

pub mod backend;
pub mod clip;
pub mod config;
pub mod dataset;
pub mod digest;
mod fsutil;
pub mod metrics;
pub mod prompt;
pub mod protocol;
pub mod report;

mod error;

pub use error::{Error, Result};

pub use backend::{CacheKey, PredictorKind, PredictorSpec, RawResponse, TransportStatus};
pub use clip::{ClipBundle, FrameSet, ObservationWindow, OverlayStyle};
pub use config::HarnessConfig;
pub use dataset::{
    BoundingBox, DatasetManifest, EgoSpeedState, FrameAnnotation, Label, PedestrianInstance, Split,
};
pub use metrics::{ConfusionMatrix, EvalMetrics};
pub use prompt::{ModalityConfig, PromptPackage, TemplateSet, VideoMode};
pub use protocol::{PredictionRecord, ProtocolConfig};
pub use report::{AblationResult, ReferenceRow, ReportFormat};

/// Frames per second of every source video and packaged clip.
pub const FPS: u32 = 30;
/// Prediction horizon between the last observed frame and the event, in frames.
pub const TTE_FRAMES: u32 = 30;
/// Number of frames in one observation window.
pub const WINDOW_LEN: u32 = 16;
/// Smallest event frame for which a full window exists.
pub const MIN_EVENT_FRAME: u32 = TTE_FRAMES + WINDOW_LEN - 1;
