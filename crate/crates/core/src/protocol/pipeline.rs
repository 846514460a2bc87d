use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AggregateError, PredictionRecord, ProtocolConfig, RecordSink, RepeatOutcome};
use crate::backend::{BackendError, InferenceRequest, Predictor};
use crate::clip::{
    extract_frames, package_clip, render_overlay, window_boxes, window_for, ClipBundle, ClipError, ClipFormat,
    FrameSource, MediaTool, OverlayStyle,
};
use crate::dataset::PedestrianInstance;
use crate::prompt::{build_prompt, ModalityConfig, PromptError, TemplateSet, VideoMode};
use crate::FPS;

/// Where frames come from and how clips are packaged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipSettings {
    /// Root of `<video_id>/frames/%05d.png` directories.
    pub frames_root: Option<PathBuf>,
    /// Root of `<video_id>.<video_ext>` files, decoded on demand.
    pub videos_root: Option<PathBuf>,
    pub video_ext: String,
    pub media_tool: MediaTool,
    pub format: ClipFormat,
    pub overlay: OverlayStyle,
    /// Packaged clips go here.
    pub clips_dir: PathBuf,
}

impl Default for ClipSettings {
    fn default() -> Self {
        Self {
            frames_root: None,
            videos_root: None,
            video_ext: "mp4".into(),
            media_tool: MediaTool::default(),
            format: ClipFormat::default(),
            overlay: OverlayStyle::default(),
            clips_dir: PathBuf::from("clips"),
        }
    }
}

/// Extracts, optionally annotates, and packages the window clip of `instance`.
pub fn build_clip(instance: &PedestrianInstance, mode: VideoMode, settings: &ClipSettings) -> Result<ClipBundle, ClipError> {
    let window = window_for(instance.event_frame)?;
    let source = FrameSource::locate(
        &instance.video_id,
        settings.frames_root.as_deref(),
        settings.videos_root.as_deref(),
        &settings.video_ext,
    )
    .ok_or_else(|| ClipError::SourceNotFound(instance.video_id.clone()))?;
    let raw = extract_frames(&source, &window, &settings.media_tool)?;
    let frames = match mode {
        VideoMode::UV => raw,
        VideoMode::AV => render_overlay(&raw, &window_boxes(instance, &window), &settings.overlay)?,
    };
    package_clip(&frames, FPS, settings.format, &settings.media_tool, &settings.clips_dir)
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("cannot append record: {0}")]
    Sink(#[source] std::io::Error),
}

/// A stage failure with the instance and configuration it happened on.
#[derive(Debug, thiserror::Error)]
#[error("instance {instance_id}{}: {source}", config.map(|c| format!(", config {c}")).unwrap_or_default())]
pub struct EvalError {
    pub instance_id: String,
    pub config: Option<ModalityConfig>,
    #[source]
    pub source: StageError,
}

impl EvalError {
    fn new(instance: &PedestrianInstance, config: Option<ModalityConfig>, source: impl Into<StageError>) -> Self {
        Self {
            instance_id: instance.instance_id.clone(),
            config,
            source: source.into(),
        }
    }
}

/// Clips keyed by (instance_id, video mode); built once, shared by the
/// metadata variants of that mode.
pub type ClipMemo = BTreeMap<(String, VideoMode), ClipBundle>;

pub struct Harness<'a> {
    pub predictor: &'a Predictor,
    pub templates: &'a TemplateSet,
    pub protocol: ProtocolConfig,
    pub clips: &'a ClipSettings,
    pub max_concurrency: usize,
}

impl Harness<'_> {
    fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.max_concurrency.max(1))
            .build()
            .expect("thread pool")
    }

    pub fn prepare_clips(&self, instances: &[&PedestrianInstance], modes: &[VideoMode]) -> Result<ClipMemo, EvalError> {
        let jobs: Vec<(&PedestrianInstance, VideoMode)> =
            modes.iter().flat_map(|&m| instances.iter().map(move |&i| (i, m))).collect();
        let built = self.pool().install(|| {
            jobs.par_iter()
                .map(|&(inst, mode)| {
                    build_clip(inst, mode, self.clips)
                        .map(|clip| ((inst.instance_id.clone(), mode), clip))
                        .map_err(|e| EvalError::new(inst, None, e))
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        Ok(built.into_iter().collect())
    }

    /// Runs the R repeats for one (instance, config) on a prepared clip.
    /// Repeats execute sequentially.
    pub fn run_instance(
        &self,
        instance: &PedestrianInstance,
        config: ModalityConfig,
        clip: &ClipBundle,
    ) -> Result<PredictionRecord, EvalError> {
        let err = |e: StageError| EvalError::new(instance, Some(config), e);
        let window = window_for(instance.event_frame).map_err(|e| err(e.into()))?;
        let prompt = build_prompt(instance, &config, self.templates, clip).map_err(|e| err(e.into()))?;
        let request = InferenceRequest {
            prompt: &prompt,
            instance,
            window,
            config,
        };
        let mut repeats = Vec::with_capacity(self.protocol.repeats as usize);
        for r in 0..self.protocol.repeats {
            let response = self.predictor.predict(&request, r).map_err(|e| err(e.into()))?;
            repeats.push(RepeatOutcome::from_response(r, response, self.protocol.parse_mode));
        }
        PredictionRecord::from_repeats(
            &instance.instance_id,
            config,
            instance.ground_truth,
            &prompt.prompt_digest,
            &clip.content_digest,
            repeats,
            &self.protocol,
        )
        .map_err(|e| err(e.into()))
    }

    /// Evaluates every instance under every config. Records are appended to
    /// `sink` as they complete and returned in reporting order.
    pub fn evaluate(
        &self,
        instances: &[&PedestrianInstance],
        configs: &[ModalityConfig],
        sink: Option<&RecordSink>,
    ) -> Result<Vec<PredictionRecord>, EvalError> {
        let mut modes: Vec<VideoMode> = configs.iter().map(|c| c.video_mode).collect();
        modes.sort();
        modes.dedup();
        let clips = self.prepare_clips(instances, &modes)?;
        let jobs: Vec<(&PedestrianInstance, ModalityConfig)> =
            configs.iter().flat_map(|&c| instances.iter().map(move |&i| (i, c))).collect();
        let mut records = self.pool().install(|| {
            jobs.par_iter()
                .map(|&(inst, config)| {
                    let clip = &clips[&(inst.instance_id.clone(), config.video_mode)];
                    let record = self.run_instance(inst, config, clip)?;
                    if let Some(sink) = sink {
                        sink.append(&record)
                            .map_err(|e| EvalError::new(inst, Some(config), StageError::Sink(e)))?;
                    }
                    tracing::debug!(instance = %inst.instance_id, %config, "evaluated");
                    Ok(record)
                })
                .collect::<Result<Vec<_>, EvalError>>()
        })?;
        records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        Ok(records)
    }
}
