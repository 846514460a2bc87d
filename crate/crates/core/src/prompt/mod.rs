//! Two-stage prompt rendering.
//!
//! A prompt is sent as four ordered parts: stage 1 (role and task setup),
//! the per-frame metadata block (when the configuration includes any), the
//! clip, and stage 2 (reasoning steps and the output constraint). Templates
//! are plain text with `{placeholder}` substitution only.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::clip::{window_for, ClipBundle, ClipError, ClipMode, ObservationWindow};
use crate::dataset::{EgoSpeedState, PedestrianInstance};
use crate::digest::FieldHasher;
use crate::{FPS, TTE_FRAMES, WINDOW_LEN};

/// The only two responses the model may give, verbatim.
pub const CROSS_LITERAL: &str = r#"{"intention": "cross"}"#;
pub const NOT_CROSS_LITERAL: &str = r#"{"intention": "not_cross"}"#;

/// Order of the parts handed to a backend, as recorded in run manifests.
pub const PROMPT_ORDER: [&str; 4] = ["stage1", "metadata", "media", "stage2"];

const BUILTIN_STAGE1: &str = include_str!("../../../../templates/stage1.txt");
const BUILTIN_STAGE2: &str = include_str!("../../../../templates/stage2.txt");

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template references unbound variable {{{0}}}")]
    TemplateVariableUnbound(String),
    #[error("frame {0} lacks an annotation required by the configuration")]
    MissingAnnotation(u32),
    #[error("configuration {config} needs a {expected:?} clip, got {got:?}")]
    ClipModeMismatch {
        config: ModalityConfig,
        expected: ClipMode,
        got: ClipMode,
    },
    #[error("rendered {0} is empty")]
    EmptyStage(&'static str),
    #[error(transparent)]
    Window(#[from] ClipError),
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VideoMode {
    /// Unannotated video.
    UV,
    /// Video with the pedestrian box drawn on every frame.
    AV,
}

impl VideoMode {
    pub fn clip_mode(self) -> ClipMode {
        match self {
            VideoMode::UV => ClipMode::Unannotated,
            VideoMode::AV => ClipMode::Annotated,
        }
    }
}

/// One of the eight input-modality combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModalityConfig {
    pub video_mode: VideoMode,
    pub include_bb: bool,
    pub include_speed: bool,
}

impl ModalityConfig {
    pub const fn new(video_mode: VideoMode, include_bb: bool, include_speed: bool) -> Self {
        Self {
            video_mode,
            include_bb,
            include_speed,
        }
    }

    /// All eight configurations in ablation-table order.
    pub const ALL: [ModalityConfig; 8] = [
        Self::new(VideoMode::UV, false, false),
        Self::new(VideoMode::UV, false, true),
        Self::new(VideoMode::UV, true, false),
        Self::new(VideoMode::UV, true, true),
        Self::new(VideoMode::AV, false, false),
        Self::new(VideoMode::AV, false, true),
        Self::new(VideoMode::AV, true, false),
        Self::new(VideoMode::AV, true, true),
    ];

    /// Position in [`ModalityConfig::ALL`].
    pub fn table_position(&self) -> usize {
        Self::ALL.iter().position(|c| c == self).expect("ALL is exhaustive")
    }

    pub fn label(&self) -> String {
        let mut s = String::from(match self.video_mode {
            VideoMode::UV => "UV",
            VideoMode::AV => "AV",
        });
        if self.include_bb {
            s.push_str("+BB");
        }
        if self.include_speed {
            s.push_str("+S");
        }
        s
    }
}

impl fmt::Display for ModalityConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for ModalityConfig {
    type Err = String;

    /// Parses labels like `AV+BB+S`; components may appear in any order and
    /// surrounding spaces are ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut video = None;
        let (mut bb, mut speed) = (false, false);
        for part in s.split('+').map(str::trim) {
            let dup = match part.to_ascii_uppercase().as_str() {
                "UV" => video.replace(VideoMode::UV).is_some(),
                "AV" => video.replace(VideoMode::AV).is_some(),
                "BB" => std::mem::replace(&mut bb, true),
                "S" => std::mem::replace(&mut speed, true),
                _ => return Err(format!("unknown modality component {part:?} in {s:?}")),
            };
            if dup {
                return Err(format!("repeated modality component in {s:?}"));
            }
        }
        let video_mode = video.ok_or_else(|| format!("{s:?} names neither UV nor AV"))?;
        Ok(Self::new(video_mode, bb, speed))
    }
}

impl Serialize for ModalityConfig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for ModalityConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub stage1: String,
    pub stage2: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    /// The templates shipped in `templates/`.
    pub fn builtin() -> Self {
        Self {
            stage1: BUILTIN_STAGE1.to_string(),
            stage2: BUILTIN_STAGE2.to_string(),
        }
    }

    pub fn load(stage1: &Path, stage2: &Path) -> Result<Self, PromptError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| PromptError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        Ok(Self {
            stage1: read(stage1)?,
            stage2: read(stage2)?,
        })
    }

    pub fn digest(&self) -> String {
        let mut h = FieldHasher::new("bfpip.templates.v1");
        h.str(&self.stage1).str(&self.stage2);
        h.finish()
    }
}

/// Substitutes `{name}` placeholders. Braces not enclosing an identifier
/// (JSON examples, for instance) are copied through unchanged.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let ident_len = after
            .char_indices()
            .take_while(|&(i, c)| c == '_' || c.is_ascii_lowercase() || (i > 0 && c.is_ascii_digit()))
            .count();
        if ident_len > 0 && after[ident_len..].starts_with('}') {
            let name = &after[..ident_len];
            let value = vars
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| PromptError::TemplateVariableUnbound(name.to_string()))?;
            out.push_str(value);
            rest = &after[ident_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn fmt_px(v: f64) -> String {
    format!("{v}")
}

/// One line per window frame: `frame <i>: bbox x=.. y=.. w=.. h=..; ego-speed: <tag>`,
/// with each part present only when its flag is set. Empty when both flags are off.
pub fn serialize_metadata(
    instance: &PedestrianInstance,
    window: &ObservationWindow,
    config: &ModalityConfig,
) -> Result<String, PromptError> {
    if !config.include_bb && !config.include_speed {
        return Ok(String::new());
    }
    let mut lines = Vec::with_capacity(window.length as usize);
    for index in window.frames() {
        let ann = instance.frame(index);
        let mut parts = Vec::with_capacity(2);
        if config.include_bb {
            let b = ann.and_then(|a| a.bbox).ok_or(PromptError::MissingAnnotation(index))?;
            parts.push(format!(
                "bbox x={} y={} w={} h={}",
                fmt_px(b.x),
                fmt_px(b.y),
                fmt_px(b.w),
                fmt_px(b.h)
            ));
        }
        if config.include_speed {
            let s = ann.and_then(|a| a.ego_speed).ok_or(PromptError::MissingAnnotation(index))?;
            parts.push(format!("ego-speed: {s}"));
        }
        lines.push(format!("frame {index}: {}", parts.join("; ")));
    }
    Ok(lines.join("\n"))
}

fn modality_inventory(config: &ModalityConfig) -> String {
    let mut items = vec![match config.video_mode {
        VideoMode::UV => format!(
            "- A {WINDOW_LEN}-frame video clip at {FPS} FPS from the front-facing camera, shown without any overlays."
        ),
        VideoMode::AV => format!(
            "- A {WINDOW_LEN}-frame video clip at {FPS} FPS from the front-facing camera; the pedestrian of interest is outlined by a red bounding box in every frame."
        ),
    }];
    if config.include_bb {
        items.push(
            "- Per-frame pedestrian bounding-box coordinates in pixels (x, y of the top-left corner, width w, height h), given as lines of the form `frame <index>: bbox x=<x> y=<y> w=<w> h=<h>`."
                .to_string(),
        );
    }
    if config.include_speed {
        let vocab: Vec<_> = EgoSpeedState::ALL.iter().map(|s| s.as_str()).collect();
        items.push(format!(
            "- Per-frame ego-vehicle motion as a categorical ego-speed state ({}), given as `ego-speed: <state>` on each frame line.",
            vocab.join(", ")
        ));
    }
    items.join("\n")
}

fn label_definitions(tte_seconds: &str) -> String {
    format!(
        "- cross: the pedestrian will start crossing the road in front of the vehicle within {tte_seconds} second(s) after the last observed frame.\n\
         - not_cross: the pedestrian will not cross the road within that horizon."
    )
}

fn output_constraint() -> String {
    format!(
        "Output format: after reasoning internally, answer with a single-word label wrapped in exactly one JSON object and nothing else: {CROSS_LITERAL} or {NOT_CROSS_LITERAL}."
    )
}

/// A fully rendered prompt for one (instance, configuration) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPackage {
    pub stage1_text: String,
    pub stage2_text: String,
    pub metadata_block: String,
    pub media: ClipBundle,
    pub prompt_digest: String,
}

/// Ordered prompt content as sent to a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptPart<'a> {
    Text(String),
    Media(&'a ClipBundle),
}

impl PromptPackage {
    pub fn parts(&self) -> Vec<PromptPart<'_>> {
        let mut parts = vec![PromptPart::Text(self.stage1_text.clone())];
        if !self.metadata_block.is_empty() {
            parts.push(PromptPart::Text(format!(
                "Per-frame metadata for the observed frames:\n{}",
                self.metadata_block
            )));
        }
        parts.push(PromptPart::Media(&self.media));
        parts.push(PromptPart::Text(self.stage2_text.clone()));
        parts
    }
}

fn prompt_digest(stage1: &str, metadata: &str, media_digest: &str, stage2: &str) -> String {
    let mut h = FieldHasher::new("bfpip.prompt.v1");
    h.str(stage1).str(metadata).str(media_digest).str(stage2);
    h.finish()
}

pub fn build_prompt(
    instance: &PedestrianInstance,
    config: &ModalityConfig,
    templates: &TemplateSet,
    clip: &ClipBundle,
) -> Result<PromptPackage, PromptError> {
    let expected = config.video_mode.clip_mode();
    if clip.mode != expected {
        return Err(PromptError::ClipModeMismatch {
            config: *config,
            expected,
            got: clip.mode,
        });
    }
    let window = window_for(instance.event_frame)?;
    let metadata_block = serialize_metadata(instance, &window, config)?;

    let n_frames = WINDOW_LEN.to_string();
    let fps = FPS.to_string();
    let tte_seconds = {
        let s = TTE_FRAMES as f64 / FPS as f64;
        format!("{s}")
    };
    let inventory = modality_inventory(config);
    let labels = label_definitions(&tte_seconds);
    let vars = [
        ("n_frames", n_frames.as_str()),
        ("fps", fps.as_str()),
        ("tte_seconds", tte_seconds.as_str()),
        ("modality_inventory", inventory.as_str()),
        ("metadata_block", metadata_block.as_str()),
        ("labels", labels.as_str()),
    ];
    let stage1_text = render_template(&templates.stage1, &vars)?.trim_end().to_string();
    let stage2_body = render_template(&templates.stage2, &vars)?.trim_end().to_string();
    if stage1_text.trim().is_empty() {
        return Err(PromptError::EmptyStage("stage 1"));
    }
    let stage2_text = if stage2_body.trim().is_empty() {
        output_constraint()
    } else {
        format!("{stage2_body}\n\n{}", output_constraint())
    };
    let prompt_digest = prompt_digest(&stage1_text, &metadata_block, &clip.content_digest, &stage2_text);
    Ok(PromptPackage {
        stage1_text,
        stage2_text,
        metadata_block,
        media: clip.clone(),
        prompt_digest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::ClipContainer;
    use crate::dataset::{BoundingBox, FrameAnnotation, Label, Split};

    fn instance() -> PedestrianInstance {
        PedestrianInstance {
            instance_id: "video_0001:0_1_2b".into(),
            video_id: "video_0001".into(),
            split: Split::Test,
            event_frame: 120,
            ground_truth: Label::Cross,
            frame_dims: None,
            frames: (70..=95)
                .map(|i| FrameAnnotation {
                    frame_index: i,
                    bbox: Some(BoundingBox::new(412.0 + (i as f64 - 75.0), 230.0, 58.0, 140.0)),
                    ego_speed: Some(EgoSpeedState::Decelerating),
                })
                .collect(),
        }
    }

    fn clip(mode: ClipMode) -> ClipBundle {
        ClipBundle {
            media_ref: "clips/ab/abcd.tar".into(),
            mode,
            fps: 30,
            container: ClipContainer::FrameTar,
            frame_count: 16,
            content_digest: format!("{mode:?}-digest"),
        }
    }

    #[test]
    fn config_labels_round_trip() {
        let labels: Vec<_> = ModalityConfig::ALL.iter().map(|c| c.label()).collect();
        assert_eq!(labels, ["UV", "UV+S", "UV+BB", "UV+BB+S", "AV", "AV+S", "AV+BB", "AV+BB+S"]);
        for c in ModalityConfig::ALL {
            assert_eq!(c.label().parse::<ModalityConfig>().unwrap(), c);
        }
        assert_eq!("S + AV".parse::<ModalityConfig>().unwrap(), ModalityConfig::new(VideoMode::AV, false, true));
        assert!("BB+S".parse::<ModalityConfig>().is_err());
        assert!("AV+UV".parse::<ModalityConfig>().is_err());
        assert!("AV+X".parse::<ModalityConfig>().is_err());
        let distinct: std::collections::HashSet<_> = ModalityConfig::ALL.iter().collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn bbox_only_metadata_line() {
        let w = window_for(120).unwrap();
        let cfg = ModalityConfig::new(VideoMode::UV, true, false);
        let block = serialize_metadata(&instance(), &w, &cfg).unwrap();
        let lines: Vec<_> = block.lines().collect();
        assert_eq!(lines.len(), 16);
        assert_eq!(lines[0], "frame 75: bbox x=412 y=230 w=58 h=140");
    }

    #[test]
    fn both_parts_and_fractional_values() {
        let mut inst = instance();
        inst.frames.iter_mut().find(|f| f.frame_index == 80).unwrap().bbox = Some(BoundingBox::new(1.5, 2.25, 3.0, 4.0));
        let w = window_for(120).unwrap();
        let block = serialize_metadata(&inst, &w, &ModalityConfig::new(VideoMode::AV, true, true)).unwrap();
        assert_eq!(block.lines().nth(5).unwrap(), "frame 80: bbox x=1.5 y=2.25 w=3 h=4; ego-speed: decelerating");
    }

    #[test]
    fn no_flags_no_metadata() {
        let w = window_for(120).unwrap();
        assert_eq!(serialize_metadata(&instance(), &w, &ModalityConfig::ALL[0]).unwrap(), "");
    }

    #[test]
    fn missing_speed_reported() {
        let mut inst = instance();
        inst.frames.iter_mut().find(|f| f.frame_index == 75).unwrap().ego_speed = None;
        let w = window_for(120).unwrap();
        let r = serialize_metadata(&inst, &w, &ModalityConfig::new(VideoMode::UV, false, true));
        assert!(matches!(r, Err(PromptError::MissingAnnotation(75))));
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = ModalityConfig::new(VideoMode::AV, true, true);
        let a = build_prompt(&instance(), &cfg, &TemplateSet::builtin(), &clip(ClipMode::Annotated)).unwrap();
        let b = build_prompt(&instance(), &cfg, &TemplateSet::builtin(), &clip(ClipMode::Annotated)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.prompt_digest.len(), 64);
    }

    #[test]
    fn av_s_mentions_speed_only() {
        let cfg = ModalityConfig::new(VideoMode::AV, false, true);
        let p = build_prompt(&instance(), &cfg, &TemplateSet::builtin(), &clip(ClipMode::Annotated)).unwrap();
        assert!(p.stage1_text.contains("ego-speed"));
        assert!(p.stage1_text.contains("16-frame"));
        assert!(p.stage1_text.contains("30 FPS"));
        assert!(p.metadata_block.contains("ego-speed:"));
        assert!(!p.metadata_block.contains("bbox"));

        let uv = ModalityConfig::ALL[0];
        let p = build_prompt(&instance(), &uv, &TemplateSet::builtin(), &clip(ClipMode::Unannotated)).unwrap();
        assert!(!p.stage1_text.contains("ego-speed"));
        assert!(!p.stage1_text.contains("bounding-box coordinates"));
    }

    #[test]
    fn stage2_carries_both_literals() {
        for cfg in ModalityConfig::ALL {
            let clip = clip(cfg.video_mode.clip_mode());
            let p = build_prompt(&instance(), &cfg, &TemplateSet::builtin(), &clip).unwrap();
            assert!(p.stage2_text.contains(CROSS_LITERAL));
            assert!(p.stage2_text.contains(NOT_CROSS_LITERAL));
        }
        // even with a template that says nothing
        let t = TemplateSet {
            stage1: "x".into(),
            stage2: String::new(),
        };
        let p = build_prompt(&instance(), &ModalityConfig::ALL[0], &t, &clip(ClipMode::Unannotated)).unwrap();
        assert!(p.stage2_text.contains(CROSS_LITERAL) && p.stage2_text.contains(NOT_CROSS_LITERAL));
    }

    #[test]
    fn unbound_placeholder() {
        let t = TemplateSet {
            stage1: "Predict within {horizon}.".into(),
            stage2: "ok".into(),
        };
        let r = build_prompt(&instance(), &ModalityConfig::ALL[0], &t, &clip(ClipMode::Unannotated));
        assert!(matches!(r, Err(PromptError::TemplateVariableUnbound(n)) if n == "horizon"));
    }

    #[test]
    fn json_braces_pass_through_templates() {
        let out = render_template(r#"say {"intention": "cross"} in {fps} fps {} {Upper}"#, &[("fps", "30")]).unwrap();
        assert_eq!(out, r#"say {"intention": "cross"} in 30 fps {} {Upper}"#);
    }

    #[test]
    fn clip_mode_must_match() {
        let r = build_prompt(
            &instance(),
            &ModalityConfig::new(VideoMode::AV, false, false),
            &TemplateSet::builtin(),
            &clip(ClipMode::Unannotated),
        );
        assert!(matches!(r, Err(PromptError::ClipModeMismatch { .. })));
    }

    #[test]
    fn parts_order() {
        let cfg = ModalityConfig::new(VideoMode::UV, true, false);
        let p = build_prompt(&instance(), &cfg, &TemplateSet::builtin(), &clip(ClipMode::Unannotated)).unwrap();
        let parts = p.parts();
        assert_eq!(parts.len(), 4);
        assert!(matches!(&parts[0], PromptPart::Text(t) if *t == p.stage1_text));
        assert!(matches!(&parts[1], PromptPart::Text(t) if t.ends_with(&p.metadata_block)));
        assert!(matches!(parts[2], PromptPart::Media(_)));
        assert!(matches!(&parts[3], PromptPart::Text(t) if *t == p.stage2_text));
        let p0 = build_prompt(&instance(), &ModalityConfig::ALL[0], &TemplateSet::builtin(), &clip(ClipMode::Unannotated)).unwrap();
        assert_eq!(p0.parts().len(), 3);
    }

    #[test]
    fn digest_tracks_media() {
        let cfg = ModalityConfig::ALL[0];
        let mut c = clip(ClipMode::Unannotated);
        let a = build_prompt(&instance(), &cfg, &TemplateSet::builtin(), &c).unwrap();
        c.content_digest = "other".into();
        let b = build_prompt(&instance(), &cfg, &TemplateSet::builtin(), &c).unwrap();
        assert_ne!(a.prompt_digest, b.prompt_digest);
    }
}
