//! Pedestrian instances, the canonical JSON manifest, and split filtering.
//!
//! Frame indices are 0-based everywhere. The manifest is the only dataset
//! format the rest of the harness reads; [`jaad`] converts JAAD-style XML
//! annotations into it.

pub mod jaad;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{FPS, MIN_EVENT_FRAME};

/// Pedestrian box in pixel coordinates, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center_x(&self) -> f64 {
        self.x + self.w / 2.0
    }

    /// Every violated invariant as `(field, reason)`.
    pub fn violations(&self, dims: Option<FrameDims>) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        for (name, v) in [("bbox.x", self.x), ("bbox.y", self.y), ("bbox.w", self.w), ("bbox.h", self.h)] {
            if !v.is_finite() {
                out.push((name, "must be finite".to_string()));
            }
        }
        if self.w <= 0.0 {
            out.push(("bbox.w", "must be positive".to_string()));
        }
        if self.h <= 0.0 {
            out.push(("bbox.h", "must be positive".to_string()));
        }
        if self.x < 0.0 {
            out.push(("bbox.x", "must be non-negative".to_string()));
        }
        if self.y < 0.0 {
            out.push(("bbox.y", "must be non-negative".to_string()));
        }
        if let Some(d) = dims {
            if self.x + self.w > d.width as f64 {
                out.push(("bbox.x+w", format!("exceeds frame width {}", d.width)));
            }
            if self.y + self.h > d.height as f64 {
                out.push(("bbox.y+h", format!("exceeds frame height {}", d.height)));
            }
        }
        out
    }
}

/// Categorical ego-vehicle motion state attached to each frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EgoSpeedState {
    Stopped,
    Decelerating,
    Constant,
    Accelerating,
    MovingSlow,
    MovingFast,
}

impl EgoSpeedState {
    pub const ALL: [EgoSpeedState; 6] = [
        Self::Stopped,
        Self::Decelerating,
        Self::Constant,
        Self::Accelerating,
        Self::MovingSlow,
        Self::MovingFast,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stopped => "stopped",
            Self::Decelerating => "decelerating",
            Self::Constant => "constant",
            Self::Accelerating => "accelerating",
            Self::MovingSlow => "moving-slow",
            Self::MovingFast => "moving-fast",
        }
    }
}

impl fmt::Display for EgoSpeedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EgoSpeedState {
    type Err = String;

    /// Accepts the canonical tags plus JAAD's underscore spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match norm.as_str() {
            "stopped" | "stop" => Self::Stopped,
            "decelerating" | "slowing-down" => Self::Decelerating,
            "constant" | "moving-constant" => Self::Constant,
            "accelerating" | "speeding-up" => Self::Accelerating,
            "moving-slow" => Self::MovingSlow,
            "moving-fast" => Self::MovingFast,
            _ => return Err(format!("unknown ego-speed tag {s:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_index: u32,
    pub bbox: Option<BoundingBox>,
    pub ego_speed: Option<EgoSpeedState>,
}

/// Binary crossing label; the positive class is `Cross`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Cross,
    NotCross,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Cross => "cross",
            Label::NotCross => "not_cross",
        }
    }

    pub fn is_cross(self) -> bool {
        self == Label::Cross
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDims {
    pub width: u32,
    pub height: u32,
}

/// One evaluation unit: a tracked pedestrian in one source video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianInstance {
    pub instance_id: String,
    pub video_id: String,
    pub split: Split,
    pub event_frame: u32,
    pub ground_truth: Label,
    pub frame_dims: Option<FrameDims>,
    pub frames: Vec<FrameAnnotation>,
}

impl PedestrianInstance {
    /// Annotation for `frame_index`, if present. Frames are sorted, so this is a binary search.
    pub fn frame(&self, frame_index: u32) -> Option<&FrameAnnotation> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.frame_index)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn is_evaluable(&self) -> bool {
        self.event_frame >= MIN_EVENT_FRAME
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let id = Some(self.instance_id.clone());
        let mut push = |field: &str, reason: String, frame: Option<u32>| {
            out.push(Violation {
                instance_id: id.clone(),
                frame_index: frame,
                field: field.to_string(),
                reason,
            })
        };
        if self.instance_id.trim().is_empty() {
            push("instance_id", "must be non-empty".into(), None);
        }
        if self.video_id.trim().is_empty() {
            push("video_id", "must be non-empty".into(), None);
        }
        if !self.is_evaluable() {
            push(
                "event_frame",
                format!("must be at least {MIN_EVENT_FRAME} so that a full observation window exists"),
                None,
            );
        }
        if let Some(d) = self.frame_dims {
            if d.width == 0 || d.height == 0 {
                push("frame_dims", "width and height must be positive".into(), None);
            }
        }
        for pair in self.frames.windows(2) {
            if pair[1].frame_index == pair[0].frame_index {
                push(
                    "frames.frame_index",
                    format!("duplicate frame index {}", pair[1].frame_index),
                    Some(pair[1].frame_index),
                );
            } else if pair[1].frame_index < pair[0].frame_index {
                push(
                    "frames.frame_index",
                    "frames must be sorted ascending".into(),
                    Some(pair[1].frame_index),
                );
            }
        }
        for f in &self.frames {
            if let Some(b) = &f.bbox {
                for (field, reason) in b.violations(self.frame_dims) {
                    push(field, reason, Some(f.frame_index));
                }
            }
        }
        out
    }
}

/// One violated manifest invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub instance_id: Option<String>,
    pub frame_index: Option<u32>,
    pub field: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)?;
        match (&self.instance_id, self.frame_index) {
            (Some(id), Some(fr)) => write!(f, " (instance {id}, frame {fr})"),
            (Some(id), None) => write!(f, " (instance {id})"),
            (None, Some(fr)) => write!(f, " (frame {fr})"),
            (None, None) => Ok(()),
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("cannot read manifest {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation: {}", join_violations(.0))]
    SchemaViolation(Vec<Violation>),
    #[error("duplicate instance id {0:?}")]
    DuplicateInstanceId(String),
}

impl ManifestError {
    fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ManifestError::SchemaViolation(vec![Violation {
            instance_id: None,
            frame_index: None,
            field: field.into(),
            reason: reason.into(),
        }])
    }
}

/// The canonical dataset document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub fps: u32,
    pub source: String,
    pub instances: Vec<PedestrianInstance>,
}

impl DatasetManifest {
    pub fn new(source: impl Into<String>, instances: Vec<PedestrianInstance>) -> Self {
        Self {
            fps: FPS,
            source: source.into(),
            instances,
        }
    }

    /// Checks every invariant, reporting all violations at once.
    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = HashSet::new();
        for inst in &self.instances {
            if !seen.insert(inst.instance_id.as_str()) {
                return Err(ManifestError::DuplicateInstanceId(inst.instance_id.clone()));
            }
        }
        let mut violations = Vec::new();
        if self.fps != FPS {
            violations.push(Violation {
                instance_id: None,
                frame_index: None,
                field: "fps".into(),
                reason: format!("must be {FPS}"),
            });
        }
        for inst in &self.instances {
            violations.extend(inst.violations());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ManifestError::SchemaViolation(violations))
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ManifestError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let manifest: DatasetManifest = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ManifestError::schema(path, e.into_inner().to_string())
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    /// Pretty JSON with a trailing newline; the inverse of [`parse_manifest`].
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        crate::fsutil::write_atomic(path, self.to_json().as_bytes())
    }

    /// Instances of `split`, sorted by instance id.
    pub fn filter_split(&self, split: Split) -> Vec<&PedestrianInstance> {
        filter_split(self, split)
    }
}

/// Reads and validates a canonical manifest.
pub fn parse_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ManifestError::FileNotFound(path.to_path_buf())
        } else {
            ManifestError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    DatasetManifest::from_json_str(&text)
}

pub fn filter_split(manifest: &DatasetManifest, split: Split) -> Vec<&PedestrianInstance> {
    let mut out: Vec<_> = manifest.instances.iter().filter(|i| i.split == split).collect();
    out.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn instance(id: &str, split: Split) -> PedestrianInstance {
        PedestrianInstance {
            instance_id: id.into(),
            video_id: "video_0001".into(),
            split,
            event_frame: 120,
            ground_truth: Label::Cross,
            frame_dims: Some(FrameDims { width: 1920, height: 1080 }),
            frames: (75..=90)
                .map(|i| FrameAnnotation {
                    frame_index: i,
                    bbox: Some(BoundingBox::new(412.0, 230.0, 58.0, 140.0)),
                    ego_speed: Some(EgoSpeedState::Decelerating),
                })
                .collect(),
        }
    }

    #[test]
    fn single_valid_instance() {
        let m = DatasetManifest::new("unit", vec![instance("A", Split::Test)]);
        let parsed = DatasetManifest::from_json_str(&m.to_json()).unwrap();
        assert_eq!(parsed.instances.len(), 1);
        assert_eq!(parsed.fps, 30);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let m = DatasetManifest::new("unit", vec![instance("A", Split::Test), instance("A", Split::Train)]);
        match DatasetManifest::from_json_str(&m.to_json()) {
            Err(ManifestError::DuplicateInstanceId(id)) => assert_eq!(id, "A"),
            other => panic!("expected duplicate id, got {other:?}"),
        }
    }

    #[test]
    fn zero_width_box_rejected() {
        let mut inst = instance("A", Split::Test);
        inst.frames[3].bbox.as_mut().unwrap().w = 0.0;
        let m = DatasetManifest::new("unit", vec![inst]);
        match DatasetManifest::from_json_str(&m.to_json()) {
            Err(ManifestError::SchemaViolation(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].field, "bbox.w");
                assert_eq!(v[0].reason, "must be positive");
                assert_eq!(v[0].frame_index, Some(78));
            }
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn all_violations_are_listed() {
        let mut inst = instance("A", Split::Test);
        inst.event_frame = 10;
        inst.frames[0].bbox = Some(BoundingBox::new(-1.0, 0.0, 0.0, 2000.0));
        let mut m = DatasetManifest::new("unit", vec![inst]);
        m.fps = 25;
        let Err(ManifestError::SchemaViolation(v)) = m.validate() else {
            panic!("expected violations")
        };
        let fields: Vec<_> = v.iter().map(|v| v.field.as_str()).collect();
        for expected in ["fps", "event_frame", "bbox.w", "bbox.x", "bbox.y+h"] {
            assert!(fields.contains(&expected), "{expected} missing from {fields:?}");
        }
    }

    #[test]
    fn unsorted_frames_rejected() {
        let mut inst = instance("A", Split::Test);
        inst.frames.swap(0, 1);
        assert!(matches!(
            DatasetManifest::new("u", vec![inst]).validate(),
            Err(ManifestError::SchemaViolation(_))
        ));
    }

    #[test]
    fn type_errors_carry_json_path() {
        let text = r#"{"fps":30,"source":"x","instances":[{"instance_id":"A","video_id":"v","split":"test",
            "event_frame":120,"ground_truth":"maybe","frame_dims":null,"frames":[]}]}"#;
        let Err(ManifestError::SchemaViolation(v)) = DatasetManifest::from_json_str(text) else {
            panic!()
        };
        assert_eq!(v[0].field, "instances[0].ground_truth");
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            parse_manifest(Path::new("/nonexistent/manifest.json")),
            Err(ManifestError::FileNotFound(_))
        ));
    }

    #[test]
    fn filter_split_selects_and_sorts() {
        let m = DatasetManifest::new(
            "u",
            vec![instance("C", Split::Test), instance("B", Split::Train), instance("A", Split::Test)],
        );
        let ids: Vec<_> = filter_split(&m, Split::Test).iter().map(|i| i.instance_id.as_str()).collect();
        assert_eq!(ids, ["A", "C"]);
        assert!(filter_split(&m, Split::Val).is_empty());
    }

    #[test]
    fn ego_speed_vocabulary_round_trips() {
        for tag in EgoSpeedState::ALL {
            assert_eq!(tag.as_str().parse::<EgoSpeedState>().unwrap(), tag);
            let json = serde_json::to_string(&tag).unwrap();
            assert_eq!(json, format!("\"{}\"", tag.as_str()));
        }
        assert_eq!("moving_slow".parse::<EgoSpeedState>().unwrap(), EgoSpeedState::MovingSlow);
        assert!("warp".parse::<EgoSpeedState>().is_err());
    }

    fn arb_instance() -> impl Strategy<Value = PedestrianInstance> {
        (
            "[a-z0-9_]{1,12}",
            prop::sample::select(vec![Split::Train, Split::Val, Split::Test]),
            45u32..5000,
            any::<bool>(),
            prop::collection::btree_map(
                0u32..6000,
                (
                    prop::option::of((0u32..1800, 0u32..1000, 1u32..120, 1u32..80)),
                    prop::option::of(prop::sample::select(EgoSpeedState::ALL.to_vec())),
                ),
                0..20,
            ),
        )
            .prop_map(|(id, split, event, cross, frames)| PedestrianInstance {
                instance_id: id,
                video_id: "video_0007".into(),
                split,
                event_frame: event,
                ground_truth: if cross { Label::Cross } else { Label::NotCross },
                frame_dims: Some(FrameDims { width: 1920, height: 1080 }),
                frames: frames
                    .into_iter()
                    .map(|(i, (b, s))| FrameAnnotation {
                        frame_index: i,
                        bbox: b.map(|(x, y, w, h)| BoundingBox::new(x as f64 + 0.5, y as f64, w as f64, h as f64)),
                        ego_speed: s,
                    })
                    .collect(),
            })
    }

    proptest! {
        #[test]
        fn manifest_round_trip(insts in prop::collection::vec(arb_instance(), 0..6)) {
            let mut seen = HashSet::new();
            let insts: Vec<_> = insts.into_iter().filter(|i| seen.insert(i.instance_id.clone())).collect();
            let m = DatasetManifest::new("prop", insts);
            let back = DatasetManifest::from_json_str(&m.to_json()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
