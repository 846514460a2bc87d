//! Adapter from JAAD-style per-video XML annotations to the canonical manifest.
//!
//! Expected layout (any nesting under the annotation root):
//!
//! ```text
//! <root>/**/<video_id>.xml           pedestrian tracks
//! <root>/**/<video_id>_vehicle.xml   per-frame ego-vehicle action
//! ```
//!
//! Pedestrian tracks carry `<box frame xtl ytl xbr ybr outside>` elements with
//! nested `<attribute name="id">` and `<attribute name="cross">` children. Only
//! tracks labelled `pedestrian` (the behaviour-annotated subset) are used.
//!
//! Labelling: the first frame whose `cross` attribute reads `crossing` is the
//! event frame and the instance is `cross`; a track that never crosses is
//! `not_cross` with its last annotated frame as the event frame.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tracing::{debug, warn};
use walkdir::WalkDir;

use super::{
    BoundingBox, DatasetManifest, EgoSpeedState, FrameAnnotation, FrameDims, Label, PedestrianInstance, Split,
};
use crate::MIN_EVENT_FRAME;

#[derive(Debug, thiserror::Error)]
pub enum AdaptError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed XML in {}: {message}", path.display())]
    Xml { path: PathBuf, message: String },
    #[error("missing annotation field {name:?} in {video_id}")]
    MissingAnnotationField { video_id: String, name: String },
    #[error("invalid annotation in {video_id}: {message}")]
    InvalidAnnotation { video_id: String, message: String },
    #[error("split listing names video {0:?} but no annotation file exists for it")]
    UnknownSplitVideo(String),
    #[error("invalid split listing: {0}")]
    InvalidSplitSpec(String),
    #[error("no evaluable pedestrian instances found")]
    NoEvaluableInstances,
}

impl AdaptError {
    fn missing(video_id: &str, name: &str) -> Self {
        AdaptError::MissingAnnotationField {
            video_id: video_id.to_string(),
            name: name.to_string(),
        }
    }
}

/// Video ids per split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub val: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl SplitSpec {
    /// Loads either a JSON document `{"train": [...], "val": [...], "test": [...]}`
    /// or a directory holding `train.txt`, `val.txt`, `test.txt` with one id per line.
    pub fn load(path: &Path) -> Result<Self, AdaptError> {
        let io = |source| AdaptError::Io {
            path: path.to_path_buf(),
            source,
        };
        let spec = if path.is_dir() {
            let read = |name: &str| -> Result<Vec<String>, AdaptError> {
                let p = path.join(name);
                if !p.exists() {
                    return Ok(Vec::new());
                }
                let text = std::fs::read_to_string(&p).map_err(|source| AdaptError::Io { path: p, source })?;
                Ok(text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(String::from)
                    .collect())
            };
            SplitSpec {
                train: read("train.txt")?,
                val: read("val.txt")?,
                test: read("test.txt")?,
            }
        } else {
            let text = std::fs::read_to_string(path).map_err(io)?;
            serde_json::from_str(&text).map_err(|e| AdaptError::InvalidSplitSpec(e.to_string()))?
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), AdaptError> {
        let mut seen = HashMap::new();
        for (split, v) in self.entries() {
            if let Some(prev) = seen.insert(v, split) {
                return Err(AdaptError::InvalidSplitSpec(format!(
                    "video {v:?} listed in both {prev} and {split}"
                )));
            }
        }
        Ok(())
    }

    fn entries(&self) -> impl Iterator<Item = (Split, &str)> {
        [(Split::Train, &self.train), (Split::Val, &self.val), (Split::Test, &self.test)]
            .into_iter()
            .flat_map(|(s, ids)| ids.iter().map(move |id| (s, id.as_str())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExclusionReason {
    /// Event frame too early for a full window.
    InsufficientHistory { event_frame: u32 },
    /// Track had no usable boxes.
    NoBoxes,
}

impl ExclusionReason {
    pub fn code(&self) -> &'static str {
        match self {
            ExclusionReason::InsufficientHistory { .. } => "insufficient-history",
            ExclusionReason::NoBoxes => "no-boxes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub instance_id: String,
    pub video_id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub manifest: DatasetManifest,
    pub excluded: Vec<Exclusion>,
}

/// Converts an annotation tree into a validated manifest.
pub fn adapt_jaad(annotation_dir: &Path, splits: &SplitSpec) -> Result<AdaptOutcome, AdaptError> {
    let files = index_xml_files(annotation_dir)?;
    let mut instances = Vec::new();
    let mut excluded = Vec::new();

    for (split, video_id) in splits.entries() {
        let Some(ann_path) = files.get(video_id) else {
            return Err(AdaptError::UnknownSplitVideo(video_id.to_string()));
        };
        let speeds = match files.get(&format!("{video_id}_vehicle")) {
            Some(p) => parse_vehicle(p, video_id)?,
            None => return Err(AdaptError::missing(video_id, "ego_speed")),
        };
        let video = parse_video(ann_path, video_id)?;
        let mut used_ids: HashMap<String, usize> = HashMap::new();

        for track in video.tracks {
            let n = used_ids.entry(track.ped_id.clone()).or_insert(0);
            *n += 1;
            let instance_id = if *n == 1 {
                format!("{video_id}:{}", track.ped_id)
            } else {
                format!("{video_id}:{}#{n}", track.ped_id)
            };
            match build_instance(&instance_id, video_id, split, video.dims, track, &speeds) {
                Ok(inst) => instances.push(inst),
                Err(reason) => {
                    warn!(instance = %instance_id, reason = reason.code(), "excluding pedestrian instance");
                    excluded.push(Exclusion {
                        instance_id,
                        video_id: video_id.to_string(),
                        reason,
                    });
                }
            }
        }
    }

    if instances.is_empty() {
        return Err(AdaptError::NoEvaluableInstances);
    }
    let manifest = DatasetManifest::new(format!("jaad-xml:{}", annotation_dir.display()), instances);
    manifest.validate().map_err(|e| AdaptError::InvalidAnnotation {
        video_id: "*".into(),
        message: e.to_string(),
    })?;
    Ok(AdaptOutcome { manifest, excluded })
}

fn index_xml_files(root: &Path) -> Result<HashMap<String, PathBuf>, AdaptError> {
    let mut out = HashMap::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| AdaptError::Io {
            path: root.to_path_buf(),
            source: e.into(),
        })?;
        let p = entry.path();
        if p.extension().and_then(|e| e.to_str()) == Some("xml") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.entry(stem.to_string()).or_insert_with(|| p.to_path_buf());
            }
        }
    }
    debug!(count = out.len(), "indexed annotation files");
    Ok(out)
}

struct RawBox {
    frame: u32,
    bbox: BoundingBox,
    crossing: Option<bool>,
}

struct Track {
    ped_id: String,
    boxes: Vec<RawBox>,
}

struct VideoAnnotations {
    dims: Option<FrameDims>,
    tracks: Vec<Track>,
}

fn read_xml(path: &Path) -> Result<String, AdaptError> {
    std::fs::read_to_string(path).map_err(|source| AdaptError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn xml_err(path: &Path, e: roxmltree::Error) -> AdaptError {
    AdaptError::Xml {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn parse_vehicle(path: &Path, video_id: &str) -> Result<BTreeMap<u32, EgoSpeedState>, AdaptError> {
    let text = read_xml(path)?;
    let doc = roxmltree::Document::parse(&text).map_err(|e| xml_err(path, e))?;
    let mut out = BTreeMap::new();
    for node in doc.descendants().filter(|n| n.has_tag_name("frame")) {
        let id = node.attribute("id").ok_or_else(|| AdaptError::missing(video_id, "frame.id"))?;
        let action = node
            .attribute("action")
            .ok_or_else(|| AdaptError::missing(video_id, "ego_speed"))?;
        let frame: u32 = id.parse().map_err(|_| AdaptError::InvalidAnnotation {
            video_id: video_id.into(),
            message: format!("vehicle frame id {id:?} is not a frame index"),
        })?;
        let state: EgoSpeedState = action.parse().map_err(|m| AdaptError::InvalidAnnotation {
            video_id: video_id.into(),
            message: m,
        })?;
        out.insert(frame, state);
    }
    if out.is_empty() {
        return Err(AdaptError::missing(video_id, "ego_speed"));
    }
    Ok(out)
}

fn parse_video(path: &Path, video_id: &str) -> Result<VideoAnnotations, AdaptError> {
    let text = read_xml(path)?;
    let doc = roxmltree::Document::parse(&text).map_err(|e| xml_err(path, e))?;

    let dims = doc.descendants().find(|n| n.has_tag_name("original_size")).and_then(|size| {
        let child = |name| {
            size.children()
                .find(|c| c.has_tag_name(name))
                .and_then(|c| c.text())
                .and_then(|t| t.trim().parse::<u32>().ok())
        };
        Some(FrameDims {
            width: child("width")?,
            height: child("height")?,
        })
    });

    let mut tracks = Vec::new();
    for (k, track) in doc
        .descendants()
        .filter(|n| n.has_tag_name("track") && n.attribute("label") == Some("pedestrian"))
        .enumerate()
    {
        let mut ped_id = None;
        let mut boxes = Vec::new();
        for b in track.children().filter(|c| c.has_tag_name("box")) {
            if b.attribute("outside") == Some("1") {
                continue;
            }
            let num = |name: &str| -> Result<f64, AdaptError> {
                let raw = b.attribute(name).ok_or_else(|| AdaptError::missing(video_id, name))?;
                raw.trim().parse::<f64>().map_err(|_| AdaptError::InvalidAnnotation {
                    video_id: video_id.into(),
                    message: format!("{name}={raw:?} is not a number"),
                })
            };
            let frame = num("frame")?;
            if frame < 0.0 || frame.fract() != 0.0 {
                return Err(AdaptError::InvalidAnnotation {
                    video_id: video_id.into(),
                    message: format!("frame={frame} is not a frame index"),
                });
            }
            let (xtl, ytl, xbr, ybr) = (num("xtl")?, num("ytl")?, num("xbr")?, num("ybr")?);
            let mut crossing = None;
            for attr in b.children().filter(|c| c.has_tag_name("attribute")) {
                let value = attr.text().unwrap_or("").trim();
                match attr.attribute("name") {
                    Some("id") if ped_id.is_none() && !value.is_empty() => ped_id = Some(value.to_string()),
                    Some("cross") => crossing = Some(value == "crossing"),
                    _ => {}
                }
            }
            boxes.push(RawBox {
                frame: frame as u32,
                bbox: BoundingBox::new(xtl, ytl, xbr - xtl, ybr - ytl),
                crossing,
            });
        }
        if boxes.iter().all(|b| b.crossing.is_none()) && !boxes.is_empty() {
            return Err(AdaptError::missing(video_id, "cross"));
        }
        boxes.sort_by_key(|b| b.frame);
        boxes.dedup_by_key(|b| b.frame);
        tracks.push(Track {
            ped_id: ped_id.unwrap_or_else(|| format!("track{k}")),
            boxes,
        });
    }
    Ok(VideoAnnotations { dims, tracks })
}

/// Clips a box to the frame; `None` if nothing positive-area remains.
fn clamp_box(b: BoundingBox, dims: Option<FrameDims>) -> Option<BoundingBox> {
    let (max_x, max_y) = dims.map_or((f64::INFINITY, f64::INFINITY), |d| (d.width as f64, d.height as f64));
    let x0 = b.x.clamp(0.0, max_x);
    let y0 = b.y.clamp(0.0, max_y);
    let x1 = (b.x + b.w).clamp(0.0, max_x);
    let y1 = (b.y + b.h).clamp(0.0, max_y);
    let out = BoundingBox::new(x0, y0, x1 - x0, y1 - y0);
    out.violations(dims).is_empty().then_some(out)
}

fn build_instance(
    instance_id: &str,
    video_id: &str,
    split: Split,
    dims: Option<FrameDims>,
    track: Track,
    speeds: &BTreeMap<u32, EgoSpeedState>,
) -> Result<PedestrianInstance, ExclusionReason> {
    let last = track.boxes.last().ok_or(ExclusionReason::NoBoxes)?.frame;
    let (event_frame, ground_truth) = match track.boxes.iter().find(|b| b.crossing == Some(true)) {
        Some(b) => (b.frame, Label::Cross),
        None => (last, Label::NotCross),
    };
    if event_frame < MIN_EVENT_FRAME {
        return Err(ExclusionReason::InsufficientHistory { event_frame });
    }
    let frames = track
        .boxes
        .into_iter()
        .take_while(|b| b.frame <= event_frame)
        .map(|b| FrameAnnotation {
            frame_index: b.frame,
            bbox: clamp_box(b.bbox, dims),
            ego_speed: speeds.get(&b.frame).copied(),
        })
        .collect();
    Ok(PedestrianInstance {
        instance_id: instance_id.to_string(),
        video_id: video_id.to_string(),
        split,
        event_frame,
        ground_truth,
        frame_dims: dims,
        frames,
    })
}
