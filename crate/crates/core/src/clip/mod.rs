//! Observation windows and clip materialization.
//!
//! A clip is built in three steps: [`extract_frames`] reads the 16 window
//! frames (from a numbered frame directory or through an external decoder),
//! [`render_overlay`] optionally draws the pedestrian box, and
//! [`package_clip`] writes a content-addressed media file.

mod media;
mod overlay;

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::dataset::{BoundingBox, PedestrianInstance};
use crate::{TTE_FRAMES, WINDOW_LEN};

pub use media::{
    package_clip, read_frame_tar, ClipFormat, MediaTool, DEFAULT_DECODE_TEMPLATE, DEFAULT_ENCODE_TEMPLATE,
};
pub use overlay::{render_overlay, OverlayStyle};

#[derive(Debug, thiserror::Error)]
pub enum ClipError {
    #[error("event frame {0} leaves no room for a full observation window")]
    InsufficientHistory(u32),
    #[error("no frame directory or video found for {0}")]
    SourceNotFound(String),
    #[error("frame {0} is missing from the source")]
    MissingFrame(u32),
    #[error("decoder failed: {0}")]
    DecoderFailure(String),
    #[error("encoder failed: {0}")]
    EncoderFailure(String),
    #[error("bounding box on frame {0} extends outside the raster")]
    BoxOutOfBounds(u32),
    #[error("overlay requires a raw frame set")]
    AlreadyAnnotated,
    #[error("frame set has {got} frames, expected {expected}")]
    IncompleteFrameSet { got: usize, expected: usize },
    #[error("cannot decode image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ClipError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ClipError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// The 16 frames ending `tte_frames` before the event; `end_frame` is t0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub start_frame: u32,
    pub end_frame: u32,
    pub tte_frames: u32,
    pub length: u32,
}

impl ObservationWindow {
    pub fn frames(&self) -> impl Iterator<Item = u32> {
        self.start_frame..=self.end_frame
    }

    pub fn event_frame(&self) -> u32 {
        self.end_frame + self.tte_frames
    }
}

/// Window with the default horizon (30 frames) and length (16 frames).
pub fn window_for(event_frame: u32) -> Result<ObservationWindow, ClipError> {
    compute_window(event_frame, TTE_FRAMES, WINDOW_LEN)
}

pub fn compute_window(event_frame: u32, tte: u32, length: u32) -> Result<ObservationWindow, ClipError> {
    if length == 0 {
        return Err(ClipError::InsufficientHistory(event_frame));
    }
    let needed = tte + length - 1;
    if event_frame < needed {
        return Err(ClipError::InsufficientHistory(event_frame));
    }
    let end_frame = event_frame - tte;
    Ok(ObservationWindow {
        start_frame: end_frame + 1 - length,
        end_frame,
        tte_frames: tte,
        length,
    })
}

/// Annotated box for every window frame, `None` where the frame has no box.
pub fn window_boxes(instance: &PedestrianInstance, window: &ObservationWindow) -> Vec<Option<BoundingBox>> {
    window
        .frames()
        .map(|i| instance.frame(i).and_then(|f| f.bbox))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameMode {
    Raw,
    Annotated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u32,
    pub image: RgbImage,
}

/// Rasters for one window, in window order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub frames: Vec<Frame>,
    pub mode: FrameMode,
}

impl FrameSet {
    pub fn check_complete(&self, expected: usize) -> Result<(), ClipError> {
        if self.frames.len() != expected {
            return Err(ClipError::IncompleteFrameSet {
                got: self.frames.len(),
                expected,
            });
        }
        Ok(())
    }
}

/// Where the frames of a video come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameSource {
    /// Directory of `%05d.png` files named by 0-based frame index.
    Directory(PathBuf),
    /// Container video decoded by the configured media tool.
    Video(PathBuf),
}

impl FrameSource {
    /// Prefers `<frames_root>/<video_id>/frames/`, falling back to
    /// `<videos_root>/<video_id>.<ext>`.
    pub fn locate(
        video_id: &str,
        frames_root: Option<&Path>,
        videos_root: Option<&Path>,
        video_ext: &str,
    ) -> Option<FrameSource> {
        if let Some(root) = frames_root {
            let dir = root.join(video_id).join("frames");
            if dir.is_dir() {
                return Some(FrameSource::Directory(dir));
            }
        }
        if let Some(root) = videos_root {
            let file = root.join(format!("{video_id}.{video_ext}"));
            if file.is_file() {
                return Some(FrameSource::Video(file));
            }
        }
        None
    }
}

pub fn frame_file_name(index: u32) -> String {
    format!("{index:05}.png")
}

fn load_png(path: &Path, index: u32) -> Result<RgbImage, ClipError> {
    if !path.is_file() {
        return Err(ClipError::MissingFrame(index));
    }
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| ClipError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Reads the window's 16 frames in order.
pub fn extract_frames(
    source: &FrameSource,
    window: &ObservationWindow,
    tool: &MediaTool,
) -> Result<FrameSet, ClipError> {
    let frames = match source {
        FrameSource::Directory(dir) => window
            .frames()
            .map(|index| {
                Ok(Frame {
                    index,
                    image: load_png(&dir.join(frame_file_name(index)), index)?,
                })
            })
            .collect::<Result<Vec<_>, ClipError>>()?,
        FrameSource::Video(path) => {
            let scratch = tool.scratch_dir()?;
            tool.decode(path, window, scratch.path())?;
            // the decoder numbers its output from 0
            window
                .frames()
                .enumerate()
                .map(|(k, index)| {
                    let p = scratch.path().join(frame_file_name(k as u32));
                    Ok(Frame {
                        index,
                        image: load_png(&p, index)?,
                    })
                })
                .collect::<Result<Vec<_>, ClipError>>()?
        }
    };
    Ok(FrameSet {
        frames,
        mode: FrameMode::Raw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    Unannotated,
    Annotated,
}

impl From<FrameMode> for ClipMode {
    fn from(m: FrameMode) -> Self {
        match m {
            FrameMode::Raw => ClipMode::Unannotated,
            FrameMode::Annotated => ClipMode::Annotated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipContainer {
    Mp4,
    FrameTar,
}

impl ClipContainer {
    pub fn extension(self) -> &'static str {
        match self {
            ClipContainer::Mp4 => "mp4",
            ClipContainer::FrameTar => "tar",
        }
    }

    pub fn mime_type(self) -> &'static str {
        match self {
            ClipContainer::Mp4 => "video/mp4",
            ClipContainer::FrameTar => "application/x-tar",
        }
    }
}

/// A packaged clip, addressed by the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipBundle {
    pub media_ref: PathBuf,
    pub mode: ClipMode,
    pub fps: u32,
    pub container: ClipContainer,
    pub frame_count: u32,
    pub content_digest: String,
}

impl ClipBundle {
    pub fn read_bytes(&self) -> std::io::Result<Vec<u8>> {
        std::fs::read(&self.media_ref)
    }
}
