//! External media tool invocation and clip packaging.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::ImageFormat;
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{frame_file_name, ClipBundle, ClipContainer, ClipError, FrameSet, ObservationWindow};
use crate::digest::sha256_hex;
use crate::fsutil::write_atomic;
use crate::WINDOW_LEN;

/// Decodes `{count}` frames starting at `{start_frame}` into `{output}/00000.png`, ...
pub const DEFAULT_DECODE_TEMPLATE: &str = "ffmpeg -nostdin -v error -i {input} \
     -vf 'select=gte(n\\,{start_frame})' -fps_mode passthrough -frames:v {count} \
     -start_number 0 {output}/%05d.png";

/// Encodes `{input}/00000.png`, ... into an H.264 MP4 at `{output}` with
/// timestamps and container metadata normalized so equal frames give equal bytes.
pub const DEFAULT_ENCODE_TEMPLATE: &str = "ffmpeg -nostdin -v error -y -framerate {fps} -start_number 0 \
     -i {input}/%05d.png -frames:v {count} -c:v libx264 -preset medium -crf 18 -pix_fmt yuv420p \
     -threads 1 -map_metadata -1 -fflags +bitexact -flags:v +bitexact -flags:a +bitexact -an -f mp4 {output}";

/// Command templates for the external media tool.
///
/// Templates are split with POSIX shell quoting rules and the placeholders
/// `{input}`, `{start_frame}`, `{count}`, `{fps}`, `{output}` are substituted
/// per argument, so paths never pass through a shell unless the template
/// itself invokes one. Exit status 0 means success.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediaTool {
    pub decode_template: String,
    pub encode_template: String,
    /// Parent directory for per-task scratch space; system temp when unset.
    pub scratch_root: Option<PathBuf>,
}

impl Default for MediaTool {
    fn default() -> Self {
        Self {
            decode_template: DEFAULT_DECODE_TEMPLATE.into(),
            encode_template: DEFAULT_ENCODE_TEMPLATE.into(),
            scratch_root: None,
        }
    }
}

enum ToolError {
    NotFound(String),
    Failed(String),
}

impl ToolError {
    fn message(self) -> String {
        match self {
            ToolError::NotFound(p) => format!("tool not found: {p}"),
            ToolError::Failed(m) => m,
        }
    }
}

impl MediaTool {
    pub(crate) fn scratch_dir(&self) -> Result<tempfile::TempDir, ClipError> {
        match &self.scratch_root {
            Some(root) => {
                std::fs::create_dir_all(root).map_err(|e| ClipError::io(root, e))?;
                tempfile::tempdir_in(root).map_err(|e| ClipError::io(root, e))
            }
            None => tempfile::tempdir().map_err(|e| ClipError::io(Path::new("<tmp>"), e)),
        }
    }

    pub(crate) fn decode(&self, input: &Path, window: &ObservationWindow, output: &Path) -> Result<(), ClipError> {
        let vars = [
            ("input", input.display().to_string()),
            ("start_frame", window.start_frame.to_string()),
            ("count", window.length.to_string()),
            ("fps", crate::FPS.to_string()),
            ("output", output.display().to_string()),
        ];
        run_template(&self.decode_template, &vars).map_err(|e| ClipError::DecoderFailure(e.message()))
    }

    fn encode(&self, input_dir: &Path, start: u32, count: usize, fps: u32, output: &Path) -> Result<(), ClipError> {
        let vars = [
            ("input", input_dir.display().to_string()),
            ("start_frame", start.to_string()),
            ("count", count.to_string()),
            ("fps", fps.to_string()),
            ("output", output.display().to_string()),
        ];
        run_template(&self.encode_template, &vars).map_err(|e| ClipError::EncoderFailure(e.message()))
    }
}

fn substitute(arg: &str, vars: &[(&str, String)]) -> String {
    vars.iter()
        .fold(arg.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

fn run_template(template: &str, vars: &[(&str, String)]) -> Result<(), ToolError> {
    let argv = shlex::split(template).ok_or_else(|| ToolError::Failed(format!("unparseable command template {template:?}")))?;
    let Some((program, args)) = argv.split_first() else {
        return Err(ToolError::Failed("empty command template".into()));
    };
    let program = substitute(program, vars);
    let args: Vec<String> = args.iter().map(|a| substitute(a, vars)).collect();
    debug!(%program, ?args, "running media tool");
    let out = Command::new(&program).args(&args).output().map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ToolError::NotFound(program.clone())
        } else {
            ToolError::Failed(format!("cannot start {program}: {e}"))
        }
    })?;
    if out.status.success() {
        return Ok(());
    }
    let mut diag = String::from_utf8_lossy(&out.stderr).trim().to_string();
    let stdout = String::from_utf8_lossy(&out.stdout);
    if !stdout.trim().is_empty() {
        diag.push('\n');
        diag.push_str(stdout.trim());
    }
    Err(ToolError::Failed(format!("{program} exited with {}: {diag}", out.status)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipFormat {
    /// Single compressed video via the encode template.
    Video,
    /// Deterministic tar of PNG frames, for backends that take image lists.
    #[default]
    FrameSequence,
}

fn png_bytes(img: &image::RgbImage) -> Result<Vec<u8>, ClipError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| ClipError::Image {
        path: PathBuf::from("<memory>"),
        message: e.to_string(),
    })?;
    Ok(buf.into_inner())
}

fn frame_tar(frame_set: &FrameSet) -> Result<Vec<u8>, ClipError> {
    let mut builder = tar::Builder::new(Vec::new());
    builder.mode(tar::HeaderMode::Deterministic);
    for f in &frame_set.frames {
        let bytes = png_bytes(&f.image)?;
        let mut header = tar::Header::new_ustar();
        header.set_size(bytes.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_uid(0);
        header.set_gid(0);
        builder
            .append_data(&mut header, frame_file_name(f.index), bytes.as_slice())
            .map_err(|e| ClipError::EncoderFailure(format!("tar: {e}")))?;
    }
    builder
        .into_inner()
        .map_err(|e| ClipError::EncoderFailure(format!("tar: {e}")))
}

/// Reads back the PNG frames of a [`ClipContainer::FrameTar`] clip in order.
pub fn read_frame_tar(bytes: &[u8]) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    let mut archive = tar::Archive::new(bytes);
    let mut out = Vec::new();
    for entry in archive.entries()? {
        let mut entry = entry?;
        let name = entry.path()?.display().to_string();
        let mut data = Vec::new();
        std::io::Read::read_to_end(&mut entry, &mut data)?;
        out.push((name, data));
    }
    Ok(out)
}

/// Packages `frame_set` under `out_dir/<digest[0..2]>/<digest>.<ext>`.
pub fn package_clip(
    frame_set: &FrameSet,
    fps: u32,
    format: ClipFormat,
    tool: &MediaTool,
    out_dir: &Path,
) -> Result<ClipBundle, ClipError> {
    frame_set.check_complete(WINDOW_LEN as usize)?;
    let (bytes, container) = match format {
        ClipFormat::FrameSequence => (frame_tar(frame_set)?, ClipContainer::FrameTar),
        ClipFormat::Video => {
            let scratch = tool.scratch_dir()?;
            for (k, f) in frame_set.frames.iter().enumerate() {
                let p = scratch.path().join(frame_file_name(k as u32));
                f.image.save(&p).map_err(|e| ClipError::Image {
                    path: p.clone(),
                    message: e.to_string(),
                })?;
            }
            let out = scratch.path().join("clip.mp4");
            let start = frame_set.frames[0].index;
            tool.encode(scratch.path(), start, frame_set.frames.len(), fps, &out)?;
            let bytes = std::fs::read(&out)
                .map_err(|_| ClipError::EncoderFailure(format!("encoder produced no file at {}", out.display())))?;
            if bytes.is_empty() {
                return Err(ClipError::EncoderFailure("encoder produced an empty file".into()));
            }
            (bytes, ClipContainer::Mp4)
        }
    };
    let digest = sha256_hex(&bytes);
    let media_ref = out_dir
        .join(&digest[..2])
        .join(format!("{digest}.{}", container.extension()));
    if !media_ref.is_file() {
        write_atomic(&media_ref, &bytes).map_err(|e| ClipError::io(&media_ref, e))?;
    }
    Ok(ClipBundle {
        media_ref,
        mode: frame_set.mode.into(),
        fps,
        container,
        frame_count: frame_set.frames.len() as u32,
        content_digest: digest,
    })
}
