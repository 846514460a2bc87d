#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use bfpip_core::backend::{write_script, ScriptEntry};
use bfpip_core::clip::frame_file_name;
use bfpip_core::dataset::FrameDims;
use bfpip_core::prompt::{CROSS_LITERAL, NOT_CROSS_LITERAL};
use bfpip_core::{
    BoundingBox, DatasetManifest, EgoSpeedState, FrameAnnotation, Label, ModalityConfig, PedestrianInstance, Split,
};
use image::{Rgb, RgbImage};
use serde_json::{json, Value};

pub const WIDTH: u32 = 96;
pub const HEIGHT: u32 = 54;
pub const EVENT: u32 = 60;
pub const VIDEO: &str = "syn";

/// Runs `f`, printing one PASS/FAIL line for the acceptance criterion.
pub fn criterion(n: u32, name: &str, f: impl FnOnce() + std::panic::UnwindSafe) {
    match std::panic::catch_unwind(f) {
        Ok(()) => println!("acceptance {n} [{name}]: PASS"),
        Err(e) => {
            println!("acceptance {n} [{name}]: FAIL");
            std::panic::resume_unwind(e);
        }
    }
}

pub fn literal(label: Label) -> &'static str {
    match label {
        Label::Cross => CROSS_LITERAL,
        Label::NotCross => NOT_CROSS_LITERAL,
    }
}

/// A pedestrian in the synthetic video. Crossing pedestrians walk toward the
/// image centre at 2 px/frame, others drift 0.2 px/frame.
pub fn instance(k: usize, truth: Label) -> PedestrianInstance {
    let dx = if truth.is_cross() { 2.0 } else { 0.2 };
    let x0 = 4.0 + (k % 20) as f64;
    let start = EVENT - 45;
    PedestrianInstance {
        instance_id: format!("{VIDEO}:p{k:03}"),
        video_id: VIDEO.into(),
        split: Split::Test,
        event_frame: EVENT,
        ground_truth: truth,
        frame_dims: Some(FrameDims {
            width: WIDTH,
            height: HEIGHT,
        }),
        frames: (start..start + 16)
            .map(|i| FrameAnnotation {
                frame_index: i,
                bbox: Some(BoundingBox::new(x0 + (i - start) as f64 * dx, 10.0, 10.0, 30.0)),
                ego_speed: Some(EgoSpeedState::ALL[(k + i as usize) % EgoSpeedState::ALL.len()]),
            })
            .collect(),
    }
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub instances: Vec<PedestrianInstance>,
}

impl Fixture {
    /// Writes 16 window frames of the synthetic video and a manifest of
    /// `truths.len()` test instances.
    pub fn new(truths: &[Label]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let frames = dir.path().join("frames").join(VIDEO).join("frames");
        std::fs::create_dir_all(&frames).unwrap();
        for i in EVENT - 45..=EVENT - 30 {
            RgbImage::from_fn(WIDTH, HEIGHT, |x, y| Rgb([(x * 2) as u8, (y * 4) as u8, (i * 8) as u8]))
                .save(frames.join(frame_file_name(i)))
                .unwrap();
        }
        let instances: Vec<_> = truths.iter().enumerate().map(|(k, &t)| instance(k, t)).collect();
        DatasetManifest::new("synthetic", instances.clone())
            .write(&dir.path().join("manifest.json"))
            .unwrap();
        Self { dir, instances }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Writes `config.json`; `predictor` and `extra` are merged into the base document.
    pub fn write_config(&self, predictor: Value, extra: Value) -> PathBuf {
        let mut doc = json!({
            "dataset": { "manifest": "manifest.json", "split": "test" },
            "clips": { "frames_root": "frames" },
            "predictor": predictor,
            "max_concurrency": 4,
        });
        if let (Some(base), Some(more)) = (doc.as_object_mut(), extra.as_object()) {
            for (k, v) in more {
                base.insert(k.clone(), v.clone());
            }
        }
        let path = self.path("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
        path
    }

    /// Writes a response script for every (instance, config, repeat).
    pub fn write_script(
        &self,
        configs: &[ModalityConfig],
        repeats: u32,
        text: impl Fn(&PedestrianInstance, ModalityConfig, u32) -> String,
    ) -> PathBuf {
        let mut entries = Vec::new();
        for inst in &self.instances {
            for &config in configs {
                for r in 0..repeats {
                    entries.push(ScriptEntry {
                        instance_id: inst.instance_id.clone(),
                        config,
                        repeat_index: r,
                        text: text(inst, config, r),
                    });
                }
            }
        }
        let path = self.path("script.jsonl");
        write_script(&path, &entries).unwrap();
        path
    }
}

pub fn bfpip(args: &[&str]) -> Output {
    bfpip_env(args, &[])
}

pub fn bfpip_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bfpip"));
    cmd.args(args).env_remove("BFPIP_API_URL").env_remove("BFPIP_API_KEY");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn bfpip")
}

pub fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "bfpip failed with {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// The `error` object from a failing invocation.
pub fn stderr_error(out: &Output) -> Value {
    assert!(!out.status.success(), "expected failure, stdout: {}", String::from_utf8_lossy(&out.stdout));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with("{\"error\""))
        .unwrap_or_else(|| panic!("no error summary in stderr: {stderr}"));
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

pub fn run_dir(summary: &Value) -> PathBuf {
    PathBuf::from(summary["run_dir"].as_str().unwrap())
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Minimal generateContent endpoint answering every request with `reply`.
/// Returns the endpoint template and a request counter.
pub fn mock_generate_content(reply: &str) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/models/{{model}}:generateContent", listener.local_addr().unwrap());
    let body = json!({ "candidates": [{ "content": { "parts": [{ "text": reply }] } }] }).to_string();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { return };
            let mut reader = BufReader::new(stream);
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        len = value.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut buf = vec![0; len];
            if reader.read_exact(&mut buf).is_err() {
                continue;
            }
            counter.fetch_add(1, Ordering::SeqCst);
            let mut stream = reader.into_inner();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    (url, hits)
}

/// A URL on a port nothing listens on.
pub fn dead_endpoint() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/models/{{model}}:generateContent", listener.local_addr().unwrap());
    drop(listener);
    url
}
